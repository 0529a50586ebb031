//! Numerical probes of the regularity estimates behind the strong rates.
//!
//! For a test function `φ` the heat-type solution
//!
//! ```text
//! v(t, x) = ∫_0^t E[φ(s, x + L_{t-s})] ds
//! ```
//!
//! has a gradient bounded by `C_0 t^{γ} ‖φ‖_{C_b^β}` with `γ = 1/2` for
//! Wiener noise and `γ = 1 - 1/α` for truncated α-stable noise. Only existence
//! of `C_0` is asserted, so the probes here check that the ratio
//! `sup_x |∇v(t, x)| / (t^γ ‖φ‖)` stays bounded as `t → 0`.
//!
//! Wiener case (`d = 1`): Gauss–Hermite in space, adaptive Gauss–Kronrod in
//! time after the substitution `t - s = w²`, which removes the `(t-s)^{-1/2}`
//! singularity of the gradient integrand. The gradient uses the Gaussian
//! integration-by-parts weight `∂_x E[φ(x + W_u)] = E[φ(x + W_u) W_u] / u`.
//!
//! Stable case (`d = 2`): Monte Carlo over truncated-stable paths with common
//! random numbers across `x`, midpoint rule in time, central differences in
//! space.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::drift::{DriftChoice, DriftSpec};
use crate::noise::{GridSpec, NoiseSpec, StepSampler};
use crate::rng::StreamFactory;
use crate::{Error, Result};

/// Gauss–Hermite rule for the weight `e^{-x²}`: `(nodes, weights)`, nodes
/// in decreasing order. Newton iteration on the orthonormal recurrence.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    const PIM4: f64 = 0.751_125_544_464_942_5; // π^{-1/4}
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    let nf = n as f64;
    let mut z = 0.0f64;
    for i in 0..m {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.855_75 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = PIM4;
            let mut p2 = 0.0;
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    (x, w)
}

const GK_NODES: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const GK_WEIGHTS: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const G7_WEIGHTS: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = GK_WEIGHTS[7] * fc;
    let mut gauss = G7_WEIGHTS[3] * fc;
    for j in 0..7 {
        let dx = h * GK_NODES[j];
        let s = f(c - dx) + f(c + dx);
        kronrod += GK_WEIGHTS[j] * s;
        if j % 2 == 1 {
            gauss += G7_WEIGHTS[j / 2] * s;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

/// Globally adaptive G7/K15 quadrature to `max(rel_tol |I|, abs_tol)`.
pub fn integrate_adaptive<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    rel_tol: f64,
    abs_tol: f64,
) -> Result<f64> {
    const MAX_INTERVALS: usize = 20_000;
    let (v, e) = gk15(&f, a, b);
    let mut pieces = vec![(a, b, v, e)];
    let (mut total, mut err) = (v, e);
    loop {
        let tol = (rel_tol * total.abs()).max(abs_tol);
        if err <= tol {
            return Ok(total);
        }
        if pieces.len() >= MAX_INTERVALS {
            return Err(Error::Quadrature {
                achieved: err,
                tolerance: tol,
            });
        }
        let worst = pieces
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .map(|(i, _)| i)
            .unwrap();
        let (lo, hi, v, e) = pieces.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        let (v1, e1) = gk15(&f, lo, mid);
        let (v2, e2) = gk15(&f, mid, hi);
        pieces.push((lo, mid, v1, e1));
        pieces.push((mid, hi, v2, e2));
        // Re-sum rather than update incrementally so rounding does not drift.
        total += v1 + v2 - v;
        err += e1 + e2 - e;
        if pieces.len() % 64 == 0 {
            total = pieces.iter().map(|p| p.2).sum();
            err = pieces.iter().map(|p| p.3).sum();
        }
    }
}

/// Absolute floor for quadrature tolerances, for integrals that vanish.
const ABS_TOL: f64 = 1e-13;

/// Probe of `v(t,x) = ∫_0^t E[φ(s, x + W_{t-s})] ds` in one dimension.
#[derive(Clone, Debug)]
pub struct SemigroupProbe {
    phi: DriftSpec,
    t_grid: Vec<f64>,
    x_grid: Vec<f64>,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    rel_tol: f64,
}

impl SemigroupProbe {
    pub fn new(phi: DriftSpec, t_grid: Vec<f64>, x_grid: Vec<f64>, quad_nodes: usize) -> Result<Self> {
        if phi.dim() != 1 {
            return Err(Error::InvalidProbe(format!(
                "semigroup probe works in dimension 1, got {}",
                phi.dim()
            )));
        }
        if t_grid.is_empty() || t_grid[0] <= 0.0 || t_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidProbe(
                "t_grid must be strictly positive and increasing".into(),
            ));
        }
        if x_grid.is_empty() {
            return Err(Error::InvalidProbe("x_grid is empty".into()));
        }
        if quad_nodes < 32 {
            return Err(Error::InvalidProbe(format!("need at least 32 nodes, got {quad_nodes}")));
        }
        let (nodes, weights) = gauss_hermite(quad_nodes);
        Ok(Self {
            phi,
            t_grid,
            x_grid,
            nodes,
            weights,
            rel_tol: 1e-6,
        })
    }

    pub fn with_rel_tol(mut self, rel_tol: f64) -> Self {
        self.rel_tol = rel_tol;
        self
    }

    pub fn phi(&self) -> &DriftSpec {
        &self.phi
    }

    pub fn t_grid(&self) -> &[f64] {
        &self.t_grid
    }

    pub fn x_grid(&self) -> &[f64] {
        &self.x_grid
    }

    fn phi_at(&self, s: f64, x: f64) -> f64 {
        let mut out = [0.0];
        self.phi.evaluate(s, &[x], &mut out);
        out[0]
    }

    /// `Σ_i w_i g(ξ_i) φ(s, x + √2 w ξ_i) / √π`, i.e. `E[g(Z/√2) φ(s, x + W_{w²})]`.
    fn expectation(&self, s: f64, x: f64, w: f64, weight: impl Fn(f64) -> f64) -> f64 {
        let scale = std::f64::consts::SQRT_2 * w;
        let sum: f64 = self
            .nodes
            .iter()
            .zip(&self.weights)
            .map(|(&xi, &wi)| wi * weight(xi) * self.phi_at(s, x + scale * xi))
            .sum();
        sum / PI.sqrt()
    }
}

fn check_time(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidProbe(format!("t must be positive, got {t}")))
    }
}

/// `v(t, x)` with `u = t - s = w²`: `∫_0^{√t} 2w E[φ(t - w², x + W_{w²})] dw`.
pub fn heat_value(probe: &SemigroupProbe, t: f64, x: f64) -> Result<f64> {
    check_time(t)?;
    integrate_adaptive(
        |w| 2.0 * w * probe.expectation(t - w * w, x, w, |_| 1.0),
        0.0,
        t.sqrt(),
        probe.rel_tol,
        ABS_TOL,
    )
}

/// `∂v/∂x (t, x)` from `∂_x E[φ(x + W_u)] = E[φ(x + W_u) W_u] / u`; after the
/// substitution the integrand is `2√2 E[(Z/√2) φ(t - w², x + W_{w²})]`.
pub fn heat_gradient(probe: &SemigroupProbe, t: f64, x: f64) -> Result<f64> {
    check_time(t)?;
    let c = 2.0 * std::f64::consts::SQRT_2;
    integrate_adaptive(
        |w| c * probe.expectation(t - w * w, x, w, |xi| xi),
        0.0,
        t.sqrt(),
        probe.rel_tol,
        ABS_TOL,
    )
}

/// `φ(x) = sin x` in one dimension, a smooth test function with
/// `v(t, x) = 2 (1 - e^{-t/2}) sin x`.
pub fn sine_test_function() -> DriftSpec {
    DriftSpec::custom("sin", 1, 1.0, 1.0, 1.0, 1.0, 0.0, 1.0, |_, x, out| out[0] = x[0].sin())
}

/// Largest `|heat_gradient - central difference of heat_value|` over the
/// probe's `(t, x)` grid.
pub fn gradient_fd_discrepancy(probe: &SemigroupProbe, step: f64) -> Result<f64> {
    let pairs: Vec<(f64, f64)> = probe
        .t_grid
        .iter()
        .flat_map(|&t| probe.x_grid.iter().map(move |&x| (t, x)))
        .collect();
    let diffs: Vec<Result<f64>> = pairs
        .par_iter()
        .map(|&(t, x)| {
            let g = heat_gradient(probe, t, x)?;
            let fd = (heat_value(probe, t, x + step)? - heat_value(probe, t, x - step)?) / (2.0 * step);
            Ok((g - fd).abs())
        })
        .collect();
    diffs.into_iter().try_fold(0.0f64, |acc, d| Ok(acc.max(d?)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientBoundReport {
    pub times: Vec<f64>,
    /// `R(t) = sup_x |∇v(t, x)| / (t^γ ‖φ‖_{C_b^β})`.
    pub ratios: Vec<f64>,
    pub sup_ratio: f64,
    pub median_ratio: f64,
    /// Allowed excess of the two smallest-`t` ratios over the median.
    pub slack: f64,
    pub bounded: bool,
}

impl GradientBoundReport {
    fn new(times: Vec<f64>, ratios: Vec<f64>, slack: f64) -> Self {
        let mut s = ratios.clone();
        s.sort_by(f64::total_cmp);
        let median = if s.len() % 2 == 1 {
            s[s.len() / 2]
        } else {
            0.5 * (s[s.len() / 2 - 1] + s[s.len() / 2])
        };
        let sup = s.last().copied().unwrap_or(0.0);
        let bounded = ratios.iter().all(|r| r.is_finite())
            && ratios.iter().take(2).all(|&r| r <= (1.0 + slack) * median);
        Self {
            times,
            ratios,
            sup_ratio: sup,
            median_ratio: median,
            slack,
            bounded,
        }
    }
}

/// Checks `sup_x |∂v/∂x(t, ·)| ≤ R t^{1/2} ‖φ‖` with one `R` across the grid:
/// the ratios at the two smallest times may exceed the median by at most 50%.
pub fn gradient_bound_check(probe: &SemigroupProbe) -> Result<GradientBoundReport> {
    let norm = probe.phi.holder_norm();
    let ratios: Vec<Result<f64>> = probe
        .t_grid
        .par_iter()
        .map(|&t| {
            let mut sup = 0.0f64;
            for &x in &probe.x_grid {
                sup = sup.max(heat_gradient(probe, t, x)?.abs());
            }
            Ok(if norm > 0.0 { sup / (t.sqrt() * norm) } else { 0.0 })
        })
        .collect();
    let ratios = ratios.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(GradientBoundReport::new(probe.t_grid.clone(), ratios, 0.5))
}

#[derive(Clone, Debug)]
pub struct StableProbeSpec {
    /// Test function in dimension 2.
    pub phi: DriftSpec,
    pub alpha: f64,
    pub t_grid: Vec<f64>,
    pub x_grid: Vec<[f64; 2]>,
    pub mc_samples: usize,
    pub seed: u64,
    /// Small-jump threshold of the driver.
    pub eps: f64,
    /// Midpoint-rule nodes on `[0, t]`.
    pub time_nodes: usize,
    /// Central-difference step.
    pub fd_step: f64,
}

impl StableProbeSpec {
    /// Holder-sign test function with `K = 1` and exponent `beta`.
    pub fn holder_sign(alpha: f64, beta: f64, t_grid: Vec<f64>, x_grid: Vec<[f64; 2]>, mc_samples: usize, seed: u64) -> Result<Self> {
        Ok(Self {
            phi: DriftChoice::HolderSign { k: 1.0, beta }.build(2, 1.0)?,
            alpha,
            t_grid,
            x_grid,
            mc_samples,
            seed,
            eps: 1e-2,
            time_nodes: 32,
            fd_step: 1e-2,
        })
    }
}

impl StableProbeSpec {
    pub fn validate(&self) -> Result<()> {
        let beta = self.phi.beta();
        if self.phi.dim() != 2 {
            return Err(Error::InvalidProbe("stable probe works in dimension 2".into()));
        }
        if self.alpha + beta <= 2.0 && !self.phi.is_constant() {
            return Err(Error::InvalidProbe(format!(
                "need alpha + beta > 2, got {}",
                self.alpha + beta
            )));
        }
        if self.mc_samples < 100_000 {
            return Err(Error::InvalidProbe(format!(
                "need at least 1e5 Monte Carlo samples, got {}",
                self.mc_samples
            )));
        }
        if self.t_grid.is_empty() || self.t_grid[0] <= 0.0 || self.t_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidProbe("t_grid must be strictly positive and increasing".into()));
        }
        if self.x_grid.is_empty() || self.time_nodes == 0 || !(self.fd_step > 0.0) {
            return Err(Error::InvalidProbe("empty x_grid, no time nodes, or bad fd step".into()));
        }
        NoiseSpec::truncated_stable(self.alpha, self.eps).validate(2)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StableProbeReport {
    #[serde(flatten)]
    pub bound: GradientBoundReport,
    /// Largest CI half-width of `|∇v|` relative to the bound value `t^γ ‖φ‖`.
    pub max_relative_half_width: f64,
}

/// Monte Carlo gradient probe for truncated α-stable noise in `d = 2`.
///
/// `|∇v|` is the Frobenius norm of the Jacobian of `v`. The ratio at the two
/// smallest times may exceed the median by 100%.
pub fn stable_gradient_probe(spec: &StableProbeSpec) -> Result<StableProbeReport> {
    const DIM: usize = 2;
    spec.validate()?;
    let noise = NoiseSpec::truncated_stable(spec.alpha, spec.eps);
    let gamma = 1.0 - 1.0 / spec.alpha;
    let norm = spec.phi.holder_norm();
    let nx = spec.x_grid.len();
    let entries = nx * DIM * DIM;
    let h = spec.fd_step;

    let mut ratios = Vec::with_capacity(spec.t_grid.len());
    let mut worst_rel = 0.0f64;
    for (ti, &t) in spec.t_grid.iter().enumerate() {
        let q = spec.time_nodes;
        let grid = GridSpec::new(t, 2 * q, DIM)?;
        let sampler = StepSampler::new(&noise, &grid)?;
        let streams = StreamFactory::new(spec.seed.wrapping_add(ti as u64));
        let du = t / q as f64;

        // Per sample: Jacobian estimates J[x][i][j] = ∂_j v_i at each x.
        let per_sample: Vec<Vec<f64>> = (0..spec.mc_samples as u64)
            .into_par_iter()
            .map(|path| {
                let mut incr = vec![0.0; 2 * q * DIM];
                sampler.fill(&streams, path, &mut incr);
                let mut jac = vec![0.0; entries];
                let mut pos = [0.0; DIM];
                let (mut plus, mut minus) = ([0.0; DIM], [0.0; DIM]);
                for k in 0..q {
                    // L at the midpoint (k + 1/2) du is the sum of 2k + 1 half-steps.
                    let steps: &[usize] = if k == 0 { &[0] } else { &[2 * k - 1, 2 * k] };
                    for &s in steps {
                        for i in 0..DIM {
                            pos[i] += incr[s * DIM + i];
                        }
                    }
                    let s_time = t - (k as f64 + 0.5) * du;
                    for (xi, x) in spec.x_grid.iter().enumerate() {
                        for j in 0..DIM {
                            let mut xp = [x[0] + pos[0], x[1] + pos[1]];
                            let mut xm = xp;
                            xp[j] += h;
                            xm[j] -= h;
                            spec.phi.evaluate(s_time, &xp, &mut plus);
                            spec.phi.evaluate(s_time, &xm, &mut minus);
                            for i in 0..DIM {
                                jac[(xi * DIM + i) * DIM + j] += du * (plus[i] - minus[i]) / (2.0 * h);
                            }
                        }
                    }
                }
                jac
            })
            .collect();

        let m = per_sample.len() as f64;
        let mut mean = vec![0.0; entries];
        for s in &per_sample {
            for (a, v) in mean.iter_mut().zip(s) {
                *a += v;
            }
        }
        mean.iter_mut().for_each(|a| *a /= m);
        let mut var = vec![0.0; entries];
        for s in &per_sample {
            for ((a, v), mu) in var.iter_mut().zip(s).zip(&mean) {
                *a += (v - mu).powi(2);
            }
        }
        var.iter_mut().for_each(|a| *a /= m - 1.0);

        let bound = t.powf(gamma) * norm;
        let mut sup = 0.0f64;
        for xi in 0..nx {
            let block = xi * DIM * DIM..(xi + 1) * DIM * DIM;
            let grad = mean[block.clone()].iter().map(|v| v * v).sum::<f64>().sqrt();
            let half_width = 1.96 * (var[block].iter().sum::<f64>() / m).sqrt();
            if bound > 0.0 {
                if half_width > 0.1 * bound {
                    return Err(Error::SampleSize {
                        t,
                        half_width,
                        bound,
                        samples: spec.mc_samples,
                    });
                }
                worst_rel = worst_rel.max(half_width / bound);
            }
            sup = sup.max(grad);
        }
        ratios.push(if bound > 0.0 { sup / bound } else { 0.0 });
    }
    Ok(StableProbeReport {
        bound: GradientBoundReport::new(spec.t_grid.clone(), ratios, 1.0),
        max_relative_half_width: worst_rel,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "driver", rename_all = "snake_case")]
pub enum PartitionKind {
    Wiener,
    Stable { alpha: f64 },
}

impl PartitionKind {
    /// Exponent `γ` in `C_0 ‖·‖ Δ^γ`.
    pub fn exponent(&self) -> f64 {
        match self {
            PartitionKind::Wiener => 0.5,
            PartitionKind::Stable { alpha } => 1.0 - 1.0 / alpha,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub epsilon: f64,
    pub c0: f64,
    pub norm_phi: f64,
    pub norm_b: f64,
    pub horizon: f64,
    pub kind: PartitionKind,
    /// `δ = (ε / (C_0 ‖φ‖) ∧ 1 / (4 C_0 ‖b‖))^{1/γ}`.
    pub delta: f64,
    /// `T_0 = 0 < T_1 < … < T_m = T`.
    pub points: Vec<f64>,
}

impl Partition {
    pub fn m(&self) -> usize {
        self.points.len() - 1
    }

    /// Indices `j` whose interval `[T_j, T_{j+1}]` breaks either inequality.
    pub fn violations(&self) -> Vec<usize> {
        let g = self.kind.exponent();
        self.points
            .windows(2)
            .enumerate()
            .filter(|(_, w)| {
                let len = (w[1] - w[0]).powf(g);
                !(w[1] > w[0]
                    && self.c0 * self.norm_phi * len <= self.epsilon
                    && self.c0 * self.norm_b * len <= 0.25)
            })
            .map(|(j, _)| j)
            .collect()
    }
}

/// Upper limit on the number of partition intervals.
const MAX_INTERVALS: f64 = 1e8;

/// Equispaced partition of `[0, T]` with spacing `δ` (last interval shorter).
///
/// In the rare case that floating-point rounding pushes an interval an ulp
/// past the inequalities, the spacing is shrunk by a relative `2^{-40}` until
/// every interval complies; `delta` still reports the formula value.
pub fn build_partition(
    epsilon: f64,
    c0: f64,
    norm_phi: f64,
    norm_b: f64,
    horizon: f64,
    kind: PartitionKind,
) -> Result<Partition> {
    let positive = |v: f64| v.is_finite() && v > 0.0;
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::InvalidProbe(format!("epsilon must lie in (0, 1), got {epsilon}")));
    }
    if !(positive(c0) && positive(norm_phi) && positive(norm_b) && positive(horizon)) {
        return Err(Error::InvalidProbe("C0, norms and T must be positive".into()));
    }
    if let PartitionKind::Stable { alpha } = kind {
        if !(alpha > 1.0 && alpha < 2.0) {
            return Err(Error::InvalidProbe(format!("alpha must lie in (1, 2), got {alpha}")));
        }
    }
    let g = kind.exponent();
    let base = (epsilon / (c0 * norm_phi)).min(1.0 / (4.0 * c0 * norm_b));
    let delta = base.powf(1.0 / g);
    let mut spacing = delta;
    loop {
        if horizon / spacing > MAX_INTERVALS {
            return Err(Error::InvalidProbe(format!(
                "partition would need more than {MAX_INTERVALS:e} intervals"
            )));
        }
        let mut m = (horizon / spacing).ceil().max(1.0) as usize;
        while m > 1 && (m - 1) as f64 * spacing >= horizon {
            m -= 1;
        }
        while (m as f64) * spacing < horizon {
            m += 1;
        }
        let mut points: Vec<f64> = (0..m).map(|j| j as f64 * spacing).collect();
        points.push(horizon);
        let partition = Partition {
            epsilon,
            c0,
            norm_phi,
            norm_b,
            horizon,
            kind,
            delta,
            points,
        };
        if partition.violations().is_empty() {
            return Ok(partition);
        }
        spacing *= 1.0 - 2f64.powi(-40);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drift::catalog;
    use proptest::prelude::*;

    fn sine() -> DriftSpec {
        sine_test_function()
    }

    fn probe(phi: DriftSpec) -> SemigroupProbe {
        SemigroupProbe::new(phi, vec![0.05, 0.1, 0.2, 0.4, 0.8], vec![-1.0, -0.3, 0.0, 0.4, 1.2], 64).unwrap()
    }

    #[test]
    fn hermite_moments() {
        // ∫ x^{2k} e^{-x²} dx = Γ(k + 1/2)
        let gammas = [PI.sqrt(), PI.sqrt() / 2.0, 3.0 * PI.sqrt() / 4.0, 15.0 * PI.sqrt() / 8.0];
        for n in [32, 64, 100] {
            let (x, w) = gauss_hermite(n);
            for (k, g) in gammas.iter().enumerate() {
                let s: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi.powi(2 * k as i32)).sum();
                assert!((s - g).abs() < 1e-12 * g, "n={n} k={k}: {s} vs {g}");
            }
            let odd: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi.powi(3)).sum();
            assert!(odd.abs() < 1e-12);
        }
    }

    #[test]
    fn hermite_gaussian_characteristic_function() {
        // E cos(σZ) = e^{-σ²/2}
        let (x, w) = gauss_hermite(48);
        for sigma in [0.1, 0.5, 1.0, 2.0] {
            let s: f64 = x
                .iter()
                .zip(&w)
                .map(|(xi, wi)| wi * (sigma * std::f64::consts::SQRT_2 * xi).cos())
                .sum::<f64>()
                / PI.sqrt();
            assert!((s - (-sigma * sigma / 2.0f64).exp()).abs() < 1e-13);
        }
    }

    #[test]
    fn adaptive_quadrature_handles_endpoint_singularity() {
        let v = integrate_adaptive(|x: f64| 1.0 / x.sqrt(), 0.0, 1.0, 1e-10, 1e-14).unwrap();
        assert!((v - 2.0).abs() < 1e-8);
        let v = integrate_adaptive(|x: f64| x.sin(), 0.0, PI, 1e-12, 1e-14).unwrap();
        assert!((v - 2.0).abs() < 1e-12);
    }

    #[test]
    fn adaptive_quadrature_reports_failure() {
        let err = integrate_adaptive(|x: f64| if x < 0.5 { 0.0 } else { 1.0 / (x - 0.5) }, 0.0, 1.0, 1e-12, 0.0);
        assert!(matches!(err, Err(Error::Quadrature { .. })));
    }

    #[test]
    fn constant_phi() {
        let one = catalog("constant", &[1.0], 1, 1.0).unwrap();
        let p = probe(one);
        for t in [0.01, 0.3, 1.0] {
            for x in [-2.0, 0.0, 0.7] {
                assert!((heat_value(&p, t, x).unwrap() - t).abs() < 1e-12);
                assert!(heat_gradient(&p, t, x).unwrap().abs() < 1e-12);
            }
        }
        let report = gradient_bound_check(&p).unwrap();
        assert!(report.ratios.iter().all(|&r| r < 1e-10));
        assert!(report.bounded);
    }

    #[test]
    fn linear_phi_gives_tx() {
        // φ(x) = clamp(x, -4, 4): on |x| ≤ 0.5, t ≤ 0.1 the clamp moves v by
        // at most ∫_0^t 2 E[(|x| + |W_u| - 4)^+] du ≤ 2t E[(W_t - 3.5)^+].
        let level = 4.0;
        let phi = DriftSpec::custom("clamp4", 1, 1.0, 1.0, 1.0, 1.0, 0.0, level, move |_, x, out| {
            out[0] = x[0].clamp(-level, level)
        });
        let p = probe(phi);
        let t = 0.1f64;
        let sd = t.sqrt();
        let a = (level - 0.5) / sd;
        // E[(σZ - c)^+] = σ φ(a) - c Φ(-a), bounded by σ φ(a) / a² for large a.
        let tail = sd * (-a * a / 2.0).exp() / (2.0 * PI).sqrt() / (a * a);
        let clamp_effect = 2.0 * t * tail;
        assert!(clamp_effect < 1e-8);
        for t in [0.01, 0.05, 0.1] {
            for x in [-0.5, -0.2, 0.0, 0.3, 0.5] {
                let v = heat_value(&p, t, x).unwrap();
                assert!((v - t * x).abs() < 1e-8 + 1e-6 * (t * x).abs(), "t={t} x={x}: {v}");
                let g = heat_gradient(&p, t, x).unwrap();
                assert!((g - t).abs() < 1e-8, "t={t} x={x}: {g}");
            }
        }
    }

    #[test]
    fn sine_closed_form() {
        let p = probe(sine());
        for &t in p.t_grid() {
            for &x in p.x_grid() {
                let factor = 2.0 * (1.0 - (-t / 2.0f64).exp());
                let v = heat_value(&p, t, x).unwrap();
                let g = heat_gradient(&p, t, x).unwrap();
                assert!((v - factor * x.sin()).abs() < 1e-10, "t={t} x={x}");
                assert!((g - factor * x.cos()).abs() < 1e-10, "t={t} x={x}");
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let p = probe(sine());
        assert!(gradient_fd_discrepancy(&p, 1e-4).unwrap() < 1e-5);
    }

    #[test]
    fn linearity_in_phi() {
        let a = 2.5;
        let phi1 = catalog("holder_sign", &[1.0, 0.5], 1, 1.0).unwrap();
        let combo = {
            let f1 = phi1.clone();
            DriftSpec::custom("combo", 1, 1.0, 0.5, 1.0, 10.0, 0.0, 10.0, move |t, x, out| {
                f1.evaluate(t, x, out);
                out[0] = a * out[0] + x[0].sin();
            })
        };
        let (p1, p2, pc) = (probe(phi1), probe(sine()), probe(combo));
        for (t, x) in [(0.1, 0.3), (0.4, -0.7), (0.02, 0.0)] {
            let lhs = heat_value(&pc, t, x).unwrap();
            let rhs = a * heat_value(&p1, t, x).unwrap() + heat_value(&p2, t, x).unwrap();
            assert!((lhs - rhs).abs() < 1e-5 * (1.0 + rhs.abs()), "t={t} x={x}");
        }
    }

    #[test]
    fn holder_sign_ratio_is_bounded() {
        let phi = catalog("holder_sign", &[1.0, 0.5], 1, 1.0).unwrap();
        let times: Vec<f64> = (2..=10).rev().map(|k| 2f64.powi(-k)).collect();
        let xs: Vec<f64> = (-10..=10).map(|i| i as f64 * 0.1).collect();
        let p = SemigroupProbe::new(phi.clone(), times.clone(), xs.clone(), 64).unwrap();
        let r = gradient_bound_check(&p).unwrap();
        assert!(r.bounded, "{r:?}");

        // Doubling φ doubles the gradient; the normalised ratio is unchanged.
        let p2 = SemigroupProbe::new(phi.scaled(2.0), times, xs, 64).unwrap();
        let g1 = heat_gradient(&p, 0.25, 0.1).unwrap();
        let g2 = heat_gradient(&p2, 0.25, 0.1).unwrap();
        assert!((g2 - 2.0 * g1).abs() < 1e-12 * g1.abs().max(1.0));
        let r2 = gradient_bound_check(&p2).unwrap();
        for (a, b) in r.ratios.iter().zip(&r2.ratios) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn probe_validation() {
        let phi = catalog("zero", &[], 1, 1.0).unwrap();
        assert!(SemigroupProbe::new(phi.clone(), vec![0.0, 0.1], vec![0.0], 64).is_err());
        assert!(SemigroupProbe::new(phi.clone(), vec![0.2, 0.1], vec![0.0], 64).is_err());
        assert!(SemigroupProbe::new(phi.clone(), vec![0.1], vec![0.0], 16).is_err());
        let p = SemigroupProbe::new(phi, vec![0.1], vec![0.0], 32).unwrap();
        assert!(heat_value(&p, 0.0, 0.0).is_err());
        let phi2 = catalog("zero", &[], 2, 1.0).unwrap();
        assert!(SemigroupProbe::new(phi2, vec![0.1], vec![0.0], 32).is_err());
    }

    #[test]
    fn stable_probe_constant_and_linearity() {
        let xs = vec![[0.0, 0.0], [0.3, -0.2]];
        let mut spec = StableProbeSpec::holder_sign(1.5, 0.9, vec![0.05, 0.1], xs, 100_000, 5).unwrap();
        spec.time_nodes = 8;
        spec.eps = 0.05;
        let base = stable_gradient_probe(&spec).unwrap();

        let mut doubled = spec.clone();
        doubled.phi = spec.phi.scaled(2.0);
        let twice = stable_gradient_probe(&doubled).unwrap();
        // The ratio is normalised by ‖φ‖, so common random numbers make it
        // identical up to rounding.
        for (a, b) in base.bound.ratios.iter().zip(&twice.bound.ratios) {
            assert!((a - b).abs() < 1e-12 * a.max(1.0), "{a} vs {b}");
        }

        let mut one = spec;
        one.phi = catalog("constant", &[1.0], 2, 1.0).unwrap();
        let flat = stable_gradient_probe(&one).unwrap();
        assert!(flat.bound.ratios.iter().all(|&r| r == 0.0));
    }

    #[test]
    fn stable_probe_validation() {
        let xs = vec![[0.0, 0.0]];
        let low = StableProbeSpec::holder_sign(1.5, 0.9, vec![0.1], xs.clone(), 1000, 0).unwrap();
        assert!(stable_gradient_probe(&low).is_err());
        let rough = StableProbeSpec::holder_sign(1.5, 0.4, vec![0.1], xs, 100_000, 0).unwrap();
        assert!(stable_gradient_probe(&rough).is_err());
    }

    #[test]
    fn partition_example() {
        let p = build_partition(0.5, 1.0, 1.0, 1.0, 1.0, PartitionKind::Wiener).unwrap();
        assert_eq!(p.delta, 0.0625);
        assert_eq!(p.m(), 16);
        assert_eq!(p.points[0], 0.0);
        assert_eq!(*p.points.last().unwrap(), 1.0);
        assert!(p.violations().is_empty());
    }

    #[test]
    fn partition_min_structure() {
        // ε/(C0‖φ‖) = 0.9 > 1/(4C0‖b‖) = 0.125: δ depends on ‖b‖ only.
        let a = build_partition(0.9, 1.0, 1.0, 2.0, 1.0, PartitionKind::Wiener).unwrap();
        let b = build_partition(0.6, 1.0, 1.0, 2.0, 1.0, PartitionKind::Wiener).unwrap();
        assert_eq!(a.delta, 0.125f64.powi(2));
        assert_eq!(a.delta, b.delta);
    }

    #[test]
    fn partition_short_horizon() {
        let p = build_partition(0.5, 1.0, 1.0, 1.0, 0.01, PartitionKind::Wiener).unwrap();
        assert_eq!(p.m(), 1);
        assert_eq!(p.points, vec![0.0, 0.01]);
    }

    #[test]
    fn stable_partition_exponent() {
        let alpha = 1.5;
        let p = build_partition(0.5, 1.0, 1.0, 1.0, 1.0, PartitionKind::Stable { alpha }).unwrap();
        assert!((p.delta - 0.25f64.powf(alpha / (alpha - 1.0))).abs() < 1e-15);
        assert!(p.violations().is_empty());
    }

    #[test]
    fn partition_rejects_bad_input() {
        assert!(build_partition(1.0, 1.0, 1.0, 1.0, 1.0, PartitionKind::Wiener).is_err());
        assert!(build_partition(0.5, 0.0, 1.0, 1.0, 1.0, PartitionKind::Wiener).is_err());
        assert!(build_partition(0.5, 1.0, 1.0, 1.0, 1.0, PartitionKind::Stable { alpha: 2.0 }).is_err());
    }

    #[test]
    fn partition_refuses_huge_interval_counts() {
        let kind = PartitionKind::Stable { alpha: 1.05 };
        assert!(build_partition(0.001, 1.0, 1.0, 1.0, 1.0, kind).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig { cases: 1000, max_global_rejects: 100_000, ..ProptestConfig::default() })]

        #[test]
        fn partitions_always_valid(
            eps in 0.001f64..0.999,
            c0 in 0.1f64..10.0,
            norm_phi in 0.1f64..10.0,
            norm_b in 0.1f64..10.0,
            horizon in 0.01f64..10.0,
            alpha in prop::option::of(1.05f64..1.95),
        ) {
            let kind = alpha.map_or(PartitionKind::Wiener, |alpha| PartitionKind::Stable { alpha });
            let base = (eps / (c0 * norm_phi)).min(0.25 / (c0 * norm_b));
            prop_assume!(horizon / base.powf(1.0 / kind.exponent()) <= 1e5);
            let p = build_partition(eps, c0, norm_phi, norm_b, horizon, kind).unwrap();
            prop_assert!(p.violations().is_empty());
            prop_assert_eq!(p.points[0], 0.0);
            prop_assert_eq!(*p.points.last().unwrap(), horizon);
            prop_assert!(p.points.windows(2).all(|w| w[0] < w[1]));
            let m = p.m() as f64;
            prop_assert!((m - 1.0) * p.delta < horizon * (1.0 + 1e-9));
        }
    }
}
