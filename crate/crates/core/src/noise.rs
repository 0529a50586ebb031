//! Driving-noise increments.
//!
//! Two drivers are supported: a `d`-dimensional Wiener process and the
//! truncated symmetric α-stable process, the pure-jump Lévy process with Lévy
//! measure `ν(dz) = 1(|z| ≤ 1) |z|^{-d-α} dz`. The stable driver is simulated
//! per step as a compound Poisson process of the jumps with `eps ≤ |z| ≤ 1`,
//! plus (optionally) a Gaussian of matching covariance standing in for the jumps
//! below `eps`. The measure is symmetric, so no compensating drift appears.
//!
//! Each step draws from its own counter-based stream (see [`crate::rng`]), so an
//! increment array is a pure function of `(seed, path_index, spec, grid)`.

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::rng::StreamFactory;
use crate::{Error, Result};

/// Default small-jump threshold.
pub const DEFAULT_EPS: f64 = 1e-3;

/// Uniform time grid `t_k = kT/n`, `k = 0..=n`, in dimension `d`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    horizon: f64,
    steps: usize,
    dim: usize,
}

impl GridSpec {
    pub fn new(horizon: f64, steps: usize, dim: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidGrid(format!("horizon must be positive, got {horizon}")));
        }
        if steps == 0 {
            return Err(Error::InvalidGrid("steps must be positive".into()));
        }
        if dim == 0 {
            return Err(Error::InvalidGrid("dimension must be positive".into()));
        }
        Ok(Self { horizon, steps, dim })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Step size `h = T/n`.
    pub fn step(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    /// Grid point `t_k = kT/n`.
    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.horizon / self.steps as f64
    }

    /// Grid projection: the latest grid point `t_k ≤ s`, clamped to `[0, T]`.
    pub fn floor_time(&self, s: f64) -> f64 {
        let k = (s / self.step()).floor().clamp(0.0, self.steps as f64) as usize;
        self.time(k)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Wiener,
    TruncatedStable,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmallJumpMode {
    /// Replace jumps below `eps` by a Gaussian with the same covariance.
    #[default]
    GaussianCompensation,
    /// Discard jumps below `eps` (ablation only).
    Drop,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    /// Stability index, stable driver only.
    pub alpha: f64,
    /// Small-jump threshold, stable driver only.
    pub eps: f64,
    pub small_jumps: SmallJumpMode,
}

impl NoiseSpec {
    pub fn wiener() -> Self {
        Self {
            kind: NoiseKind::Wiener,
            alpha: 2.0,
            eps: DEFAULT_EPS,
            small_jumps: SmallJumpMode::GaussianCompensation,
        }
    }

    pub fn truncated_stable(alpha: f64, eps: f64) -> Self {
        Self {
            kind: NoiseKind::TruncatedStable,
            alpha,
            eps,
            small_jumps: SmallJumpMode::GaussianCompensation,
        }
    }

    pub fn with_small_jumps(mut self, mode: SmallJumpMode) -> Self {
        self.small_jumps = mode;
        self
    }

    /// Checks the parameter ranges that apply in dimension `dim`.
    pub fn validate(&self, dim: usize) -> Result<()> {
        match self.kind {
            NoiseKind::Wiener => Ok(()),
            NoiseKind::TruncatedStable => {
                if !(self.alpha > 1.0 && self.alpha < 2.0) {
                    return Err(Error::InvalidNoise(format!(
                        "alpha must lie in (1, 2), got {}",
                        self.alpha
                    )));
                }
                if !(self.eps > 0.0 && self.eps < 1.0) {
                    return Err(Error::InvalidNoise(format!(
                        "eps must lie in (0, 1), got {}",
                        self.eps
                    )));
                }
                if dim < 2 {
                    return Err(Error::InvalidNoise(format!(
                        "truncated stable driver needs dimension >= 2, got {dim}"
                    )));
                }
                Ok(())
            }
        }
    }

    /// `E|L_t|^2 / t` for this driver in dimension `dim`.
    pub fn second_moment_rate(&self, dim: usize) -> f64 {
        match self.kind {
            NoiseKind::Wiener => dim as f64,
            NoiseKind::TruncatedStable => {
                let full = truncated_second_moment(dim, self.alpha);
                match self.small_jumps {
                    SmallJumpMode::GaussianCompensation => full,
                    SmallJumpMode::Drop => full * (1.0 - self.eps.powf(2.0 - self.alpha)),
                }
            }
        }
    }
}

/// Surface area `S_{d-1} = 2 π^{d/2} / Γ(d/2)` of the unit sphere in `R^d`.
pub fn sphere_area(dim: usize) -> f64 {
    assert!(dim > 0);
    // Γ(d/2) by the half-integer recursion from Γ(1/2) or Γ(1).
    let (mut gamma, mut x) = if dim.is_multiple_of(2) {
        (1.0, 1.0)
    } else {
        (std::f64::consts::PI.sqrt(), 0.5)
    };
    let half = dim as f64 / 2.0;
    while x < half {
        gamma *= x;
        x += 1.0;
    }
    2.0 * std::f64::consts::PI.powf(half) / gamma
}

/// Rate `λ_eps = ν({eps ≤ |z| ≤ 1}) = S_{d-1} (eps^{-α} - 1) / α` of the large jumps.
pub fn jump_intensity(dim: usize, alpha: f64, eps: f64) -> f64 {
    sphere_area(dim) * (eps.powf(-alpha) - 1.0) / alpha
}

/// Per-coordinate variance rate of the jumps below `eps`:
/// `σ_eps² = S_{d-1} eps^{2-α} / (d (2-α))`.
pub fn small_jump_variance(dim: usize, alpha: f64, eps: f64) -> f64 {
    sphere_area(dim) * eps.powf(2.0 - alpha) / (dim as f64 * (2.0 - alpha))
}

/// `∫_{|z|≤1} |z|^2 ν(dz) = S_{d-1} / (2-α)`.
pub fn truncated_second_moment(dim: usize, alpha: f64) -> f64 {
    sphere_area(dim) / (2.0 - alpha)
}

/// Noise increments `ΔL_k = L_{t_{k+1}} - L_{t_k}` of one path, row-major `n × d`.
#[derive(Clone, Debug, PartialEq)]
pub struct IncrementArray {
    grid: GridSpec,
    values: Vec<f64>,
    seed: u64,
    path_index: u64,
}

impl IncrementArray {
    pub fn from_values(grid: GridSpec, values: Vec<f64>, seed: u64, path_index: u64) -> Result<Self> {
        if values.len() != grid.steps() * grid.dim() {
            return Err(Error::InvalidGrid(format!(
                "{} values do not fill a {}x{} increment array",
                values.len(),
                grid.steps(),
                grid.dim()
            )));
        }
        Ok(Self {
            grid,
            values,
            seed,
            path_index,
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn path_index(&self) -> u64 {
        self.path_index
    }

    pub fn row(&self, k: usize) -> &[f64] {
        let d = self.grid.dim();
        &self.values[k * d..(k + 1) * d]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.values.chunks_exact(self.grid.dim())
    }

    /// Cumulative sums: `L_{t_k} - L_0` for `k = 0..=n`, row-major.
    pub fn partial_sums(&self) -> Vec<f64> {
        let d = self.grid.dim();
        let mut out = vec![0.0; (self.grid.steps() + 1) * d];
        for (k, row) in self.rows().enumerate() {
            for i in 0..d {
                out[(k + 1) * d + i] = out[k * d + i] + row[i];
            }
        }
        out
    }
}

/// Sampler for one driver on one grid; holds the per-step constants.
#[derive(Clone, Debug)]
pub(crate) enum StepSampler {
    Wiener {
        dim: usize,
        sd: f64,
    },
    Stable {
        dim: usize,
        jumps: Option<Poisson<f64>>,
        eps_pow: f64,
        span: f64,
        neg_inv_alpha: f64,
        gauss_sd: f64,
    },
}

impl StepSampler {
    pub(crate) fn new(spec: &NoiseSpec, grid: &GridSpec) -> Result<Self> {
        spec.validate(grid.dim())?;
        let h = grid.step();
        let dim = grid.dim();
        Ok(match spec.kind {
            NoiseKind::Wiener => StepSampler::Wiener { dim, sd: h.sqrt() },
            NoiseKind::TruncatedStable => {
                let rate = jump_intensity(dim, spec.alpha, spec.eps) * h;
                let jumps = if rate > 0.0 {
                    Some(Poisson::new(rate).map_err(|e| Error::InvalidNoise(e.to_string()))?)
                } else {
                    None
                };
                let gauss_sd = match spec.small_jumps {
                    SmallJumpMode::GaussianCompensation => {
                        (h * small_jump_variance(dim, spec.alpha, spec.eps)).sqrt()
                    }
                    SmallJumpMode::Drop => 0.0,
                };
                let eps_pow = spec.eps.powf(-spec.alpha);
                StepSampler::Stable {
                    dim,
                    jumps,
                    eps_pow,
                    span: eps_pow - 1.0,
                    neg_inv_alpha: -1.0 / spec.alpha,
                    gauss_sd,
                }
            }
        })
    }

    /// Writes one increment into `out` (length `d`).
    pub(crate) fn sample_step<R: Rng>(&self, rng: &mut R, out: &mut [f64]) {
        match self {
            StepSampler::Wiener { sd, .. } => {
                for v in out.iter_mut() {
                    let z: f64 = rng.sample(StandardNormal);
                    *v = sd * z;
                }
            }
            StepSampler::Stable {
                dim,
                jumps,
                gauss_sd,
                ..
            } => {
                out.fill(0.0);
                if let Some(poisson) = jumps {
                    let count = poisson.sample(rng) as u64;
                    let mut dir = [0.0f64; 8];
                    let mut heap;
                    let dir: &mut [f64] = if *dim <= dir.len() {
                        &mut dir[..*dim]
                    } else {
                        heap = vec![0.0; *dim];
                        &mut heap
                    };
                    for _ in 0..count {
                        self.sample_jump(rng, dir);
                        for (o, z) in out.iter_mut().zip(dir.iter()) {
                            *o += z;
                        }
                    }
                }
                if *gauss_sd > 0.0 {
                    for v in out.iter_mut() {
                        let z: f64 = rng.sample(StandardNormal);
                        *v += gauss_sd * z;
                    }
                }
            }
        }
    }

    /// One large jump: radius by inverse CDF of `r^{-1-α}` on `[eps, 1]`,
    /// direction uniform on the sphere via a normalised Gaussian vector.
    pub(crate) fn sample_jump<R: Rng>(&self, rng: &mut R, out: &mut [f64]) {
        let StepSampler::Stable {
            eps_pow,
            span,
            neg_inv_alpha,
            ..
        } = self
        else {
            unreachable!("jumps exist only for the stable driver");
        };
        let u: f64 = rng.random();
        let radius = (eps_pow - u * span).powf(*neg_inv_alpha).min(1.0);
        loop {
            let mut norm2 = 0.0;
            for v in out.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *v = z;
                norm2 += z * z;
            }
            if norm2 > 0.0 {
                let scale = radius / norm2.sqrt();
                out.iter_mut().for_each(|v| *v *= scale);
                return;
            }
        }
    }

    pub(crate) fn fill(&self, streams: &StreamFactory, path: u64, out: &mut [f64]) {
        let d = match self {
            StepSampler::Wiener { dim, .. } | StepSampler::Stable { dim, .. } => *dim,
        };
        for (k, row) in out.chunks_exact_mut(d).enumerate() {
            let mut rng = streams.stream(path, k as u64);
            self.sample_step(&mut rng, row);
        }
    }
}

/// Increments of either driver; dispatches on `spec.kind`.
pub fn sample_increments(
    grid: &GridSpec,
    spec: &NoiseSpec,
    seed: u64,
    path_index: u64,
) -> Result<IncrementArray> {
    let sampler = StepSampler::new(spec, grid)?;
    let mut values = vec![0.0; grid.steps() * grid.dim()];
    sampler.fill(&StreamFactory::new(seed), path_index, &mut values);
    IncrementArray::from_values(*grid, values, seed, path_index)
}

/// Independent `N(0, T/n)` increments in each coordinate.
pub fn wiener_increments(grid: &GridSpec, seed: u64, path_index: u64) -> Result<IncrementArray> {
    sample_increments(grid, &NoiseSpec::wiener(), seed, path_index)
}

/// Truncated symmetric α-stable increments. Rejects non-stable specs.
pub fn truncated_stable_increments(
    grid: &GridSpec,
    spec: &NoiseSpec,
    seed: u64,
    path_index: u64,
) -> Result<IncrementArray> {
    if spec.kind != NoiseKind::TruncatedStable {
        return Err(Error::InvalidNoise("expected a truncated stable spec".into()));
    }
    sample_increments(grid, spec, seed, path_index)
}

/// Block sums of `factor` consecutive rows: the same path on the grid with
/// `n / factor` steps.
pub fn coarsen(fine: &IncrementArray, factor: usize) -> Result<IncrementArray> {
    let steps = fine.grid.steps();
    if factor == 0 || !steps.is_multiple_of(factor) {
        return Err(Error::NotDivisible { factor, steps });
    }
    let d = fine.grid.dim();
    let grid = GridSpec::new(fine.grid.horizon(), steps / factor, d)?;
    let mut values = vec![0.0; grid.steps() * d];
    coarsen_into(&fine.values, d, factor, &mut values);
    IncrementArray::from_values(grid, values, fine.seed, fine.path_index)
}

/// Block sums use pairwise (halving) summation, so for power-of-two factors
/// `coarsen(coarsen(x, a), b)` and `coarsen(x, a * b)` agree bit for bit.
pub(crate) fn coarsen_into(fine: &[f64], dim: usize, factor: usize, out: &mut [f64]) {
    for (block, row) in fine.chunks_exact(dim * factor).zip(out.chunks_exact_mut(dim)) {
        for (i, o) in row.iter_mut().enumerate() {
            *o = pairwise_sum(block, dim, i, 0, factor);
        }
    }
}

fn pairwise_sum(block: &[f64], dim: usize, coord: usize, lo: usize, hi: usize) -> f64 {
    match hi - lo {
        1 => block[lo * dim + coord],
        2 => block[lo * dim + coord] + block[(lo + 1) * dim + coord],
        len => {
            let mid = lo + len / 2;
            pairwise_sum(block, dim, coord, lo, mid) + pairwise_sum(block, dim, coord, mid, hi)
        }
    }
}

/// Monte Carlo estimate of a scalar mean with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub samples: usize,
}

impl MeanEstimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        Self {
            mean,
            std_err: (var / n).sqrt(),
            samples: xs.len(),
        }
    }
}

/// Empirical `E|L_T|^2` over `paths` independent one-step samples.
pub fn terminal_second_moment(
    spec: &NoiseSpec,
    dim: usize,
    horizon: f64,
    paths: usize,
    seed: u64,
) -> Result<MeanEstimate> {
    let grid = GridSpec::new(horizon, 1, dim)?;
    let sampler = StepSampler::new(spec, &grid)?;
    let streams = StreamFactory::new(seed);
    let squares: Vec<f64> = (0..paths as u64)
        .into_par_iter()
        .map(|path| {
            let mut row = vec![0.0; dim];
            sampler.fill(&streams, path, &mut row);
            row.iter().map(|v| v * v).sum()
        })
        .collect();
    Ok(MeanEstimate::from_samples(&squares))
}

/// Empirical `E[sup_{s≤t} |L_s|^p]` for each `t` in `times` and each `p` in
/// `powers`, with the supremum taken over `substeps` equal sub-intervals.
///
/// Returns one row per time, one estimate per power.
pub fn sup_moments(
    spec: &NoiseSpec,
    dim: usize,
    times: &[f64],
    substeps: usize,
    powers: &[f64],
    paths: usize,
    seed: u64,
) -> Result<Vec<Vec<MeanEstimate>>> {
    let mut table = Vec::with_capacity(times.len());
    for (j, &t) in times.iter().enumerate() {
        let grid = GridSpec::new(t, substeps, dim)?;
        let sampler = StepSampler::new(spec, &grid)?;
        let streams = StreamFactory::new(seed.wrapping_add(j as u64));
        let sups: Vec<f64> = (0..paths as u64)
            .into_par_iter()
            .map(|path| {
                let mut incr = vec![0.0; substeps * dim];
                sampler.fill(&streams, path, &mut incr);
                let mut pos = vec![0.0; dim];
                let mut sup2 = 0.0f64;
                for row in incr.chunks_exact(dim) {
                    for (x, dx) in pos.iter_mut().zip(row) {
                        *x += dx;
                    }
                    sup2 = sup2.max(pos.iter().map(|x| x * x).sum());
                }
                sup2.sqrt()
            })
            .collect();
        let row = powers
            .iter()
            .map(|&p| {
                let xs: Vec<f64> = sups.iter().map(|s| s.powf(p)).collect();
                MeanEstimate::from_samples(&xs)
            })
            .collect();
        table.push(row);
    }
    Ok(table)
}
