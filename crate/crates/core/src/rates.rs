//! Convergence-rate estimation.
//!
//! An [`ErrorTable`] holds `e(n) = (mean over paths of Y_n)^{1/root}` for a
//! list of resolutions `n`, where `Y_n` is a per-path error functional; the
//! per-path values are kept so that confidence intervals can be bootstrapped
//! over paths. Resampling whole paths keeps the dependence between
//! resolutions that the coupling introduces.
//!
//! [`fit_rate`] regresses `log e` on `log n` and reports the decay rate
//! (`-slope`) against the exponent guaranteed by theory.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::drift::DriftSpec;
use crate::em::{integrate_into, ABORT_BUDGET};
use crate::noise::{coarsen_into, GridSpec, NoiseKind, NoiseSpec, StepSampler};
use crate::rng::{StreamFactory, RESERVED_PATHS};
use crate::{Error, Result};

/// Bootstrap resamples used for every interval.
pub const BOOTSTRAP_RESAMPLES: usize = 1000;

/// Default slope slack for Wiener-driven rate tests.
pub const WIENER_SLACK: f64 = 0.10;

/// Default slope slack for stable-driven rate tests.
pub const STABLE_SLACK: f64 = 0.15;

const CI_LEVEL: f64 = 0.95;

/// Per-path values, row-major `paths × columns`.
#[derive(Clone, Debug, PartialEq)]
pub struct PathSamples {
    values: Vec<f64>,
    columns: usize,
}

impl PathSamples {
    pub fn new(values: Vec<f64>, columns: usize) -> Result<Self> {
        if columns == 0 || !values.len().is_multiple_of(columns) {
            return Err(Error::InvalidRun(format!(
                "{} samples do not fill rows of {columns}",
                values.len()
            )));
        }
        Ok(Self { values, columns })
    }

    pub fn paths(&self) -> usize {
        self.values.len() / self.columns
    }

    pub fn columns(&self) -> usize {
        self.columns
    }

    pub fn row(&self, path: usize) -> &[f64] {
        &self.values[path * self.columns..(path + 1) * self.columns]
    }

    fn column_means(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.columns];
        for row in self.values.chunks_exact(self.columns) {
            for (s, v) in sums.iter_mut().zip(row) {
                *s += v;
            }
        }
        let m = self.paths() as f64;
        sums.into_iter().map(|s| s / m).collect()
    }

    /// Column means for each bootstrap resample, `resamples × columns`.
    /// Deterministic in `seed`.
    fn bootstrap_means(&self, seed: u64, resamples: usize) -> Vec<Vec<f64>> {
        let streams = StreamFactory::new(seed);
        let m = self.paths();
        (0..resamples as u64)
            .into_par_iter()
            .map(|b| {
                let mut rng = streams.stream(RESERVED_PATHS + 1, b);
                let mut sums = vec![0.0; self.columns];
                for _ in 0..m {
                    let row = self.row(rng.random_range(0..m));
                    for (s, v) in sums.iter_mut().zip(row) {
                        *s += v;
                    }
                }
                sums.into_iter().map(|s| s / m as f64).collect()
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableMeta {
    pub drift: String,
    pub noise: NoiseKind,
    pub p: f64,
    /// `e = mean^{1/root}`: `root = p` for strong errors, `1` for raw moments.
    pub root: f64,
    pub paths: usize,
    pub seed: u64,
    pub n_ref: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorRow {
    pub n: usize,
    pub e: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ErrorTable {
    pub rows: Vec<ErrorRow>,
    pub meta: TableMeta,
    pub samples: Option<PathSamples>,
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let w = pos - lo as f64;
    sorted[lo] * (1.0 - w) + sorted[hi] * w
}

fn sorted(mut xs: Vec<f64>) -> Vec<f64> {
    xs.sort_by(f64::total_cmp);
    xs
}

impl ErrorTable {
    /// Table from per-path values with bootstrap intervals for each row.
    pub fn from_samples(n_list: &[usize], samples: PathSamples, meta: TableMeta) -> Result<Self> {
        if samples.columns() != n_list.len() {
            return Err(Error::InvalidRun(format!(
                "{} sample columns for {} resolutions",
                samples.columns(),
                n_list.len()
            )));
        }
        if samples.paths() < 2 {
            return Err(Error::InvalidRun("need at least 2 paths".into()));
        }
        let inv_root = 1.0 / meta.root;
        let means = samples.column_means();
        let boot = samples.bootstrap_means(meta.seed, BOOTSTRAP_RESAMPLES);
        let tail = (1.0 - CI_LEVEL) / 2.0;
        let rows = n_list
            .iter()
            .enumerate()
            .map(|(j, &n)| {
                let e = means[j].powf(inv_root);
                let col = sorted(boot.iter().map(|b| b[j]).collect());
                let lo = percentile(&col, tail).powf(inv_root);
                let hi = percentile(&col, 1.0 - tail).powf(inv_root);
                ErrorRow {
                    n,
                    e,
                    ci_lo: lo.min(e),
                    ci_hi: hi.max(e),
                }
            })
            .collect();
        let table = Self {
            rows,
            meta,
            samples: Some(samples),
        };
        table.check_rows()?;
        Ok(table)
    }

    /// Table from precomputed rows, without path samples.
    pub fn from_rows(rows: Vec<ErrorRow>, meta: TableMeta) -> Result<Self> {
        let table = Self {
            rows,
            meta,
            samples: None,
        };
        table.check_rows()?;
        Ok(table)
    }

    fn check_rows(&self) -> Result<()> {
        for r in &self.rows {
            if !(r.e >= 0.0 && r.ci_lo <= r.e && r.e <= r.ci_hi) {
                return Err(Error::InvalidRun(format!("malformed row {r:?}")));
            }
        }
        if self.rows.windows(2).any(|w| w[0].n >= w[1].n) {
            return Err(Error::InvalidRun("rows must have strictly increasing n".into()));
        }
        Ok(())
    }

    /// CSV with the fixed header `n,e,ci_lo,ci_hi`; floats use the shortest
    /// representation that round-trips.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,e,ci_lo,ci_hi\n");
        for r in &self.rows {
            out.push_str(&format!("{},{:?},{:?},{:?}\n", r.n, r.e, r.ci_lo, r.ci_hi));
        }
        out
    }

    /// Largest overlap between intervals of adjacent rows, as a fraction of
    /// the narrower interval.
    pub fn max_adjacent_overlap(&self) -> f64 {
        self.rows
            .windows(2)
            .map(|w| {
                let (a, b) = (&w[0], &w[1]);
                let inter = a.ci_hi.min(b.ci_hi) - a.ci_lo.max(b.ci_lo);
                let narrow = (a.ci_hi - a.ci_lo).min(b.ci_hi - b.ci_lo);
                if inter <= 0.0 {
                    0.0
                } else if narrow <= 0.0 {
                    1.0
                } else {
                    (inter / narrow).min(1.0)
                }
            })
            .fold(0.0, f64::max)
    }
}

/// Ordinary least squares `y ≈ intercept + slope·x`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub slope_se: f64,
}

pub fn ols(x: &[f64], y: &[f64]) -> LineFit {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - intercept - slope * a).powi(2))
        .sum();
    let r2 = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    let slope_se = if x.len() > 2 {
        (sse / (n - 2.0) / sxx).sqrt()
    } else {
        f64::NAN
    };
    LineFit {
        slope,
        intercept,
        r2,
        slope_se,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

/// What the fitted slope is judged against.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateTarget {
    pub theoretical: Option<f64>,
    pub slack: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    /// Decay rate `-d log e / d log n`; `+inf` (serialised as null) for an
    /// exact, all-zero table.
    pub slope: f64,
    pub slope_ci: (f64, f64),
    pub intercept: f64,
    pub theoretical_rate: Option<f64>,
    pub slack: f64,
    pub verdict: Verdict,
    pub residual_r2: f64,
    pub rows_used: usize,
    pub exact: bool,
    pub max_adjacent_overlap: f64,
}

/// Fits the decay rate of `e(n)` and judges it against `target`.
pub fn fit_rate(table: &ErrorTable, target: RateTarget) -> Result<RateReport> {
    table.check_rows()?;
    if table.rows.len() < 4 {
        return Err(Error::TooFewRows(table.rows.len()));
    }
    if table.rows.iter().all(|r| r.e == 0.0) {
        return Ok(RateReport {
            slope: f64::INFINITY,
            slope_ci: (f64::INFINITY, f64::INFINITY),
            intercept: f64::NEG_INFINITY,
            theoretical_rate: target.theoretical,
            slack: target.slack,
            verdict: Verdict::Pass,
            residual_r2: 1.0,
            rows_used: table.rows.len(),
            exact: true,
            max_adjacent_overlap: 0.0,
        });
    }
    let usable: Vec<usize> = (0..table.rows.len()).filter(|&j| table.rows[j].e > 0.0).collect();
    if usable.len() < 4 {
        return Err(Error::TooFewRows(usable.len()));
    }
    let xs: Vec<f64> = usable.iter().map(|&j| (table.rows[j].n as f64).ln()).collect();
    let ys: Vec<f64> = usable.iter().map(|&j| table.rows[j].e.ln()).collect();
    let fit = ols(&xs, &ys);
    let slope = -fit.slope;

    let slope_ci = match &table.samples {
        Some(samples) => {
            let inv_root = 1.0 / table.meta.root;
            let boot = samples.bootstrap_means(table.meta.seed, BOOTSTRAP_RESAMPLES);
            let slopes: Vec<f64> = boot
                .iter()
                .filter_map(|means| {
                    let ys: Option<Vec<f64>> = usable
                        .iter()
                        .map(|&j| {
                            let e = means[j].powf(inv_root);
                            (e > 0.0).then(|| e.ln())
                        })
                        .collect();
                    ys.map(|ys| -ols(&xs, &ys).slope)
                })
                .collect();
            if slopes.len() < 2 {
                (slope, slope)
            } else {
                let s = sorted(slopes);
                let tail = (1.0 - CI_LEVEL) / 2.0;
                (percentile(&s, tail), percentile(&s, 1.0 - tail))
            }
        }
        None => {
            let half = 1.96 * fit.slope_se;
            (slope - half, slope + half)
        }
    };

    let overlap = table.max_adjacent_overlap();
    let verdict = match target.theoretical {
        None => Verdict::Inconclusive,
        Some(_) if overlap > 0.5 => Verdict::Inconclusive,
        Some(rate) if slope_ci.1 >= slope && slope >= rate - target.slack => Verdict::Pass,
        Some(_) => Verdict::Fail,
    };
    Ok(RateReport {
        slope,
        slope_ci,
        intercept: fit.intercept,
        theoretical_rate: target.theoretical,
        slack: target.slack,
        verdict,
        residual_r2: fit.r2,
        rows_used: usable.len(),
        exact: false,
        max_adjacent_overlap: overlap,
    })
}

/// Driving noise, as far as the rate theory is concerned.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Driver {
    Wiener,
    TruncatedStable { alpha: f64 },
}

impl Driver {
    pub fn from_noise(noise: &NoiseSpec) -> Self {
        match noise.kind {
            NoiseKind::Wiener => Driver::Wiener,
            NoiseKind::TruncatedStable => Driver::TruncatedStable { alpha: noise.alpha },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum RateGuarantee {
    /// Guaranteed decay exponent of `e(n) = E[sup|X - X^(n)|^p]^{1/p}`.
    Exponent(f64),
    NoGuarantee(String),
}

impl RateGuarantee {
    pub fn exponent(&self) -> Option<f64> {
        match self {
            RateGuarantee::Exponent(r) => Some(*r),
            RateGuarantee::NoGuarantee(_) => None,
        }
    }
}

/// Decay exponent of the `L^p`-sup error guaranteed for the given setting.
///
/// Wiener noise: `β/2` (`β = 1` is the classical Lipschitz case). Truncated
/// stable noise (`α ∈ (1,2)`, `α + β > 2`, `d ≥ 2`): `1/p` when `pβ ≥ 2`,
/// otherwise `β/2`.
pub fn theoretical_rate(p: f64, beta: f64, driver: Driver, dim: usize) -> RateGuarantee {
    if !(p >= 1.0) {
        return RateGuarantee::NoGuarantee(format!("p = {p} is below 1"));
    }
    match driver {
        Driver::Wiener => {
            if beta > 0.0 && beta <= 1.0 {
                RateGuarantee::Exponent(beta / 2.0)
            } else {
                RateGuarantee::NoGuarantee(format!("beta = {beta} outside (0, 1]"))
            }
        }
        Driver::TruncatedStable { alpha } => {
            if !(alpha > 1.0 && alpha < 2.0) {
                RateGuarantee::NoGuarantee(format!("alpha = {alpha} outside (1, 2)"))
            } else if !(beta > 0.0 && beta < 1.0) {
                RateGuarantee::NoGuarantee(format!("beta = {beta} outside (0, 1)"))
            } else if alpha + beta <= 2.0 {
                RateGuarantee::NoGuarantee(format!("alpha + beta = {} is not above 2", alpha + beta))
            } else if dim < 2 {
                RateGuarantee::NoGuarantee("dimension below 2".into())
            } else if p * beta >= 2.0 {
                RateGuarantee::Exponent(1.0 / p)
            } else {
                RateGuarantee::Exponent(beta / 2.0)
            }
        }
    }
}

/// Decay exponent in `n` of `E|X_t^(n) - X_{η_n(t)}^(n)|^p` for a bounded
/// drift: `p/2` for Wiener noise; for truncated stable noise `1` when
/// `p ≥ 2`, else `p/2`.
pub fn onestep_rate(p: f64, driver: Driver) -> f64 {
    match driver {
        Driver::Wiener => p / 2.0,
        Driver::TruncatedStable { .. } if p >= 2.0 => 1.0,
        Driver::TruncatedStable { .. } => p / 2.0,
    }
}

#[derive(Clone, Debug)]
pub struct OnestepSpec {
    pub drift: DriftSpec,
    pub x0: Vec<f64>,
    pub noise: NoiseSpec,
    pub p: f64,
    pub n_list: Vec<usize>,
    pub paths: usize,
    pub seed: u64,
    pub slack: f64,
}

impl OnestepSpec {
    pub fn validate(&self) -> Result<()> {
        let d = self.drift.dim();
        if self.x0.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: self.x0.len(),
            });
        }
        self.noise.validate(d)?;
        if self.n_list.is_empty() || self.n_list[0] == 0 {
            return Err(Error::InvalidRun("n_list must hold positive resolutions".into()));
        }
        if self.n_list.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidRun("n_list must be strictly increasing".into()));
        }
        let n_max = *self.n_list.last().unwrap();
        if let Some(&n) = self.n_list.iter().find(|&&n| !n_max.is_multiple_of(n)) {
            return Err(Error::NotDivisible { factor: n, steps: n_max });
        }
        if !(self.p > 0.0 && self.p.is_finite()) {
            return Err(Error::InvalidRun(format!("p must be positive, got {}", self.p)));
        }
        if self.paths < 2 {
            return Err(Error::InvalidRun(format!("need at least 2 paths, got {}", self.paths)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct OnestepOutcome {
    /// Rows hold `max_k E|X_{t_k + h/2} - X_{t_k}|^p` (raw moments, `root = 1`).
    pub table: ErrorTable,
    /// Grid index attaining the maximum, per resolution.
    pub argmax: Vec<usize>,
    pub report: RateReport,
    pub aborted: usize,
}

/// Estimates the one-step moment `max_k E|X^(n)_t - X^(n)_{t_k}|^p` at the
/// mid-step times `t = t_k + h/2` and fits its decay in `n`.
///
/// Each path is sampled once at `2 max(n)` steps. For every `n` those
/// increments are coarsened to half-steps of the `n` grid; the scheme runs on
/// the `n` grid with pairs of half-steps, and the mid-step state is the
/// continuation `X_{t_k} + b(t_k, X_{t_k}) h/2 + ΔL_{[t_k, t_k + h/2]}`.
pub fn onestep_moment_check(spec: &OnestepSpec) -> Result<OnestepOutcome> {
    spec.validate()?;
    let d = spec.drift.dim();
    let n_max = *spec.n_list.last().unwrap();
    let horizon = spec.drift.horizon();
    let fine_grid = GridSpec::new(horizon, 2 * n_max, d)?;
    let sampler = StepSampler::new(&spec.noise, &fine_grid)?;
    let streams = StreamFactory::new(spec.seed);
    let grids: Vec<GridSpec> = spec
        .n_list
        .iter()
        .map(|&n| GridSpec::new(horizon, n, d))
        .collect::<Result<_>>()?;

    // Per path: for each n, the n values |D_k|^p concatenated.
    let per_path: Vec<Option<Vec<f64>>> = (0..spec.paths as u64)
        .into_par_iter()
        .map(|path| {
            let mut fine = vec![0.0; 2 * n_max * d];
            sampler.fill(&streams, path, &mut fine);
            let mut out = Vec::new();
            let (mut half, mut full, mut states) = (Vec::new(), Vec::new(), Vec::new());
            let mut b = vec![0.0; d];
            for grid in &grids {
                let n = grid.steps();
                half.resize(2 * n * d, 0.0);
                full.resize(n * d, 0.0);
                states.resize((n + 1) * d, 0.0);
                coarsen_into(&fine, d, n_max / n, &mut half);
                coarsen_into(&half, d, 2, &mut full);
                integrate_into(&spec.drift, &spec.x0, grid, &full, &mut states).ok()?;
                let h2 = grid.step() / 2.0;
                for k in 0..n {
                    let x = &states[k * d..(k + 1) * d];
                    spec.drift.evaluate(grid.time(k), x, &mut b);
                    let dl = &half[2 * k * d..(2 * k + 1) * d];
                    let norm2: f64 = (0..d).map(|i| (b[i] * h2 + dl[i]).powi(2)).sum();
                    out.push(norm2.powf(spec.p / 2.0));
                }
            }
            Some(out)
        })
        .collect();

    let aborted = per_path.iter().filter(|r| r.is_none()).count();
    if aborted as f64 > ABORT_BUDGET * spec.paths as f64 {
        return Err(Error::OverflowBudget {
            aborted,
            paths: spec.paths,
        });
    }
    let kept: Vec<Vec<f64>> = per_path.into_iter().flatten().collect();
    let m = kept.len() as f64;

    let mut offsets = Vec::with_capacity(grids.len());
    let mut off = 0;
    for g in &grids {
        offsets.push(off);
        off += g.steps();
    }
    let mut argmax = Vec::with_capacity(grids.len());
    for (g, &o) in grids.iter().zip(&offsets) {
        let mut means = vec![0.0; g.steps()];
        for row in &kept {
            for (s, v) in means.iter_mut().zip(&row[o..o + g.steps()]) {
                *s += v;
            }
        }
        let k_star = means
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (k, &s)| if s / m > best.1 { (k, s / m) } else { best })
            .0;
        argmax.push(o + k_star);
    }
    let mut values = Vec::with_capacity(kept.len() * grids.len());
    for row in &kept {
        values.extend(argmax.iter().map(|&j| row[j]));
    }
    let samples = PathSamples::new(values, grids.len())?;
    let meta = TableMeta {
        drift: spec.drift.name().to_string(),
        noise: spec.noise.kind,
        p: spec.p,
        root: 1.0,
        paths: samples.paths(),
        seed: spec.seed,
        n_ref: None,
    };
    let table = ErrorTable::from_samples(&spec.n_list, samples, meta)?;
    let target = RateTarget {
        theoretical: Some(onestep_rate(spec.p, Driver::from_noise(&spec.noise))),
        slack: spec.slack,
    };
    let report = fit_rate(&table, target)?;
    let argmax = argmax.iter().zip(&offsets).map(|(a, o)| a - o).collect();
    Ok(OnestepOutcome {
        table,
        argmax,
        report,
        aborted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drift::catalog;
    use proptest::prelude::*;

    fn meta() -> TableMeta {
        TableMeta {
            drift: "synthetic".into(),
            noise: NoiseKind::Wiener,
            p: 2.0,
            root: 2.0,
            paths: 0,
            seed: 0,
            n_ref: None,
        }
    }

    fn power_law(c: f64, rate: f64, ns: &[usize]) -> ErrorTable {
        let rows = ns
            .iter()
            .map(|&n| {
                let e = c * (n as f64).powf(-rate);
                ErrorRow { n, e, ci_lo: e, ci_hi: e }
            })
            .collect();
        ErrorTable::from_rows(rows, meta()).unwrap()
    }

    const TARGET: RateTarget = RateTarget {
        theoretical: Some(0.5),
        slack: WIENER_SLACK,
    };

    #[test]
    fn exact_power_law() {
        let t = power_law(3.0, 0.5, &[16, 32, 64, 128, 256, 512]);
        let r = fit_rate(&t, TARGET).unwrap();
        assert!((r.slope - 0.5).abs() < 1e-12);
        assert!((r.residual_r2 - 1.0).abs() < 1e-12);
        assert!((r.intercept - 3f64.ln()).abs() < 1e-12);
        // Degenerate point intervals overlap completely only when equal.
        assert_eq!(r.verdict, Verdict::Pass);
    }

    #[test]
    fn zero_table_short_circuits() {
        let rows = [16, 32, 64, 128]
            .iter()
            .map(|&n| ErrorRow { n, e: 0.0, ci_lo: 0.0, ci_hi: 0.0 })
            .collect();
        let t = ErrorTable::from_rows(rows, meta()).unwrap();
        let r = fit_rate(&t, TARGET).unwrap();
        assert!(r.exact);
        assert_eq!(r.verdict, Verdict::Pass);
        assert!(r.slope.is_infinite());
    }

    #[test]
    fn too_few_rows() {
        let t = power_law(1.0, 0.5, &[16, 32, 64]);
        assert!(matches!(fit_rate(&t, TARGET), Err(Error::TooFewRows(3))));
        let mut t = power_law(1.0, 0.5, &[16, 32, 64, 128]);
        t.rows[0] = ErrorRow { n: 16, e: 0.0, ci_lo: 0.0, ci_hi: 0.0 };
        assert!(matches!(fit_rate(&t, TARGET), Err(Error::TooFewRows(3))));
    }

    #[test]
    fn malformed_rows_rejected() {
        let bad = vec![
            ErrorRow { n: 32, e: 1.0, ci_lo: 0.9, ci_hi: 1.1 },
            ErrorRow { n: 16, e: 1.0, ci_lo: 0.9, ci_hi: 1.1 },
        ];
        assert!(ErrorTable::from_rows(bad, meta()).is_err());
        let bad = vec![ErrorRow { n: 16, e: 1.0, ci_lo: 1.1, ci_hi: 1.2 }];
        assert!(ErrorTable::from_rows(bad, meta()).is_err());
    }

    #[test]
    fn verdicts() {
        let slow = power_law(1.0, 0.3, &[16, 32, 64, 128]);
        assert_eq!(fit_rate(&slow, TARGET).unwrap().verdict, Verdict::Fail);
        let edge = power_law(1.0, 0.41, &[16, 32, 64, 128]);
        assert_eq!(fit_rate(&edge, TARGET).unwrap().verdict, Verdict::Pass);
        let none = RateTarget { theoretical: None, slack: 0.1 };
        assert_eq!(fit_rate(&edge, none).unwrap().verdict, Verdict::Inconclusive);

        let mut wide = power_law(1.0, 0.5, &[16, 32, 64, 128]);
        for r in &mut wide.rows {
            r.ci_lo = 0.0;
            r.ci_hi = 10.0;
        }
        assert!(wide.max_adjacent_overlap() > 0.5);
        assert_eq!(fit_rate(&wide, TARGET).unwrap().verdict, Verdict::Inconclusive);
    }

    #[test]
    fn csv_layout() {
        let t = power_law(1.0, 1.0, &[1, 2]);
        assert_eq!(t.to_csv(), "n,e,ci_lo,ci_hi\n1,1.0,1.0,1.0\n2,0.5,0.5,0.5\n");
    }

    #[test]
    fn bootstrap_ci_brackets_mean() {
        let values: Vec<f64> = (0..2000).map(|i| ((i * 7919) % 1000) as f64 / 1000.0).collect();
        let samples = PathSamples::new(values, 2).unwrap();
        let mut m = meta();
        m.root = 1.0;
        let t = ErrorTable::from_samples(&[4, 8], samples, m).unwrap();
        for r in &t.rows {
            assert!(r.ci_lo < r.e && r.e < r.ci_hi);
            // SE of a U(0,1) mean over 1000 samples is about 0.009.
            assert!(r.ci_hi - r.ci_lo < 0.06 && r.ci_hi - r.ci_lo > 0.02, "{r:?}");
        }
    }

    #[test]
    fn rate_examples() {
        assert_eq!(theoretical_rate(2.0, 0.5, Driver::Wiener, 1).exponent(), Some(0.25));
        let st = Driver::TruncatedStable { alpha: 1.5 };
        assert_eq!(theoretical_rate(4.0, 0.9, st, 2).exponent(), Some(0.25));
        assert_eq!(theoretical_rate(2.0, 0.9, st, 2).exponent(), Some(0.45));
    }

    #[test]
    fn out_of_hypothesis_is_no_guarantee() {
        let st = Driver::TruncatedStable { alpha: 1.5 };
        assert!(theoretical_rate(2.0, 0.4, st, 2).exponent().is_none()); // α + β < 2
        assert!(theoretical_rate(2.0, 0.9, st, 1).exponent().is_none());
        assert!(theoretical_rate(2.0, 0.9, Driver::TruncatedStable { alpha: 2.0 }, 2)
            .exponent()
            .is_none());
        assert!(theoretical_rate(0.5, 0.5, Driver::Wiener, 1).exponent().is_none());
        assert!(theoretical_rate(2.0, 1.2, Driver::Wiener, 1).exponent().is_none());
    }

    #[test]
    fn stable_rate_is_continuous_at_the_seam() {
        // At pβ = 2 both branches give 1/p.
        let st = Driver::TruncatedStable { alpha: 1.8 };
        for p in [2.5, 3.0, 4.0] {
            let beta = 2.0 / p;
            let at = theoretical_rate(p, beta, st, 2).exponent().unwrap();
            assert_eq!(at, 1.0 / p);
            assert_eq!(at, beta / 2.0);
            let below = theoretical_rate(p, beta - 1e-9, st, 2).exponent().unwrap();
            assert!((below - at).abs() < 1e-8);
        }
    }

    #[test]
    fn wiener_rate_increases_in_beta() {
        let rates: Vec<f64> = (1..=20)
            .map(|i| theoretical_rate(2.0, i as f64 / 20.0, Driver::Wiener, 1).exponent().unwrap())
            .collect();
        assert!(rates.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn onestep_wiener_zero_drift() {
        // E|ΔW_{h/2}|^2 = d h / 2 with h = 1/n: slope 1 in n.
        let spec = OnestepSpec {
            drift: catalog("zero", &[], 2, 1.0).unwrap(),
            x0: vec![0.0; 2],
            noise: NoiseSpec::wiener(),
            p: 2.0,
            n_list: vec![8, 16, 32, 64, 128],
            paths: 10_000,
            seed: 3,
            slack: 0.15,
        };
        let out = onestep_moment_check(&spec).unwrap();
        for r in &out.table.rows {
            let expected = 2.0 * (0.5 / r.n as f64);
            assert!((r.e / expected - 1.0).abs() < 0.08, "{r:?}");
        }
        assert!((out.report.slope - 1.0).abs() < 0.03, "{:?}", out.report);
        assert_eq!(out.report.verdict, Verdict::Pass);
    }

    #[test]
    fn onestep_validation() {
        let base = OnestepSpec {
            drift: catalog("zero", &[], 1, 1.0).unwrap(),
            x0: vec![0.0],
            noise: NoiseSpec::wiener(),
            p: 2.0,
            n_list: vec![8, 16, 32, 64],
            paths: 10,
            seed: 3,
            slack: 0.15,
        };
        let mut s = base.clone();
        s.n_list = vec![8, 12, 64];
        assert!(onestep_moment_check(&s).is_err());
        let mut s = base.clone();
        s.paths = 1;
        assert!(onestep_moment_check(&s).is_err());
        let mut s = base;
        s.x0 = vec![0.0, 0.0];
        assert!(onestep_moment_check(&s).is_err());
    }

    proptest! {
        #[test]
        fn fit_recovers_any_power_law(c in 0.01f64..100.0, rate in 0.05f64..2.0) {
            let t = power_law(c, rate, &[4, 8, 16, 32, 64, 128, 256]);
            let r = fit_rate(&t, TARGET).unwrap();
            prop_assert!((r.slope - rate).abs() < 1e-12);
            prop_assert!((r.residual_r2 - 1.0).abs() < 1e-12);
        }
    }
}
