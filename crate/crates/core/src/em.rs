//! Euler–Maruyama integration and coupled multi-resolution strong errors.
//!
//! On the grid `t_k = kT/n` the scheme is
//!
//! ```text
//! X_{t_{k+1}} = X_{t_k} + b(t_k, X_{t_k}) h + ΔL_k
//! ```
//!
//! The true solution is not available, so [`coupled_run`] uses the scheme on a
//! fine reference grid `n_ref` as a proxy and drives every coarse grid with the
//! block sums of the same fine increments. Errors are sampled on the coarse
//! grid points only.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::drift::DriftSpec;
use crate::noise::{coarsen_into, GridSpec, IncrementArray, NoiseSpec, StepSampler};
use crate::rates::{ErrorTable, PathSamples, TableMeta};
use crate::rng::StreamFactory;
use crate::{Error, Result};

/// Per-path errors at or below this fraction of the path's scale are treated
/// as roundoff and recorded as exactly zero.
pub const ROUNDOFF_REL: f64 = 1e-12;

/// Minimum ratio `n_ref / max(n_list)`.
pub const MIN_REFINEMENT: usize = 16;

/// Fraction of aborted paths that fails a run.
pub const ABORT_BUDGET: f64 = 1e-3;

/// States `X_{t_k}`, `k = 0..=n`, of one Euler–Maruyama path, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct PathGrid {
    grid: GridSpec,
    x0: Vec<f64>,
    states: Vec<f64>,
}

impl PathGrid {
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn x0(&self) -> &[f64] {
        &self.x0
    }

    pub fn states(&self) -> &[f64] {
        &self.states
    }

    pub fn state(&self, k: usize) -> &[f64] {
        let d = self.grid.dim();
        &self.states[k * d..(k + 1) * d]
    }

    /// Re-evaluates the recursion against `incr` and returns the largest
    /// absolute mismatch (zero when the path was produced by the scheme).
    pub fn replay_mismatch(&self, drift: &DriftSpec, incr: &IncrementArray) -> f64 {
        let d = self.grid.dim();
        let h = self.grid.step();
        let mut b = vec![0.0; d];
        let mut worst = 0.0f64;
        for (i, v) in self.state(0).iter().enumerate() {
            worst = worst.max((v - self.x0[i]).abs());
        }
        for k in 0..self.grid.steps() {
            let x = self.state(k);
            drift.evaluate(self.grid.time(k), x, &mut b);
            let next = self.state(k + 1);
            for i in 0..d {
                let expected = step(x[i], b[i], h, incr.row(k)[i]);
                worst = worst.max((next[i] - expected).abs());
            }
        }
        worst
    }
}

#[inline(always)]
fn step(x: f64, b: f64, h: f64, dl: f64) -> f64 {
    x + b * h + dl
}

/// Runs the scheme over `increments` (row-major `n × d`), writing all `n + 1`
/// states into `states`.
pub(crate) fn integrate_into(
    drift: &DriftSpec,
    x0: &[f64],
    grid: &GridSpec,
    increments: &[f64],
    states: &mut [f64],
) -> Result<()> {
    let d = grid.dim();
    let h = grid.step();
    let n = grid.steps();
    states[..d].copy_from_slice(x0);
    let mut b = vec![0.0; d];
    for k in 0..n {
        let (head, tail) = states.split_at_mut((k + 1) * d);
        let x = &head[k * d..];
        drift.evaluate(grid.time(k), x, &mut b);
        let dl = &increments[k * d..(k + 1) * d];
        let mut finite = true;
        for i in 0..d {
            let v = step(x[i], b[i], h, dl[i]);
            finite &= v.is_finite();
            tail[i] = v;
        }
        if !finite {
            return Err(Error::NonFiniteState { step: k + 1, steps: n });
        }
    }
    Ok(())
}

/// Euler–Maruyama path driven by `incr`, started at `x0`.
pub fn euler_maruyama(drift: &DriftSpec, x0: &[f64], incr: &IncrementArray) -> Result<PathGrid> {
    let grid = *incr.grid();
    let d = grid.dim();
    if drift.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: drift.dim(),
            actual: d,
        });
    }
    if x0.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: x0.len(),
        });
    }
    let mut states = vec![0.0; (grid.steps() + 1) * d];
    integrate_into(drift, x0, &grid, incr.values(), &mut states)?;
    Ok(PathGrid {
        grid,
        x0: x0.to_vec(),
        states,
    })
}

/// One path's error functional on the coarse grid with `n_coarse` steps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoupledError {
    pub n_coarse: usize,
    pub p: f64,
    /// `sup_k |X^ref_{t_k} - X^(n)_{t_k}|^p` over the coarse grid points.
    pub sup_error_p: f64,
}

#[derive(Clone, Debug)]
pub struct CoupledRunSpec {
    pub drift: DriftSpec,
    pub x0: Vec<f64>,
    pub noise: NoiseSpec,
    pub n_list: Vec<usize>,
    pub n_ref: usize,
    pub p: f64,
    pub paths: usize,
    pub seed: u64,
}

impl CoupledRunSpec {
    pub fn validate(&self) -> Result<()> {
        let d = self.drift.dim();
        if self.x0.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: self.x0.len(),
            });
        }
        self.noise.validate(d)?;
        if self.n_list.is_empty() {
            return Err(Error::InvalidRun("n_list is empty".into()));
        }
        if self.n_list.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidRun("n_list must be strictly increasing".into()));
        }
        if self.n_ref == 0 || self.n_list[0] == 0 {
            return Err(Error::InvalidRun("resolutions must be positive".into()));
        }
        if let Some(&n) = self.n_list.iter().find(|&&n| !self.n_ref.is_multiple_of(n)) {
            return Err(Error::NotDivisible {
                factor: n,
                steps: self.n_ref,
            });
        }
        let max = *self.n_list.last().unwrap();
        if self.n_ref / max < MIN_REFINEMENT {
            return Err(Error::InvalidRun(format!(
                "n_ref / max(n_list) = {} is below {MIN_REFINEMENT}",
                self.n_ref / max
            )));
        }
        if !(self.p >= 1.0 && self.p.is_finite()) {
            return Err(Error::InvalidRun(format!("p must be >= 1, got {}", self.p)));
        }
        if self.paths < 2 {
            return Err(Error::InvalidRun(format!("need at least 2 paths, got {}", self.paths)));
        }
        if !self.x0.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidRun("x0 must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct CoupledOutcome {
    pub table: ErrorTable,
    /// Paths dropped because the state went non-finite.
    pub aborted: usize,
}

/// Coupled fine/coarse simulation of the strong `L^p`-sup error.
///
/// Each path samples increments at `n_ref`, integrates the reference, and for
/// every `n` integrates the coarsened increments. The table holds
/// `e(n) = (mean_paths sup^p)^{1/p}` with bootstrap intervals; per-path
/// samples are retained for the rate fit.
pub fn coupled_run(spec: &CoupledRunSpec) -> Result<CoupledOutcome> {
    spec.validate()?;
    let d = spec.drift.dim();
    let horizon = spec.drift.horizon();
    let fine_grid = GridSpec::new(horizon, spec.n_ref, d)?;
    let sampler = StepSampler::new(&spec.noise, &fine_grid)?;
    let streams = StreamFactory::new(spec.seed);
    let coarse_grids: Vec<GridSpec> = spec
        .n_list
        .iter()
        .map(|&n| GridSpec::new(horizon, n, d))
        .collect::<Result<_>>()?;

    let per_path: Vec<Option<Vec<f64>>> = (0..spec.paths as u64)
        .into_par_iter()
        .map(|path| {
            coupled_path(spec, &sampler, &streams, &fine_grid, &coarse_grids, path)
        })
        .collect();

    let aborted = per_path.iter().filter(|r| r.is_none()).count();
    if aborted as f64 > ABORT_BUDGET * spec.paths as f64 {
        return Err(Error::OverflowBudget {
            aborted,
            paths: spec.paths,
        });
    }
    let columns = spec.n_list.len();
    let mut values = Vec::with_capacity((spec.paths - aborted) * columns);
    for row in per_path.into_iter().flatten() {
        values.extend(row);
    }
    let samples = PathSamples::new(values, columns)?;
    let meta = TableMeta {
        drift: spec.drift.name().to_string(),
        noise: spec.noise.kind,
        p: spec.p,
        root: spec.p,
        paths: samples.paths(),
        seed: spec.seed,
        n_ref: Some(spec.n_ref),
    };
    let table = ErrorTable::from_samples(&spec.n_list, samples, meta)?;
    Ok(CoupledOutcome { table, aborted })
}

fn coupled_path(
    spec: &CoupledRunSpec,
    sampler: &StepSampler,
    streams: &StreamFactory,
    fine_grid: &GridSpec,
    coarse_grids: &[GridSpec],
    path: u64,
) -> Option<Vec<f64>> {
    let d = fine_grid.dim();
    let mut fine = vec![0.0; spec.n_ref * d];
    sampler.fill(streams, path, &mut fine);
    let mut reference = vec![0.0; (spec.n_ref + 1) * d];
    integrate_into(&spec.drift, &spec.x0, fine_grid, &fine, &mut reference).ok()?;
    let scale = reference
        .chunks_exact(d)
        .map(|x| x.iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0f64, f64::max);

    let mut out = Vec::with_capacity(coarse_grids.len());
    let mut coarse = Vec::new();
    let mut states = Vec::new();
    for grid in coarse_grids {
        let n = grid.steps();
        let factor = spec.n_ref / n;
        coarse.resize(n * d, 0.0);
        states.resize((n + 1) * d, 0.0);
        coarsen_into(&fine, d, factor, &mut coarse);
        integrate_into(&spec.drift, &spec.x0, grid, &coarse, &mut states).ok()?;
        let mut sup = 0.0f64;
        for k in 0..=n {
            let a = &states[k * d..(k + 1) * d];
            let r = &reference[k * factor * d..(k * factor + 1) * d];
            let dist = a.iter().zip(r).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt();
            sup = sup.max(dist);
        }
        let value = if sup <= ROUNDOFF_REL * (1.0 + scale) {
            0.0
        } else {
            sup.powf(spec.p)
        };
        out.push(value);
    }
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drift::catalog;
    use crate::noise::{sample_increments, wiener_increments};

    #[test]
    fn zero_drift_gives_partial_sums() {
        let g = GridSpec::new(1.0, 32, 2).unwrap();
        let incr = wiener_increments(&g, 1, 0).unwrap();
        let zero = catalog("zero", &[], 2, 1.0).unwrap();
        let x0 = [0.5, -1.0];
        let path = euler_maruyama(&zero, &x0, &incr).unwrap();
        let mut acc = x0.to_vec();
        assert_eq!(path.state(0), &x0);
        for k in 0..32 {
            for i in 0..2 {
                acc[i] += incr.row(k)[i];
            }
            // x + 0·h + dl is exactly x + dl
            assert_eq!(path.state(k + 1), acc.as_slice());
        }
    }

    #[test]
    fn constant_drift_is_exact() {
        let g = GridSpec::new(2.0, 64, 1).unwrap();
        let incr = wiener_increments(&g, 2, 0).unwrap();
        let c = catalog("constant", &[0.75], 1, 2.0).unwrap();
        let path = euler_maruyama(&c, &[1.0], &incr).unwrap();
        let sums = incr.partial_sums();
        for k in 0..=64 {
            let exact = 1.0 + 0.75 * g.time(k) + sums[k];
            assert!((path.state(k)[0] - exact).abs() < 1e-13);
        }
    }

    #[test]
    fn lip_clamp_matches_manual_recursion() {
        // Four steps of X_{k+1} = X_k - clamp(X_k, -1, 1)/4 + ΔW_k written out.
        let g = GridSpec::new(1.0, 4, 1).unwrap();
        let incr = wiener_increments(&g, 17, 3).unwrap();
        let w: Vec<f64> = incr.values().to_vec();
        let drift = catalog("lip_clamp", &[1.0], 1, 1.0).unwrap();
        let path = euler_maruyama(&drift, &[0.9], &incr).unwrap();

        let clamp = |x: f64| if x > 1.0 { 1.0 } else if x < -1.0 { -1.0 } else { x };
        let x1 = 0.9 - clamp(0.9) * 0.25 + w[0];
        let x2 = x1 - clamp(x1) * 0.25 + w[1];
        let x3 = x2 - clamp(x2) * 0.25 + w[2];
        let x4 = x3 - clamp(x3) * 0.25 + w[3];
        let want = [0.9, x1, x2, x3, x4];
        for k in 0..5 {
            assert!((path.state(k)[0] - want[k]).abs() < 1e-15, "k={k}");
        }
    }

    #[test]
    fn replay_is_exact() {
        let g = GridSpec::new(1.0, 128, 2).unwrap();
        let noise = NoiseSpec::truncated_stable(1.5, 0.01);
        let incr = sample_increments(&g, &noise, 5, 1).unwrap();
        for (name, params) in [("holder_sign", vec![1.0, 0.5]), ("holder_time", vec![1.0, 0.9, 0.5])] {
            let drift = catalog(name, &params, 2, 1.0).unwrap();
            let path = euler_maruyama(&drift, &[0.1, -0.2], &incr).unwrap();
            assert_eq!(path.replay_mismatch(&drift, &incr), 0.0);
        }
    }

    #[test]
    fn dimension_checks() {
        let g = GridSpec::new(1.0, 4, 2).unwrap();
        let incr = wiener_increments(&g, 0, 0).unwrap();
        let d1 = catalog("zero", &[], 1, 1.0).unwrap();
        assert!(matches!(
            euler_maruyama(&d1, &[0.0], &incr),
            Err(Error::DimensionMismatch { .. })
        ));
        let d2 = catalog("zero", &[], 2, 1.0).unwrap();
        assert!(euler_maruyama(&d2, &[0.0], &incr).is_err());
    }

    #[test]
    fn overflow_aborts_with_diagnostic() {
        let blowup = DriftSpec::custom("blowup", 1, 1.0, 1.0, 1.0, 1.0, 0.0, 1.0, |_, x, out| {
            out[0] = x[0] * 1e300;
        });
        let g = GridSpec::new(1.0, 8, 1).unwrap();
        let incr = wiener_increments(&g, 0, 0).unwrap();
        let err = euler_maruyama(&blowup, &[1e10], &incr).unwrap_err();
        assert!(matches!(err, Error::NonFiniteState { .. }));
    }

    fn spec(drift: DriftSpec, n_list: Vec<usize>, n_ref: usize, paths: usize) -> CoupledRunSpec {
        let d = drift.dim();
        CoupledRunSpec {
            drift,
            x0: vec![0.0; d],
            noise: NoiseSpec::wiener(),
            n_list,
            n_ref,
            p: 2.0,
            paths,
            seed: 11,
        }
    }

    #[test]
    fn coupled_run_validation() {
        let zero = catalog("zero", &[], 1, 1.0).unwrap();
        assert!(coupled_run(&spec(zero.clone(), vec![16, 32], 256, 1)).is_err());
        assert!(coupled_run(&spec(zero.clone(), vec![16, 48], 768, 4)).is_ok());
        assert!(matches!(
            coupled_run(&spec(zero.clone(), vec![16, 24], 256, 4)),
            Err(Error::NotDivisible { .. })
        ));
        assert!(coupled_run(&spec(zero.clone(), vec![16, 32], 256, 4)).is_err());
        assert!(coupled_run(&spec(zero.clone(), vec![32, 16], 1024, 4)).is_err());
        let mut s = spec(zero, vec![4, 8], 128, 4);
        s.p = 0.5;
        assert!(coupled_run(&s).is_err());
    }

    #[test]
    fn constant_drift_has_zero_error() {
        let c = catalog("constant", &[2.0], 2, 1.0).unwrap();
        let out = coupled_run(&spec(c, vec![4, 8, 16, 32], 512, 50)).unwrap();
        assert_eq!(out.aborted, 0);
        for row in &out.table.rows {
            assert_eq!(row.e, 0.0);
        }
    }

    #[test]
    fn errors_shrink_with_resolution() {
        let drift = catalog("holder_sign", &[1.0, 0.5], 1, 1.0).unwrap();
        let out = coupled_run(&spec(drift, vec![8, 16, 32, 64], 1024, 400)).unwrap();
        let rows = &out.table.rows;
        for w in rows.windows(2) {
            // non-increasing up to CI overlap
            assert!(w[1].ci_lo <= w[0].ci_hi, "{rows:?}");
        }
        assert!(rows[0].e > rows[3].e);
    }

    #[test]
    fn overflow_budget_fails_run() {
        let blowup = DriftSpec::custom("blowup", 1, 1.0, 1.0, 1.0, 1.0, 0.0, 1.0, |_, x, out| {
            out[0] = if x[0] > 0.0 { f64::INFINITY } else { 0.0 };
        });
        let err = coupled_run(&spec(blowup, vec![4, 8], 128, 100)).unwrap_err();
        assert!(matches!(err, Error::OverflowBudget { .. }));
    }

    #[test]
    fn coupled_run_is_thread_count_invariant() {
        let drift = catalog("holder_sign", &[1.0, 0.5], 1, 1.0).unwrap();
        let s = spec(drift, vec![8, 16, 32, 64], 1024, 200);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| coupled_run(&s).unwrap())
        };
        let a = run(1);
        let b = run(3);
        assert_eq!(a.table.rows, b.table.rows);
    }
}
