//! Config-driven experiment runner for `emlab`.
//!
//! A run reads one [`ExperimentConfig`], validates it completely, then writes
//! three artifacts into its output directory:
//!
//! * `errors.csv`: `n,e,ci_lo,ci_hi`, one row per resolution (header only for
//!   experiments without an error table);
//! * `report.json`: the rate report or probe report;
//! * `manifest.json`: the full config, seed, versions, thread count and wall
//!   time, enough to replay the run.
//!
//! Probe experiments add `ratios.csv`, `moments.csv` or `partition.csv`.

pub mod config;
pub mod presets;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use emlab::kolmogorov::{
    build_partition, gradient_bound_check, gradient_fd_discrepancy, stable_gradient_probe, Partition,
    SemigroupProbe, StableProbeSpec, sine_test_function,
};
use emlab::noise::{sup_moments, terminal_second_moment};
use emlab::rates::{onestep_moment_check, onestep_rate, ols, OnestepSpec, RateTarget, STABLE_SLACK, WIENER_SLACK};
use emlab::{coupled_run, fit_rate, theoretical_rate, CoupledRunSpec, Driver, NoiseKind, Verdict};
use serde_json::{json, Value};

pub use config::{Experiment, ExperimentConfig};

/// Environment variable naming the base directory for run outputs.
pub const OUTPUT_DIR_ENV: &str = "EMLAB_OUTPUT_DIR";

pub const ERRORS_CSV_HEADER: &str = "n,e,ci_lo,ci_hi\n";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("run aborted: {0}")]
    Runtime(String),
    #[error("i/o error on {path}: {message}")]
    Io { path: PathBuf, message: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) | CliError::Io { .. } => 3,
        }
    }
}

fn config_err(e: emlab::Error) -> CliError {
    CliError::Config(e.to_string())
}

fn runtime_err(e: emlab::Error) -> CliError {
    CliError::Runtime(e.to_string())
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Exit status for a finished run: 0 for a pass or no verdict, 1 for a fail.
pub fn verdict_exit_code(verdict: Option<Verdict>) -> i32 {
    match verdict {
        Some(Verdict::Fail) => 1,
        _ => 0,
    }
}

/// A fully validated experiment, ready to execute.
enum Plan {
    Rate(CoupledRunSpec, RateTarget, Value),
    Onestep(OnestepSpec, Value),
    NoiseMoments(config::NoiseMomentsConfig),
    Heat(SemigroupProbe, SemigroupProbe, config::HeatConfig),
    Stable(StableProbeSpec),
    Partition(Partition),
}

fn x0_or_zeros(x0: &Option<Vec<f64>>, dim: usize) -> Vec<f64> {
    x0.clone().unwrap_or_else(|| vec![0.0; dim])
}

fn default_slack(kind: NoiseKind) -> f64 {
    match kind {
        NoiseKind::Wiener => WIENER_SLACK,
        NoiseKind::TruncatedStable => STABLE_SLACK,
    }
}

fn grid_end(t_grid: &[f64]) -> f64 {
    t_grid.iter().copied().fold(0.0, f64::max).max(f64::MIN_POSITIVE)
}

fn plan(cfg: &ExperimentConfig) -> Result<Plan, CliError> {
    if cfg.threads == Some(0) {
        return Err(CliError::Config("threads must be positive".into()));
    }
    let seed = cfg.seed;
    Ok(match &cfg.experiment {
        Experiment::Rate(r) => {
            let drift = r.drift.build(r.dim, r.horizon).map_err(config_err)?;
            let noise = r.noise.spec();
            noise.validate(r.dim).map_err(config_err)?;
            let spec = CoupledRunSpec {
                x0: x0_or_zeros(&r.x0, r.dim),
                noise,
                n_list: r.n_list.clone(),
                n_ref: r.n_ref,
                p: r.p,
                paths: r.paths,
                seed,
                drift,
            };
            spec.validate().map_err(config_err)?;
            let guarantee = theoretical_rate(r.p, spec.drift.beta(), Driver::from_noise(&noise), r.dim);
            let target = RateTarget {
                theoretical: guarantee.exponent(),
                slack: r.slack.unwrap_or(default_slack(noise.kind)),
            };
            Plan::Rate(spec, target, serde_json::to_value(guarantee).expect("serialisable"))
        }
        Experiment::Onestep(o) => {
            let noise = o.noise.spec();
            let spec = OnestepSpec {
                drift: o.drift.build(o.dim, o.horizon).map_err(config_err)?,
                x0: x0_or_zeros(&o.x0, o.dim),
                noise,
                p: o.p,
                n_list: o.n_list.clone(),
                paths: o.paths,
                seed,
                slack: o.slack.unwrap_or(STABLE_SLACK),
            };
            spec.validate().map_err(config_err)?;
            let theory = json!(onestep_rate(o.p, Driver::from_noise(&noise)));
            Plan::Onestep(spec, theory)
        }
        Experiment::NoiseMoments(m) => {
            let spec = m.noise.spec();
            spec.validate(m.dim).map_err(config_err)?;
            emlab::GridSpec::new(m.horizon, 1, m.dim).map_err(config_err)?;
            if m.paths < 2 || m.sup_paths < 2 {
                return Err(CliError::Config("noise moments need at least 2 paths".into()));
            }
            if m.sup_substeps == 0 || m.sup_times.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
                return Err(CliError::Config("sup times must be positive with at least one substep".into()));
            }
            if m.sup_powers.iter().any(|p| !(*p > 0.0 && p.is_finite())) {
                return Err(CliError::Config("sup powers must be positive".into()));
            }
            Plan::NoiseMoments(m.clone())
        }
        Experiment::KolmogorovHeat(h) => {
            let phi = h.phi.build(1, grid_end(&h.t_grid)).map_err(config_err)?;
            let probe = SemigroupProbe::new(phi, h.t_grid.clone(), h.x_grid.clone(), h.quad_nodes)
                .map_err(config_err)?;
            if !(h.fd_step > 0.0 && h.fd_tolerance > 0.0) {
                return Err(CliError::Config("fd_step and fd_tolerance must be positive".into()));
            }
            let smooth = SemigroupProbe::new(
                sine_test_function(),
                h.fd_t_grid.clone(),
                h.fd_x_grid.clone(),
                h.quad_nodes,
            )
            .map_err(config_err)?;
            Plan::Heat(probe, smooth, h.clone())
        }
        Experiment::KolmogorovStable(s) => {
            let spec = StableProbeSpec {
                phi: s.phi.build(2, grid_end(&s.t_grid)).map_err(config_err)?,
                alpha: s.alpha,
                t_grid: s.t_grid.clone(),
                x_grid: s.x_grid.clone(),
                mc_samples: s.mc_samples,
                seed,
                eps: s.eps,
                time_nodes: s.time_nodes,
                fd_step: s.fd_step,
            };
            spec.validate().map_err(config_err)?;
            Plan::Stable(spec)
        }
        Experiment::Partition(p) => Plan::Partition(
            build_partition(p.epsilon, p.c0, p.norm_phi, p.norm_b, p.horizon, p.kind()?).map_err(config_err)?,
        ),
    })
}

/// Parses and validates a config without running it.
pub fn validate(text: &str) -> Result<ExperimentConfig, CliError> {
    let cfg = ExperimentConfig::from_toml(text)?;
    plan(&cfg)?;
    Ok(cfg)
}

struct Outcome {
    verdict: Option<Verdict>,
    errors_csv: String,
    report: Value,
    extra: Vec<(&'static str, String)>,
}

fn verdict_of(ok: bool) -> Verdict {
    if ok {
        Verdict::Pass
    } else {
        Verdict::Fail
    }
}

fn execute(cfg: &ExperimentConfig, plan: Plan) -> Result<Outcome, CliError> {
    let kind = cfg.experiment.kind();
    match plan {
        Plan::Rate(spec, target, guarantee) => {
            let outcome = coupled_run(&spec).map_err(runtime_err)?;
            let report = fit_rate(&outcome.table, target).map_err(runtime_err)?;
            Ok(Outcome {
                verdict: Some(report.verdict),
                errors_csv: outcome.table.to_csv(),
                report: json!({
                    "kind": kind,
                    "verdict": report.verdict,
                    "guarantee": guarantee,
                    "rate": report,
                    "rows": outcome.table.rows,
                    "aborted_paths": outcome.aborted,
                }),
                extra: Vec::new(),
            })
        }
        Plan::Onestep(spec, theory) => {
            let outcome = onestep_moment_check(&spec).map_err(runtime_err)?;
            Ok(Outcome {
                verdict: Some(outcome.report.verdict),
                errors_csv: outcome.table.to_csv(),
                report: json!({
                    "kind": kind,
                    "verdict": outcome.report.verdict,
                    "theoretical_rate": theory,
                    "rate": outcome.report,
                    "rows": outcome.table.rows,
                    "argmax_step": outcome.argmax,
                    "aborted_paths": outcome.aborted,
                }),
                extra: Vec::new(),
            })
        }
        Plan::NoiseMoments(m) => {
            let spec = m.noise.spec();
            let terminal =
                terminal_second_moment(&spec, m.dim, m.horizon, m.paths, cfg.seed).map_err(runtime_err)?;
            let expected = spec.second_moment_rate(m.dim) * m.horizon;
            let z = (terminal.mean - expected) / terminal.std_err;
            let table = sup_moments(
                &spec,
                m.dim,
                &m.sup_times,
                m.sup_substeps,
                &m.sup_powers,
                m.sup_paths,
                cfg.seed.wrapping_add(1),
            )
            .map_err(runtime_err)?;
            let mut csv = String::from("t,p,mean,std_err\n");
            let mut slopes = Vec::new();
            for (pi, &p) in m.sup_powers.iter().enumerate() {
                let lx: Vec<f64> = m.sup_times.iter().map(|t| t.ln()).collect();
                let ly: Vec<f64> = table.iter().map(|row| row[pi].mean.ln()).collect();
                let fit = ols(&lx, &ly);
                slopes.push(json!({ "p": p, "slope": fit.slope, "r2": fit.r2 }));
            }
            for (t, row) in m.sup_times.iter().zip(&table) {
                for (p, est) in m.sup_powers.iter().zip(row) {
                    csv.push_str(&format!("{t:?},{p:?},{:?},{:?}\n", est.mean, est.std_err));
                }
            }
            Ok(Outcome {
                verdict: None,
                errors_csv: ERRORS_CSV_HEADER.into(),
                report: json!({
                    "kind": kind,
                    "verdict": Value::Null,
                    "terminal_second_moment": terminal,
                    "expected_second_moment": expected,
                    "z_score": z,
                    "sup_moment_slopes": slopes,
                }),
                extra: vec![("moments.csv", csv)],
            })
        }
        Plan::Heat(probe, smooth, h) => {
            let bound = gradient_bound_check(&probe).map_err(runtime_err)?;
            let fd = gradient_fd_discrepancy(&smooth, h.fd_step).map_err(runtime_err)?;
            let verdict = verdict_of(bound.bounded && fd <= h.fd_tolerance);
            Ok(Outcome {
                verdict: Some(verdict),
                errors_csv: ERRORS_CSV_HEADER.into(),
                extra: vec![("ratios.csv", ratios_csv(&bound.times, &bound.ratios))],
                report: json!({
                    "kind": kind,
                    "verdict": verdict,
                    "bound": bound,
                    "fd_phi": "sin",
                    "fd_discrepancy": fd,
                    "fd_tolerance": h.fd_tolerance,
                }),
            })
        }
        Plan::Stable(spec) => {
            let report = stable_gradient_probe(&spec).map_err(runtime_err)?;
            let verdict = verdict_of(report.bound.bounded);
            Ok(Outcome {
                verdict: Some(verdict),
                errors_csv: ERRORS_CSV_HEADER.into(),
                extra: vec![("ratios.csv", ratios_csv(&report.bound.times, &report.bound.ratios))],
                report: json!({ "kind": kind, "verdict": verdict, "probe": report }),
            })
        }
        Plan::Partition(partition) => {
            let violations = partition.violations();
            let verdict = verdict_of(violations.is_empty());
            let mut csv = String::from("j,t\n");
            for (j, t) in partition.points.iter().enumerate() {
                csv.push_str(&format!("{j},{t:?}\n"));
            }
            Ok(Outcome {
                verdict: Some(verdict),
                errors_csv: ERRORS_CSV_HEADER.into(),
                extra: vec![("partition.csv", csv)],
                report: json!({
                    "kind": kind,
                    "verdict": verdict,
                    "delta": partition.delta,
                    "m": partition.m(),
                    "violations": violations,
                    "partition": partition,
                }),
            })
        }
    }
}

fn ratios_csv(times: &[f64], ratios: &[f64]) -> String {
    let mut csv = String::from("t,ratio\n");
    for (t, r) in times.iter().zip(ratios) {
        csv.push_str(&format!("{t:?},{r:?}\n"));
    }
    csv
}

/// Where a run writes, and how many workers it uses.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub output_dir: Option<PathBuf>,
    pub threads: Option<usize>,
    /// Name used for the default output directory.
    pub label: Option<String>,
    /// Where the config came from, recorded in the manifest.
    pub source: Option<String>,
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub output_dir: PathBuf,
    pub verdict: Option<Verdict>,
    pub report: Value,
    pub threads: usize,
}

impl RunSummary {
    pub fn exit_code(&self) -> i32 {
        verdict_exit_code(self.verdict)
    }
}

/// Output directory: explicit option, then the config's `output_dir`, then
/// `$EMLAB_OUTPUT_DIR/<label>`, then `emlab-out/<label>`.
pub fn resolve_output_dir(cfg: &ExperimentConfig, opts: &RunOptions) -> PathBuf {
    if let Some(dir) = opts.output_dir.clone().or_else(|| cfg.output_dir.clone()) {
        return dir;
    }
    let label = opts.label.clone().unwrap_or_else(|| cfg.experiment.kind().to_string());
    let base = std::env::var_os(OUTPUT_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("emlab-out"));
    base.join(label)
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<(), CliError> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(io_err(&path))
}

/// Validates, runs and writes all artifacts. Nothing is written when the
/// config is invalid.
pub fn run_config(text: &str, opts: &RunOptions) -> Result<RunSummary, CliError> {
    let cfg = ExperimentConfig::from_toml(text)?;
    let plan = plan(&cfg)?;
    let threads = opts
        .threads
        .or(cfg.threads)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if threads == 0 {
        return Err(CliError::Config("threads must be positive".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))?;

    let started = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let clock = Instant::now();
    let outcome = pool.install(|| execute(&cfg, plan))?;
    let wall = clock.elapsed().as_secs_f64();

    let dir = resolve_output_dir(&cfg, opts);
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    write(&dir, "errors.csv", &outcome.errors_csv)?;
    write(&dir, "report.json", &pretty(&outcome.report))?;
    let mut outputs = vec!["errors.csv", "report.json"];
    for (name, contents) in &outcome.extra {
        write(&dir, name, contents)?;
        outputs.push(name);
    }
    outputs.push("manifest.json");
    let manifest = json!({
        "tool": "emlab",
        "version": env!("CARGO_PKG_VERSION"),
        "kind": cfg.experiment.kind(),
        "source": opts.source,
        "seed": cfg.seed,
        "threads": threads,
        "started_unix": started,
        "wall_time_s": wall,
        "verdict": outcome.verdict,
        "outputs": outputs,
        "config": cfg,
        "config_toml": cfg.to_toml(),
    });
    write(&dir, "manifest.json", &pretty(&manifest))?;
    Ok(RunSummary {
        output_dir: dir,
        verdict: outcome.verdict,
        report: outcome.report,
        threads,
    })
}

/// Re-runs the config stored in a manifest.
pub fn replay_manifest(manifest: &str, opts: &RunOptions) -> Result<RunSummary, CliError> {
    let value: Value = serde_json::from_str(manifest).map_err(|e| CliError::Config(e.to_string()))?;
    let text = value
        .get("config_toml")
        .and_then(Value::as_str)
        .ok_or_else(|| CliError::Config("manifest has no config_toml".into()))?;
    let mut opts = opts.clone();
    if opts.threads.is_none() {
        opts.threads = value.get("threads").and_then(Value::as_u64).map(|t| t as usize);
    }
    run_config(text, &opts)
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json");
    s.push('\n');
    s
}
