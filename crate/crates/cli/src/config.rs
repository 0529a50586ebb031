//! Experiment configuration files.
//!
//! A config is a TOML document with a few top-level keys and one
//! `[experiment]` table selected by `kind`. Unknown keys are rejected at
//! every level.

use std::path::PathBuf;

use emlab::kolmogorov::PartitionKind;
use emlab::{DriftChoice, NoiseKind, NoiseSpec, SmallJumpMode};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed; every random stream of the run derives from it.
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Worker threads; defaults to the machine's parallelism.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    pub experiment: Experiment,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Experiment {
    Rate(RateConfig),
    Onestep(OnestepConfig),
    NoiseMoments(NoiseMomentsConfig),
    KolmogorovHeat(HeatConfig),
    KolmogorovStable(StableConfig),
    Partition(PartitionConfig),
}

impl Experiment {
    pub fn kind(&self) -> &'static str {
        match self {
            Experiment::Rate(_) => "rate",
            Experiment::Onestep(_) => "onestep",
            Experiment::NoiseMoments(_) => "noise-moments",
            Experiment::KolmogorovHeat(_) => "kolmogorov-heat",
            Experiment::KolmogorovStable(_) => "kolmogorov-stable",
            Experiment::Partition(_) => "partition",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseConfig {
    Wiener,
    TruncatedStable {
        alpha: f64,
        #[serde(default = "default_eps")]
        eps: f64,
        #[serde(default)]
        small_jumps: SmallJumpMode,
    },
}

fn default_eps() -> f64 {
    emlab::noise::DEFAULT_EPS
}

impl NoiseConfig {
    pub fn spec(&self) -> NoiseSpec {
        match *self {
            NoiseConfig::Wiener => NoiseSpec::wiener(),
            NoiseConfig::TruncatedStable { alpha, eps, small_jumps } => {
                NoiseSpec::truncated_stable(alpha, eps).with_small_jumps(small_jumps)
            }
        }
    }

    pub fn kind(&self) -> NoiseKind {
        self.spec().kind
    }
}

fn default_horizon() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateConfig {
    pub drift: DriftChoice,
    pub noise: NoiseConfig,
    pub dim: usize,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    /// Initial state; zeros when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    pub p: f64,
    pub n_list: Vec<usize>,
    pub n_ref: usize,
    pub paths: usize,
    /// Allowed shortfall of the slope below theory; per-driver default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slack: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OnestepConfig {
    pub drift: DriftChoice,
    pub noise: NoiseConfig,
    pub dim: usize,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    pub p: f64,
    pub n_list: Vec<usize>,
    pub paths: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slack: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseMomentsConfig {
    pub noise: NoiseConfig,
    pub dim: usize,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    /// Paths for the terminal second moment.
    pub paths: usize,
    /// Times at which `E sup_{s≤t} |L_s|^p` is estimated.
    pub sup_times: Vec<f64>,
    pub sup_substeps: usize,
    pub sup_powers: Vec<f64>,
    pub sup_paths: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeatConfig {
    /// Test function, one-dimensional.
    pub phi: DriftChoice,
    pub t_grid: Vec<f64>,
    pub x_grid: Vec<f64>,
    #[serde(default = "default_quad_nodes")]
    pub quad_nodes: usize,
    /// Finite-difference cross-check of the gradient, run on `sin`.
    #[serde(default = "default_fd_t_grid")]
    pub fd_t_grid: Vec<f64>,
    #[serde(default = "default_fd_x_grid")]
    pub fd_x_grid: Vec<f64>,
    #[serde(default = "default_heat_fd_step")]
    pub fd_step: f64,
    #[serde(default = "default_fd_tolerance")]
    pub fd_tolerance: f64,
}

fn default_fd_t_grid() -> Vec<f64> {
    vec![0.05, 0.1, 0.2, 0.4, 0.8]
}

fn default_fd_x_grid() -> Vec<f64> {
    vec![-1.0, -0.3, 0.0, 0.4, 1.2]
}

fn default_quad_nodes() -> usize {
    64
}

fn default_heat_fd_step() -> f64 {
    1e-4
}

fn default_fd_tolerance() -> f64 {
    1e-5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StableConfig {
    /// Test function, two-dimensional.
    pub phi: DriftChoice,
    pub alpha: f64,
    pub eps: f64,
    pub t_grid: Vec<f64>,
    pub x_grid: Vec<[f64; 2]>,
    pub mc_samples: usize,
    #[serde(default = "default_time_nodes")]
    pub time_nodes: usize,
    #[serde(default = "default_stable_fd_step")]
    pub fd_step: f64,
}

fn default_time_nodes() -> usize {
    32
}

fn default_stable_fd_step() -> f64 {
    1e-2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionConfig {
    pub epsilon: f64,
    pub c0: f64,
    pub norm_phi: f64,
    pub norm_b: f64,
    pub horizon: f64,
    pub driver: PartitionDriver,
    /// Stability index, stable driver only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionDriver {
    Wiener,
    TruncatedStable,
}

impl PartitionConfig {
    pub fn kind(&self) -> Result<PartitionKind, CliError> {
        match (self.driver, self.alpha) {
            (PartitionDriver::Wiener, None) => Ok(PartitionKind::Wiener),
            (PartitionDriver::TruncatedStable, Some(alpha)) => Ok(PartitionKind::Stable { alpha }),
            (PartitionDriver::Wiener, Some(_)) => Err(CliError::Config("alpha given for a Wiener partition".into())),
            (PartitionDriver::TruncatedStable, None) => Err(CliError::Config("stable partition needs alpha".into())),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }
}
