use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid noise specification: {0}")]
    InvalidNoise(String),

    #[error("invalid drift specification: {0}")]
    InvalidDrift(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("coarsening factor {factor} does not divide {steps} steps")]
    NotDivisible { factor: usize, steps: usize },

    #[error("non-finite state at step {step} of {steps}")]
    NonFiniteState { step: usize, steps: usize },

    #[error("{aborted} of {paths} paths aborted on non-finite states (budget is 0.1%)")]
    OverflowBudget { aborted: usize, paths: usize },

    #[error("invalid run parameters: {0}")]
    InvalidRun(String),

    #[error("rate fit needs at least 4 usable rows, got {0}")]
    TooFewRows(usize),

    #[error("quadrature did not converge: achieved error {achieved:.3e} against tolerance {tolerance:.3e}")]
    Quadrature { achieved: f64, tolerance: f64 },

    #[error("Monte Carlo CI half-width {half_width:.3e} exceeds 10% of bound {bound:.3e} at t={t}; increase mc_samples (now {samples})")]
    SampleSize {
        t: f64,
        half_width: f64,
        bound: f64,
        samples: usize,
    },

    #[error("invalid probe: {0}")]
    InvalidProbe(String),
}
