//! Euler–Maruyama laboratory for SDEs of the form
//!
//! ```text
//! X_t = x0 + ∫_0^t b(s, X_s) ds + L_t
//! ```
//!
//! with a bounded Hölder-continuous drift `b` and a driver `L` that is either a
//! Wiener process or a truncated symmetric α-stable process. The crate provides
//! reproducible noise sampling, the integrator itself, coupled multi-resolution
//! strong-error estimation, convergence-rate fitting, and numerical probes of the
//! heat-semigroup gradient bounds that control the error.

pub mod drift;
pub mod em;
mod error;
pub mod kolmogorov;
pub mod noise;
pub mod rates;
pub mod rng;

pub use drift::{DriftChoice, DriftSpec, HolderReport};
pub use em::{coupled_run, euler_maruyama, CoupledOutcome, CoupledRunSpec, PathGrid};
pub use error::{Error, Result};
pub use noise::{coarsen, GridSpec, IncrementArray, NoiseKind, NoiseSpec, SmallJumpMode};
pub use rates::{fit_rate, theoretical_rate, Driver, ErrorRow, ErrorTable, RateReport, Verdict};
