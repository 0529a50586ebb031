//! Drift coefficients `b(t, x)` with certified Hölder metadata.
//!
//! Every catalog entry carries its spatial exponent `β`, temporal exponent `η`,
//! the smallest constants `K_x`, `K_t` with
//! `|b(t,x) - b(t,y)| ≤ K_x |x-y|^β` and `|b(t,x) - b(s,x)| ≤ K_t |t-s|^η`
//! (Euclidean norms), and `sup |b|`.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::{StreamFactory, RESERVED_PATHS};
use crate::{Error, Result};

/// Drift selection as it appears in configuration files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum DriftChoice {
    Zero,
    Constant { c: f64 },
    LipClamp { k: f64 },
    HolderSign { k: f64, beta: f64 },
    HolderTime { k: f64, beta: f64, eta: f64 },
}

impl DriftChoice {
    /// Looks a drift up by catalog name with positional parameters, e.g.
    /// `("holder_sign", &[1.0, 0.5])` for `K = 1`, `β = 0.5`.
    pub fn from_name(name: &str, params: &[f64]) -> Result<Self> {
        let want = |n: usize| -> Result<()> {
            if params.len() == n {
                Ok(())
            } else {
                Err(Error::InvalidDrift(format!(
                    "{name} takes {n} parameters, got {}",
                    params.len()
                )))
            }
        };
        Ok(match name {
            "zero" => {
                want(0)?;
                DriftChoice::Zero
            }
            "constant" => {
                want(1)?;
                DriftChoice::Constant { c: params[0] }
            }
            "lip_clamp" => {
                want(1)?;
                DriftChoice::LipClamp { k: params[0] }
            }
            "holder_sign" => {
                want(2)?;
                DriftChoice::HolderSign {
                    k: params[0],
                    beta: params[1],
                }
            }
            "holder_time" => {
                want(3)?;
                DriftChoice::HolderTime {
                    k: params[0],
                    beta: params[1],
                    eta: params[2],
                }
            }
            other => return Err(Error::InvalidDrift(format!("unknown drift {other:?}"))),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            DriftChoice::Zero => "zero",
            DriftChoice::Constant { .. } => "constant",
            DriftChoice::LipClamp { .. } => "lip_clamp",
            DriftChoice::HolderSign { .. } => "holder_sign",
            DriftChoice::HolderTime { .. } => "holder_time",
        }
    }

    /// Builds the drift in dimension `dim` on the horizon `[0, horizon]`.
    pub fn build(&self, dim: usize, horizon: f64) -> Result<DriftSpec> {
        if dim == 0 {
            return Err(Error::InvalidDrift("dimension must be positive".into()));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidDrift(format!("horizon must be positive, got {horizon}")));
        }
        let check_k = |k: f64| -> Result<()> {
            if k.is_finite() && k > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidDrift(format!("K must be positive, got {k}")))
            }
        };
        let check_beta = |beta: f64| -> Result<()> {
            if beta > 0.0 && beta <= 1.0 {
                Ok(())
            } else {
                Err(Error::InvalidDrift(format!("beta must lie in (0, 1], got {beta}")))
            }
        };
        let check_eta = |eta: f64| -> Result<()> {
            if (0.5..=1.0).contains(&eta) {
                Ok(())
            } else {
                Err(Error::InvalidDrift(format!("eta must lie in [1/2, 1], got {eta}")))
            }
        };
        let root_d = (dim as f64).sqrt();
        let spec = match *self {
            DriftChoice::Zero => DriftSpec::raw("zero", dim, horizon, 1.0, 1.0, 0.0, 0.0, 0.0, DriftFn::Zero),
            DriftChoice::Constant { c } => {
                if !c.is_finite() {
                    return Err(Error::InvalidDrift(format!("constant must be finite, got {c}")));
                }
                DriftSpec::raw(
                    "constant",
                    dim,
                    horizon,
                    1.0,
                    1.0,
                    0.0,
                    0.0,
                    c.abs() * root_d,
                    DriftFn::Constant(c),
                )
            }
            DriftChoice::LipClamp { k } => {
                check_k(k)?;
                DriftSpec::raw("lip_clamp", dim, horizon, 1.0, 1.0, k, 0.0, k * root_d, DriftFn::LipClamp(k))
            }
            DriftChoice::HolderSign { k, beta } => {
                check_k(k)?;
                check_beta(beta)?;
                DriftSpec::raw(
                    "holder_sign",
                    dim,
                    horizon,
                    beta,
                    1.0,
                    k * sign_power_constant(beta, dim),
                    0.0,
                    k * root_d,
                    DriftFn::HolderSign { k, beta },
                )
            }
            DriftChoice::HolderTime { k, beta, eta } => {
                check_k(k)?;
                check_beta(beta)?;
                check_eta(eta)?;
                DriftSpec::raw(
                    "holder_time",
                    dim,
                    horizon,
                    beta,
                    eta,
                    k * sign_power_constant(beta, dim),
                    // |(t/T)^η - (s/T)^η| ≤ |t-s|^η / T^η, attained at s = 0.
                    k * root_d / horizon.powf(eta),
                    k * root_d,
                    DriftFn::HolderTime { k, beta, eta, horizon },
                )
            }
        };
        Ok(spec)
    }
}

/// Best constant of `x ↦ sgn(x) min(|x|,1)^β` applied componentwise in `R^d`:
/// `2^{1-β}` from opposite-sign pairs `x = -y`, times `d^{(1-β)/2}` from
/// spreading the displacement evenly over the coordinates.
fn sign_power_constant(beta: f64, dim: usize) -> f64 {
    2f64.powf(1.0 - beta) * (dim as f64).powf((1.0 - beta) / 2.0)
}

#[inline]
fn sign_power(x: f64, beta: f64) -> f64 {
    let m = x.abs().min(1.0);
    if m == 0.0 {
        0.0
    } else {
        x.signum() * m.powf(beta)
    }
}

type CustomFn = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;

#[derive(Clone)]
enum DriftFn {
    Zero,
    Constant(f64),
    LipClamp(f64),
    HolderSign { k: f64, beta: f64 },
    HolderTime { k: f64, beta: f64, eta: f64, horizon: f64 },
    Custom(CustomFn),
}

/// A drift `b: [0,T] × R^d → R^d` together with its regularity metadata.
#[derive(Clone)]
pub struct DriftSpec {
    name: String,
    dim: usize,
    horizon: f64,
    beta: f64,
    eta: f64,
    space_constant: f64,
    time_constant: f64,
    sup_norm: f64,
    func: DriftFn,
}

impl fmt::Debug for DriftSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DriftSpec")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("beta", &self.beta)
            .field("eta", &self.eta)
            .field("space_constant", &self.space_constant)
            .field("time_constant", &self.time_constant)
            .field("sup_norm", &self.sup_norm)
            .finish()
    }
}

impl DriftSpec {
    #[allow(clippy::too_many_arguments)]
    fn raw(
        name: &str,
        dim: usize,
        horizon: f64,
        beta: f64,
        eta: f64,
        space_constant: f64,
        time_constant: f64,
        sup_norm: f64,
        func: DriftFn,
    ) -> Self {
        Self {
            name: name.to_string(),
            dim,
            horizon,
            beta,
            eta,
            space_constant,
            time_constant,
            sup_norm,
            func,
        }
    }

    /// Wraps an arbitrary function. The caller vouches for the metadata;
    /// [`verify_holder`] can spot-check it.
    #[allow(clippy::too_many_arguments)]
    pub fn custom<F>(
        name: &str,
        dim: usize,
        horizon: f64,
        beta: f64,
        eta: f64,
        space_constant: f64,
        time_constant: f64,
        sup_norm: f64,
        f: F,
    ) -> Self
    where
        F: Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        Self::raw(
            name,
            dim,
            horizon,
            beta,
            eta,
            space_constant,
            time_constant,
            sup_norm,
            DriftFn::Custom(Arc::new(f)),
        )
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// Single Hölder constant `K` covering both space and time.
    pub fn k(&self) -> f64 {
        self.space_constant.max(self.time_constant)
    }

    pub fn space_constant(&self) -> f64 {
        self.space_constant
    }

    pub fn time_constant(&self) -> f64 {
        self.time_constant
    }

    pub fn sup_norm(&self) -> f64 {
        self.sup_norm
    }

    /// `‖b‖_{C_b^β} = sup|b| + [b]_β`.
    pub fn holder_norm(&self) -> f64 {
        self.sup_norm + self.space_constant
    }

    /// The same function multiplied by `factor`, metadata rescaled.
    pub fn scaled(&self, factor: f64) -> DriftSpec {
        let inner = self.clone();
        let a = factor.abs();
        Self::custom(
            &format!("{}*{factor}", self.name),
            self.dim,
            self.horizon,
            self.beta,
            self.eta,
            a * self.space_constant,
            a * self.time_constant,
            a * self.sup_norm,
            move |t, x, out| {
                inner.evaluate(t, x, out);
                out.iter_mut().for_each(|v| *v *= factor);
            },
        )
    }

    /// Writes `b(t, x)` into `out`.
    #[inline]
    pub fn evaluate(&self, t: f64, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim);
        match &self.func {
            DriftFn::Zero => out.fill(0.0),
            DriftFn::Constant(c) => out.fill(*c),
            DriftFn::LipClamp(k) => {
                for (o, xi) in out.iter_mut().zip(x) {
                    *o = -k * xi.clamp(-1.0, 1.0);
                }
            }
            DriftFn::HolderSign { k, beta } => {
                for (o, xi) in out.iter_mut().zip(x) {
                    *o = k * sign_power(*xi, *beta);
                }
            }
            DriftFn::HolderTime { k, beta, eta, horizon } => {
                let w = k * (t / horizon).clamp(0.0, 1.0).powf(*eta);
                for (o, xi) in out.iter_mut().zip(x) {
                    *o = w * sign_power(*xi, *beta);
                }
            }
            DriftFn::Custom(f) => f(t, x, out),
        }
    }

    /// Convenience allocation-returning form of [`DriftSpec::evaluate`].
    pub fn eval(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.evaluate(t, x, &mut out);
        out
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.func, DriftFn::Zero | DriftFn::Constant(_))
    }
}

/// Catalog lookup by name and positional parameters.
pub fn catalog(name: &str, params: &[f64], dim: usize, horizon: f64) -> Result<DriftSpec> {
    DriftChoice::from_name(name, params)?.build(dim, horizon)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HolderReport {
    pub max_space_ratio: f64,
    pub max_time_ratio: f64,
    pub max_abs: f64,
}

impl HolderReport {
    /// Both ratios within the declared constants (relative slack `1e-9`) and
    /// the sampled sup within `sup_norm`.
    pub fn certifies(&self, spec: &DriftSpec) -> bool {
        let tol = 1.0 + 1e-9;
        self.max_space_ratio <= spec.space_constant() * tol
            && self.max_time_ratio <= spec.time_constant() * tol
            && self.max_abs <= spec.sup_norm() * tol
    }
}

/// Spot-checks the Hölder metadata on random pairs in `[0,T] × [-2,2]^d`.
pub fn verify_holder(spec: &DriftSpec, samples: usize, seed: u64) -> Result<HolderReport> {
    if samples < 1000 {
        return Err(Error::InvalidDrift(format!("need at least 1000 samples, got {samples}")));
    }
    let d = spec.dim();
    let horizon = spec.horizon();
    let mut rng = StreamFactory::new(seed).stream(RESERVED_PATHS, 0);
    let (mut x, mut y) = (vec![0.0; d], vec![0.0; d]);
    let (mut bx, mut by) = (vec![0.0; d], vec![0.0; d]);
    let mut report = HolderReport {
        max_space_ratio: 0.0,
        max_time_ratio: 0.0,
        max_abs: 0.0,
    };
    let norm = |a: &[f64], b: &[f64]| -> f64 {
        a.iter().zip(b).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt()
    };
    for _ in 0..samples {
        let t = rng.random::<f64>() * horizon;
        let s = rng.random::<f64>() * horizon;
        x.iter_mut().for_each(|v| *v = rng.random_range(-2.0..2.0));
        y.iter_mut().for_each(|v| *v = rng.random_range(-2.0..2.0));

        spec.evaluate(t, &x, &mut bx);
        spec.evaluate(t, &y, &mut by);
        let dx = norm(&x, &y);
        if dx > 0.0 {
            let r = norm(&bx, &by) / dx.powf(spec.beta());
            report.max_space_ratio = report.max_space_ratio.max(r);
        }
        report.max_abs = report
            .max_abs
            .max(bx.iter().map(|v| v * v).sum::<f64>().sqrt());

        spec.evaluate(s, &x, &mut by);
        let dt = (t - s).abs();
        if dt > 0.0 {
            let r = norm(&bx, &by) / dt.powf(spec.eta());
            report.max_time_ratio = report.max_time_ratio.max(r);
        }
    }
    Ok(report)
}
