//! Time-varying bound functions and the state-to-error constraint transform.
//!
//! Every envelope kind has a closed-form value and derivative; the controller
//! never differentiates numerically.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Time below which the derivative of a PPF with `ν < 1` is treated as singular.
pub const T_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnvelopeError {
    #[error("invalid envelope parameters: {0}")]
    InvalidParameters(String),
    #[error("envelope derivative is singular at t = {t} (PPF with nu < 1)")]
    DerivativeSingularity { t: f64 },
    #[error("threshold {epsilon} outside the open interval ({lo}, {hi})")]
    ThresholdOutOfRange { epsilon: f64, lo: f64, hi: f64 },
    #[error("envelope is not positive at t = {t} (value {value})")]
    NonPositiveEnvelope { t: f64, value: f64 },
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),
    #[error("negative time {0}")]
    NegativeTime(f64),
}

pub type Result<T> = std::result::Result<T, EnvelopeError>;

/// Generalized performance function
/// `φ(t) = (φ⁰ − φ^∞)/(1 + κ t^ν) + φ^∞`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerformanceFunction {
    pub phi0: f64,
    pub phi_inf: f64,
    pub kappa: f64,
    pub nu: f64,
}

impl PerformanceFunction {
    pub fn new(phi0: f64, phi_inf: f64, kappa: f64, nu: f64) -> Result<Self> {
        let pf = Self {
            phi0,
            phi_inf,
            kappa,
            nu,
        };
        pf.validate()?;
        Ok(pf)
    }

    pub fn validate(&self) -> Result<()> {
        let all_finite = [self.phi0, self.phi_inf, self.kappa, self.nu]
            .iter()
            .all(|v| v.is_finite());
        if !all_finite {
            return Err(EnvelopeError::InvalidParameters(
                "performance function parameters must be finite".into(),
            ));
        }
        if !(self.phi0 > self.phi_inf && self.phi_inf > 0.0) {
            return Err(EnvelopeError::InvalidParameters(format!(
                "need phi0 > phi_inf > 0, got phi0 = {}, phi_inf = {}",
                self.phi0, self.phi_inf
            )));
        }
        if !(self.kappa > 0.0 && self.nu > 0.0) {
            return Err(EnvelopeError::InvalidParameters(format!(
                "need kappa > 0 and nu > 0, got kappa = {}, nu = {}",
                self.kappa, self.nu
            )));
        }
        Ok(())
    }

    pub fn value(&self, t: f64) -> f64 {
        (self.phi0 - self.phi_inf) / (1.0 + self.kappa * t.powf(self.nu)) + self.phi_inf
    }

    /// Closed-form derivative. Infinite at `t = 0` when `ν < 1`.
    pub fn derivative(&self, t: f64) -> f64 {
        let denom = 1.0 + self.kappa * t.powf(self.nu);
        -(self.phi0 - self.phi_inf) * self.kappa * self.nu * t.powf(self.nu - 1.0) / (denom * denom)
    }

    /// Time at which the envelope reaches `epsilon`.
    pub fn convergence_time(&self, epsilon: f64) -> Result<f64> {
        if !(epsilon > self.phi_inf && epsilon < self.phi0) {
            return Err(EnvelopeError::ThresholdOutOfRange {
                epsilon,
                lo: self.phi_inf,
                hi: self.phi0,
            });
        }
        let ratio = (self.phi0 - self.phi_inf) / (epsilon - self.phi_inf);
        Ok(((ratio - 1.0) / self.kappa).powf(1.0 / self.nu))
    }

    pub fn has_singular_derivative(&self) -> bool {
        self.nu < 1.0
    }
}

/// How to treat the `t^(ν−1)` singularity of concave PPFs near `t = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DerivativePolicy {
    /// Reject evaluations below [`T_FLOOR`].
    #[default]
    Strict,
    /// Evaluate the PPF derivative at `max(t, T_FLOOR)`.
    Clamp,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvelopeSample {
    pub value: f64,
    pub derivative: f64,
}

/// A time-varying bound. Literals in scenario files use the `kind` tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum Envelope {
    #[serde(rename = "const")]
    Constant { c: f64 },
    #[serde(rename = "ppf")]
    Ppf(PerformanceFunction),
    /// `a·exp(b·t) + c`
    #[serde(rename = "exp")]
    Exponential { a: f64, b: f64, c: f64 },
    /// `a·sin(ω t + phase) + offset`
    #[serde(rename = "sin")]
    Sinusoid {
        a: f64,
        omega: f64,
        phase: f64,
        offset: f64,
    },
    /// `inner(t)·1{t_on ≤ t ≤ t_off}`
    #[serde(rename = "window")]
    Window {
        inner: Box<Envelope>,
        t_on: f64,
        t_off: f64,
    },
    #[serde(rename = "sum")]
    Sum { terms: Vec<Envelope> },
    /// `gain·inner(t)`
    #[serde(rename = "scale")]
    Scaled { gain: f64, inner: Box<Envelope> },
}

impl Envelope {
    pub fn constant(c: f64) -> Self {
        Envelope::Constant { c }
    }

    pub fn ppf(phi0: f64, phi_inf: f64, kappa: f64, nu: f64) -> Result<Self> {
        PerformanceFunction::new(phi0, phi_inf, kappa, nu).map(Envelope::Ppf)
    }

    pub fn exponential(a: f64, b: f64, c: f64) -> Self {
        Envelope::Exponential { a, b, c }
    }

    pub fn sinusoid(a: f64, omega: f64, phase: f64, offset: f64) -> Self {
        Envelope::Sinusoid {
            a,
            omega,
            phase,
            offset,
        }
    }

    pub fn window(inner: Envelope, t_on: f64, t_off: f64) -> Self {
        Envelope::Window {
            inner: Box::new(inner),
            t_on,
            t_off,
        }
    }

    pub fn sum(terms: Vec<Envelope>) -> Self {
        Envelope::Sum { terms }
    }

    pub fn scaled(gain: f64, inner: Envelope) -> Self {
        Envelope::Scaled {
            gain,
            inner: Box::new(inner),
        }
    }

    /// Checks parameter sanity recursively. Deserialized literals skip the
    /// constructors, so scenario loading calls this explicitly.
    pub fn validate(&self) -> Result<()> {
        let finite = |vals: &[f64]| -> Result<()> {
            if vals.iter().all(|v| v.is_finite()) {
                Ok(())
            } else {
                Err(EnvelopeError::InvalidParameters(
                    "envelope parameters must be finite".into(),
                ))
            }
        };
        match self {
            Envelope::Constant { c } => finite(&[*c]),
            Envelope::Ppf(pf) => pf.validate(),
            Envelope::Exponential { a, b, c } => finite(&[*a, *b, *c]),
            Envelope::Sinusoid {
                a,
                omega,
                phase,
                offset,
            } => finite(&[*a, *omega, *phase, *offset]),
            Envelope::Window { inner, t_on, t_off } => {
                finite(&[*t_on, *t_off])?;
                if t_on > t_off {
                    return Err(EnvelopeError::InvalidParameters(format!(
                        "window t_on = {t_on} after t_off = {t_off}"
                    )));
                }
                inner.validate()
            }
            Envelope::Sum { terms } => terms.iter().try_for_each(Envelope::validate),
            Envelope::Scaled { gain, inner } => {
                finite(&[*gain])?;
                inner.validate()
            }
        }
    }

    /// Value only; safe for plotting any kind at any `t ≥ 0`.
    pub fn value(&self, t: f64) -> f64 {
        match self {
            Envelope::Constant { c } => *c,
            Envelope::Ppf(pf) => pf.value(t),
            Envelope::Exponential { a, b, c } => a * (b * t).exp() + c,
            Envelope::Sinusoid {
                a,
                omega,
                phase,
                offset,
            } => a * (omega * t + phase).sin() + offset,
            Envelope::Window { inner, t_on, t_off } => {
                if *t_on <= t && t <= *t_off {
                    inner.value(t)
                } else {
                    0.0
                }
            }
            Envelope::Sum { terms } => terms.iter().map(|e| e.value(t)).sum(),
            Envelope::Scaled { gain, inner } => gain * inner.value(t),
        }
    }

    /// Value and closed-form derivative with the strict singularity policy.
    pub fn eval(&self, t: f64) -> Result<EnvelopeSample> {
        self.eval_with(t, DerivativePolicy::Strict)
    }

    pub fn eval_with(&self, t: f64, policy: DerivativePolicy) -> Result<EnvelopeSample> {
        if t < 0.0 {
            return Err(EnvelopeError::NegativeTime(t));
        }
        Ok(EnvelopeSample {
            value: self.value(t),
            derivative: self.derivative(t, policy)?,
        })
    }

    fn derivative(&self, t: f64, policy: DerivativePolicy) -> Result<f64> {
        Ok(match self {
            Envelope::Constant { .. } => 0.0,
            Envelope::Ppf(pf) => {
                if pf.has_singular_derivative() && t < T_FLOOR {
                    match policy {
                        DerivativePolicy::Strict => return Err(EnvelopeError::DerivativeSingularity { t }),
                        DerivativePolicy::Clamp => pf.derivative(T_FLOOR),
                    }
                } else {
                    pf.derivative(t)
                }
            }
            Envelope::Exponential { a, b, .. } => a * b * (b * t).exp(),
            Envelope::Sinusoid { a, omega, phase, .. } => a * omega * (omega * t + phase).cos(),
            // One-sided at the switch instants: the active branch wins.
            Envelope::Window { inner, t_on, t_off } => {
                if *t_on <= t && t <= *t_off {
                    inner.derivative(t, policy)?
                } else {
                    0.0
                }
            }
            Envelope::Sum { terms } => {
                let mut acc = 0.0;
                for term in terms {
                    acc += term.derivative(t, policy)?;
                }
                acc
            }
            Envelope::Scaled { gain, inner } => gain * inner.derivative(t, policy)?,
        })
    }

    /// True if any component is a PPF with `ν < 1`.
    pub fn has_singular_derivative(&self) -> bool {
        match self {
            Envelope::Ppf(pf) => pf.has_singular_derivative(),
            Envelope::Window { inner, .. } | Envelope::Scaled { inner, .. } => inner.has_singular_derivative(),
            Envelope::Sum { terms } => terms.iter().any(Envelope::has_singular_derivative),
            _ => false,
        }
    }

    /// Largest value over a grid.
    pub fn grid_max(&self, grid: &[f64]) -> f64 {
        grid.iter().map(|&t| self.value(t)).fold(f64::NEG_INFINITY, f64::max)
    }
}

/// `t_k = t0 + k·step` up to and including `t1` (to within half a step).
pub fn uniform_grid(t0: f64, t1: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !(t1 >= t0) || !t0.is_finite() || !t1.is_finite() {
        return Err(EnvelopeError::InvalidGrid(format!(
            "need step > 0 and t1 >= t0, got t0 = {t0}, t1 = {t1}, step = {step}"
        )));
    }
    let n = ((t1 - t0) / step).round() as usize;
    Ok((0..=n).map(|k| t0 + k as f64 * step).collect())
}

pub fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(EnvelopeError::InvalidGrid("empty grid".into()));
    }
    if grid[0] < 0.0 {
        return Err(EnvelopeError::NegativeTime(grid[0]));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(EnvelopeError::InvalidGrid("grid must be strictly increasing".into()));
    }
    Ok(())
}

/// `φ_e = φ_x − 𝒳_r`, checked positive on every grid point.
pub fn derive_error_envelope(phi_x: &Envelope, chi_r: &Envelope, grid: &[f64]) -> Result<Envelope> {
    check_grid(grid)?;
    let phi_e = Envelope::sum(vec![phi_x.clone(), Envelope::scaled(-1.0, chi_r.clone())]);
    ensure_positive(&phi_e, grid)?;
    Ok(phi_e)
}

fn ensure_positive(env: &Envelope, grid: &[f64]) -> Result<()> {
    for &t in grid {
        let value = env.value(t);
        if !(value > 0.0) {
            return Err(EnvelopeError::NonPositiveEnvelope { t, value });
        }
    }
    Ok(())
}

/// The triple `(φ_x, φ_u, 𝒳_r)` plus the derived error envelope `φ_e`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSet {
    pub phi_x: Envelope,
    pub phi_u: Envelope,
    pub chi_r: Envelope,
    pub phi_e: Envelope,
}

impl ConstraintSet {
    /// Starts from the state bound and derives `φ_e = φ_x − 𝒳_r`.
    pub fn from_state_bound(phi_x: Envelope, phi_u: Envelope, chi_r: Envelope, grid: &[f64]) -> Result<Self> {
        let phi_e = derive_error_envelope(&phi_x, &chi_r, grid)?;
        ensure_positive(&phi_u, grid)?;
        Ok(Self {
            phi_x,
            phi_u,
            chi_r,
            phi_e,
        })
    }

    /// Starts from the error bound; the state bound is `φ_x = φ_e + 𝒳_r`.
    pub fn from_error_bound(phi_e: Envelope, phi_u: Envelope, chi_r: Envelope, grid: &[f64]) -> Result<Self> {
        check_grid(grid)?;
        ensure_positive(&phi_e, grid)?;
        ensure_positive(&phi_u, grid)?;
        let phi_x = Envelope::sum(vec![phi_e.clone(), chi_r.clone()]);
        Ok(Self {
            phi_x,
            phi_u,
            chi_r,
            phi_e,
        })
    }
}
