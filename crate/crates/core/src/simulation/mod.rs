//! Closed-loop integration, margin tracking and the Monte-Carlo noise harness.

mod closed_loop;
mod integrator;
mod log;
mod monte_carlo;
mod scenario;

use std::convert::Infallible;
use std::fmt;

use thiserror::Error;

use crate::controller::{ControlError, ControllerConfig};
use crate::envelope::EnvelopeError;
use crate::feasibility::FeasibilityError;
use crate::linalg::{LinalgError, Matrix, Vector};

pub use closed_loop::{closed_loop_rhs, ClosedLoop, ClosedLoopDerivative, ClosedLoopState};
pub use integrator::Rk4;
pub use log::SimLog;
pub use monte_carlo::{monte_carlo, p_avg, GaussianNoise, MonteCarloReport};
pub use scenario::{Bounds, ConstraintSource, NoiseSettings, Scenario, ValidationReport};

use closed_loop::StageBreach;

#[derive(Clone, PartialEq, Error)]
pub enum SimError {
    #[error("validation error: {0}")]
    Validation(String),
    #[error("barrier breach at t = {t}: eᵀPe = {quadratic:.6e}, φ'_e² = {limit:.6e}")]
    BarrierBreach {
        t: f64,
        quadratic: f64,
        limit: f64,
        /// Samples logged before the breach.
        log: Option<Box<SimLog>>,
    },
    #[error("state left the finite range at t = {t}")]
    NonFiniteState { t: f64, log: Option<Box<SimLog>> },
    #[error("the Monte-Carlo window contains no samples")]
    EmptyWindow,
    #[error(transparent)]
    Envelope(#[from] EnvelopeError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Feasibility(#[from] FeasibilityError),
}

impl fmt::Debug for SimError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // The partial log can be huge; keep debug output to the message.
        write!(f, "SimError({self})")
    }
}

impl SimError {
    pub(crate) fn breach_without_log(b: StageBreach) -> Self {
        SimError::BarrierBreach {
            t: b.t,
            quadratic: b.quadratic,
            limit: b.limit,
            log: None,
        }
    }

    /// Partial log carried by a breach or a blow-up, if any.
    pub fn partial_log(&self) -> Option<&SimLog> {
        match self {
            SimError::BarrierBreach { log, .. } | SimError::NonFiniteState { log, .. } => log.as_deref(),
            _ => None,
        }
    }

    fn with_log(self, partial: SimLog) -> Self {
        match self {
            SimError::BarrierBreach {
                t, quadratic, limit, ..
            } => SimError::BarrierBreach {
                t,
                quadratic,
                limit,
                log: Some(Box::new(partial)),
            },
            SimError::NonFiniteState { t, .. } => SimError::NonFiniteState {
                t,
                log: Some(Box::new(partial)),
            },
            other => other,
        }
    }
}

/// `h_m = φ'_e² − e_mᵀPe_m`; negative means the measured error left the barrier set.
pub fn margin_h(e_m: &Vector, p: &Matrix, phi_e_prime: f64) -> f64 {
    phi_e_prime * phi_e_prime - crate::controller::quadratic_form(p, e_m)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    /// Log the total Lyapunov function using the true ideal gain.
    pub oracle: bool,
}

/// Noise-free run over `[0, T]` at the scenario's step.
pub fn run(scenario: &Scenario, config: &ControllerConfig) -> Result<SimLog, SimError> {
    run_with(scenario, config, RunOptions { oracle: false })
}

pub fn run_with(scenario: &Scenario, config: &ControllerConfig, options: RunOptions) -> Result<SimLog, SimError> {
    let mut cl = ClosedLoop::new(scenario, config)?;
    let oracle = if options.oracle {
        let gains = scenario.matched_gains()?;
        if gains.is_matched() {
            let gamma_inv = config
                .gamma_x
                .clone()
                .try_inverse()
                .ok_or(SimError::Linalg(LinalgError::SingularSystem))?;
            Some((gains.k_x, gamma_inv))
        } else {
            None
        }
    } else {
        None
    };

    let mut log = SimLog::with_capacity(scenario.steps() + 1, oracle.is_some());
    let mut rk = Rk4::new(cl.dim());
    let mut y = ClosedLoopState {
        x: scenario.x0.clone(),
        x_r: scenario.xr0.clone(),
        k_hat_x: scenario.k_hat_x0.clone(),
    }
    .pack();
    let steps = scenario.steps();
    let dt = scenario.dt;

    for k in 0..=steps {
        let t = k as f64 * dt;
        let state = ClosedLoopState::unpack(&y, cl.n, cl.m);
        let output = match cl.output(t, &state.x, &state.x_r, &state.k_hat_x) {
            Ok(o) => o,
            Err(e) => return Err(e.with_log(log)),
        };
        let phi_e = scenario.constraints.phi_e.value(t);
        let e = &state.x - &state.x_r;
        let h = margin_h(&e, &cl.p, cl.phi_e_prime(phi_e));
        let lyap = oracle.as_ref().map(|(k_x, gamma_inv)| {
            let k_tilde = &state.k_hat_x - k_x;
            0.5 * output.v_e + (k_tilde.transpose() * gamma_inv * &k_tilde).trace()
        });
        log.push(t, &state, output, h, lyap, scenario);

        if k == steps {
            break;
        }
        if let Err(e) = rk.step(|t, y, dy| cl.rhs(t, y, dy), t, dt, &mut y) {
            return Err(SimError::from(e).with_log(log));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(SimError::NonFiniteState { t: t + dt, log: None }.with_log(log));
        }
        clamp_gain(&mut y, 2 * cl.n, config.k_bar_x);
    }
    Ok(log)
}

/// Pulls `K̂_x` back onto the `K̄_x` ball if a discrete step left it.
pub(crate) fn clamp_gain(y: &mut Vector, offset: usize, k_bar: f64) {
    let k = &mut y.as_mut_slice()[offset..];
    let norm = k.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > k_bar {
        let s = k_bar / norm;
        k.iter_mut().for_each(|v| *v *= s);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assumption1Report {
    pub pass: bool,
    pub sup_norm: f64,
    pub first_violation: Option<f64>,
}

/// Integrates the reference model alone over `grid` and checks
/// `‖x_r(t)‖ ≤ 𝒳_r(t) < φ_x(t)` at every grid point.
pub fn validate_assumption1(scenario: &Scenario, grid: &[f64]) -> Assumption1Report {
    let n = scenario.state_dim();
    let mut rk = Rk4::new(n);
    let mut x_r = scenario.xr0.clone();
    let mut sup_norm: f64 = 0.0;
    let mut first_violation = None;
    let c = &scenario.constraints;
    for (k, &t) in grid.iter().enumerate() {
        let norm = x_r.norm();
        sup_norm = sup_norm.max(norm);
        let chi = c.chi_r.value(t);
        if first_violation.is_none() && (norm > chi || chi >= c.phi_x.value(t)) {
            first_violation = Some(t);
        }
        if let Some(&t_next) = grid.get(k + 1) {
            let step = rk.step(
                |t, y, dy| {
                    dy.gemv(1.0, &scenario.a_r, y, 0.0);
                    dy.gemv(1.0, &scenario.b_r, &scenario.reference_at(t), 1.0);
                    Ok::<_, Infallible>(())
                },
                t,
                t_next - t,
                &mut x_r,
            );
            if let Err(never) = step {
                match never {}
            }
        }
    }
    Assumption1Report {
        pass: first_violation.is_none(),
        sup_norm,
        first_violation,
    }
}
