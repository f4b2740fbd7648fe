use crate::controller::{self, ControllerConfig, MatchedGains, MATCHING_TOL};
use crate::envelope::{self, ConstraintSet, DerivativePolicy, Envelope};
use crate::feasibility::{self, FeasibilityReport, Verdict};
use crate::linalg::{self, Matrix, SpectralConstants, Vector};

use super::{validate_assumption1, Assumption1Report, SimError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub k_bar_x: f64,
    pub k_bar_r: f64,
    pub r_bar: f64,
    pub d_bar: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSettings {
    pub sigma2: f64,
    pub seed: u64,
    pub window: Option<(f64, f64)>,
}

/// Which envelope the user supplied; the other one is derived.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintSource {
    StateBound,
    ErrorBound,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    /// True plant matrix; never read by the controller.
    pub a: Matrix,
    pub b: Matrix,
    pub a_r: Matrix,
    pub b_r: Matrix,
    pub q: Matrix,
    pub reference: Vec<Envelope>,
    pub disturbance: Option<Vec<Envelope>>,
    pub constraints: ConstraintSet,
    pub constraint_source: ConstraintSource,
    pub bounds: Bounds,
    pub x0: Vector,
    pub xr0: Vector,
    pub k_hat_x0: Matrix,
    pub horizon: f64,
    pub dt: f64,
    pub gamma_x: Matrix,
    pub proj_epsilon: f64,
    pub denom_floor: f64,
    pub clamp_t_floor: bool,
    pub noise: Option<NoiseSettings>,
}

/// What scenario validation found beyond hard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub hurwitz: bool,
    pub residual_a: f64,
    pub residual_b: f64,
    pub assumption1: Assumption1Report,
    pub c1_verdict: Verdict,
    pub c1_min_margin: f64,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn render(&self) -> String {
        let mut out = format!(
            "hurwitz(A_r): {}\nresidual_A: {}\nresidual_B: {}\nassumption1: {} (sup |x_r| = {})\nC1: {} (min margin {})\n",
            self.hurwitz,
            crate::fmt_real(self.residual_a),
            crate::fmt_real(self.residual_b),
            if self.assumption1.pass { "pass" } else { "fail" },
            crate::fmt_real(self.assumption1.sup_norm),
            self.c1_verdict,
            crate::fmt_real(self.c1_min_margin),
        );
        for w in &self.warnings {
            out.push_str("warning: ");
            out.push_str(w);
            out.push('\n');
        }
        out
    }
}

fn invalid(msg: impl Into<String>) -> SimError {
    SimError::Validation(msg.into())
}

fn expect_shape(name: &str, m: &Matrix, rows: usize, cols: usize, why: &str) -> Result<(), SimError> {
    if m.nrows() != rows || m.ncols() != cols {
        return Err(invalid(format!(
            "{name} is {}x{}, expected {rows}x{cols} ({why})",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(invalid(format!("{name} contains non-finite entries")));
    }
    Ok(())
}

impl Scenario {
    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    /// Sample times `k·dt`, `k = 0..=T/dt`.
    pub fn grid(&self) -> Vec<f64> {
        (0..=self.steps()).map(|k| k as f64 * self.dt).collect()
    }

    pub fn derivative_policy(&self) -> DerivativePolicy {
        if self.clamp_t_floor {
            DerivativePolicy::Clamp
        } else {
            DerivativePolicy::Strict
        }
    }

    pub fn lyapunov(&self) -> Result<Matrix, SimError> {
        Ok(linalg::solve_lyapunov(&self.a_r, &self.q)?)
    }

    pub fn spectral_constants(&self) -> Result<SpectralConstants, SimError> {
        let p = self.lyapunov()?;
        Ok(linalg::spectral_constants(&p, &self.q, &self.b)?)
    }

    /// `K_r = B†B_r`, fixed for the whole run.
    pub fn feedforward_gain(&self) -> Result<Matrix, SimError> {
        Ok(linalg::left_pseudo_inverse(&self.b)? * &self.b_r)
    }

    pub fn controller_config(&self) -> Result<ControllerConfig, SimError> {
        Ok(ControllerConfig::new(
            self.gamma_x.clone(),
            self.bounds.k_bar_x,
            self.feedforward_gain()?,
            self.proj_epsilon,
            self.denom_floor,
        )?)
    }

    /// Ideal gains from the true plant. Oracle use only.
    pub fn matched_gains(&self) -> Result<MatchedGains, SimError> {
        Ok(controller::matched_gains(&self.a, &self.a_r, &self.b, &self.b_r)?)
    }

    pub fn reference_at(&self, t: f64) -> Vector {
        Vector::from_iterator(self.reference.len(), self.reference.iter().map(|r| r.value(t)))
    }

    pub fn disturbance_at(&self, t: f64) -> Vector {
        match &self.disturbance {
            Some(d) => Vector::from_iterator(d.len(), d.iter().map(|di| di.value(t))),
            None => Vector::zeros(self.state_dim()),
        }
    }

    /// C1 scan on `[0, T]` with step `grid_step`; `disturbed` adds the `d̄/‖B‖` term.
    pub fn feasibility(&self, grid_step: f64, disturbed: bool) -> Result<FeasibilityReport, SimError> {
        let grid = envelope::uniform_grid(0.0, self.horizon, grid_step)?;
        let constants = self.spectral_constants()?;
        let chi_r_sup = self.constraints.chi_r.grid_max(&grid);
        let coeffs = feasibility::compute_coefficients(
            &constants,
            self.bounds.k_bar_x,
            self.bounds.k_bar_r,
            self.bounds.r_bar,
            chi_r_sup,
        )?;
        let d_bar = if disturbed { self.bounds.d_bar } else { 0.0 };
        Ok(feasibility::check_c1_with(
            &coeffs,
            &self.constraints,
            &grid,
            d_bar,
            constants.norm_b,
            self.derivative_policy(),
        )?)
    }

    /// Checks every invariant a run relies on. Hard violations are errors;
    /// an infeasible certificate or an unmatched plant is only a warning.
    pub fn validate(&self) -> Result<ValidationReport, SimError> {
        let n = self.a.nrows();
        expect_shape("[plant].A", &self.a, n, n, "square")?;
        let m = self.b.ncols();
        expect_shape("[plant].B", &self.b, n, m, "rows of A")?;
        if m == 0 || m > n {
            return Err(invalid(format!("[plant].B has {m} columns, expected 1..={n}")));
        }
        expect_shape("[reference].A_r", &self.a_r, n, n, "same size as A")?;
        expect_shape("[reference].B_r", &self.b_r, n, m, "same size as B")?;
        expect_shape("[simulation].Q", &self.q, n, n, "same size as A")?;
        expect_shape("[simulation].gamma_x", &self.gamma_x, m, m, "columns of B")?;
        expect_shape("[simulation].k_hat_x0", &self.k_hat_x0, m, n, "inputs x states")?;
        if self.reference.len() != m {
            return Err(invalid(format!(
                "[reference].r has {} signals, expected {m} (columns of B)",
                self.reference.len()
            )));
        }
        if let Some(d) = &self.disturbance {
            if d.len() != n {
                return Err(invalid(format!(
                    "[disturbance].d has {} signals, expected {n}",
                    d.len()
                )));
            }
        }
        for (name, v) in [("[simulation].x0", &self.x0), ("[simulation].xr0", &self.xr0)] {
            if v.len() != n {
                return Err(invalid(format!("{name} has length {}, expected {n}", v.len())));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(invalid(format!("{name} contains non-finite entries")));
            }
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(invalid(format!(
                "[simulation].T must be positive, got {}",
                self.horizon
            )));
        }
        if !(self.dt > 0.0 && self.dt <= self.horizon) {
            return Err(invalid(format!("[simulation].dt must lie in (0, T], got {}", self.dt)));
        }
        let steps = self.horizon / self.dt;
        if (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) {
            return Err(invalid("[simulation].T must be an integer multiple of dt"));
        }

        let hurwitz = linalg::is_hurwitz(&self.a_r);
        if !hurwitz {
            return Err(invalid("[reference].A_r is not Hurwitz"));
        }
        linalg::check_positive_definite(&self.q).map_err(|e| invalid(format!("[simulation].Q: {e}")))?;
        let config = self.controller_config()?;
        self.spectral_constants()?;

        let b = &self.bounds;
        for (name, value) in [("k_bar_x", b.k_bar_x), ("k_bar_r", b.k_bar_r), ("r_bar", b.r_bar)] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(invalid(format!("[bounds].{name} must be positive, got {value}")));
            }
        }
        if !(b.d_bar >= 0.0 && b.d_bar.is_finite()) {
            return Err(invalid(format!("[bounds].d_bar must be non-negative, got {}", b.d_bar)));
        }
        if self.k_hat_x0.norm() > config.k_bar_eff() {
            return Err(invalid(format!(
                "[simulation].k_hat_x0 has norm {} beyond the projection radius {}",
                self.k_hat_x0.norm(),
                config.k_bar_eff()
            )));
        }

        for env in self.reference.iter().chain(self.disturbance.iter().flatten()) {
            env.validate()?;
        }
        let c = &self.constraints;
        for env in [&c.phi_x, &c.phi_u, &c.chi_r, &c.phi_e] {
            env.validate()?;
        }
        if c.phi_e.has_singular_derivative() && !self.clamp_t_floor {
            return Err(SimError::Envelope(envelope::EnvelopeError::DerivativeSingularity {
                t: 0.0,
            }));
        }

        let grid = self.grid();
        for &t in &grid {
            let pe = c.phi_e.value(t);
            let pu = c.phi_u.value(t);
            if !(pe > 0.0) {
                return Err(invalid(format!("phi_e must stay positive; phi_e({t}) = {pe}")));
            }
            if !(pu > 0.0) {
                return Err(invalid(format!("phi_u must stay positive; phi_u({t}) = {pu}")));
            }
        }
        let e0 = (&self.x0 - &self.xr0).norm();
        if e0 >= c.phi_e.value(0.0) {
            return Err(invalid(format!(
                "initial error |x0 - xr0| = {e0} is not inside phi_e(0) = {}",
                c.phi_e.value(0.0)
            )));
        }
        let r_sup = grid.iter().map(|&t| self.reference_at(t).norm()).fold(0.0, f64::max);
        if r_sup >= b.r_bar {
            return Err(invalid(format!(
                "sup |r| = {r_sup} is not below [bounds].r_bar = {}",
                b.r_bar
            )));
        }
        let d_sup = grid.iter().map(|&t| self.disturbance_at(t).norm()).fold(0.0, f64::max);
        if d_sup > b.d_bar {
            return Err(invalid(format!(
                "sup |d| = {d_sup} exceeds [bounds].d_bar = {}",
                b.d_bar
            )));
        }
        if let Some(noise) = &self.noise {
            if !(noise.sigma2 >= 0.0 && noise.sigma2.is_finite()) {
                return Err(invalid(format!(
                    "[noise].sigma2 must be non-negative, got {}",
                    noise.sigma2
                )));
            }
            if let Some((ta, tb)) = noise.window {
                if !(ta >= 0.0 && ta <= tb && tb <= self.horizon) {
                    return Err(invalid(format!("[noise].window [{ta}, {tb}] must lie inside [0, T]")));
                }
            }
        }

        let mut warnings = Vec::new();
        let gains = self.matched_gains()?;
        if gains.residual_a > MATCHING_TOL {
            warnings.push(format!(
                "A_r - A is not in the range of B (residual {:.6e}); the unmatched part acts as a disturbance",
                gains.residual_a
            ));
        }
        if gains.residual_b > MATCHING_TOL {
            warnings.push(format!(
                "B_r is not in the range of B (residual {:.6e})",
                gains.residual_b
            ));
        }
        if gains.k_x.norm() >= b.k_bar_x {
            warnings.push(format!(
                "ideal gain norm {:.6e} is not inside k_bar_x = {}",
                gains.k_x.norm(),
                b.k_bar_x
            ));
        }
        let assumption1 = validate_assumption1(self, &grid);
        if !assumption1.pass {
            warnings.push(format!(
                "reference state leaves chi_r (sup |x_r| = {:.6e})",
                assumption1.sup_norm
            ));
        }
        let report = self.feasibility(self.dt.max(0.01).min(self.horizon), self.disturbance.is_some())?;
        if report.verdict == Verdict::Infeasible {
            warnings.push(format!(
                "C1 is not satisfied (min margin {:.6e} at t = {})",
                report.min_margin, report.argmin_t
            ));
        }
        Ok(ValidationReport {
            hurwitz,
            residual_a: gains.residual_a,
            residual_b: gains.residual_b,
            assumption1,
            c1_verdict: report.verdict,
            c1_min_margin: report.min_margin,
            warnings,
        })
    }
}
