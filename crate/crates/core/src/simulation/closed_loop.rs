use nalgebra::{DMatrixView, DMatrixViewMut};

use crate::controller::{self, ControlError, ControllerConfig, ControllerOutput};
use crate::envelope::DerivativePolicy;
use crate::linalg::{self, Matrix, Vector};

use super::{Scenario, SimError};

/// Plant state, reference state and the gain estimate at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopState {
    pub x: Vector,
    pub x_r: Vector,
    pub k_hat_x: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopDerivative {
    pub x_dot: Vector,
    pub x_r_dot: Vector,
    pub k_hat_dot: Matrix,
    pub output: ControllerOutput,
}

impl ClosedLoopState {
    pub fn pack(&self) -> Vector {
        let mut y = Vector::zeros(self.x.len() * 2 + self.k_hat_x.len());
        let n = self.x.len();
        y.rows_mut(0, n).copy_from(&self.x);
        y.rows_mut(n, n).copy_from(&self.x_r);
        y.as_mut_slice()[2 * n..].copy_from_slice(self.k_hat_x.as_slice());
        y
    }

    pub fn unpack(y: &Vector, n: usize, m: usize) -> Self {
        Self {
            x: y.rows(0, n).into_owned(),
            x_r: y.rows(n, n).into_owned(),
            k_hat_x: Matrix::from_column_slice(m, n, &y.as_slice()[2 * n..]),
        }
    }
}

/// Barrier hit inside a right-hand-side evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct StageBreach {
    pub t: f64,
    pub quadratic: f64,
    pub limit: f64,
}

pub(crate) enum RhsError {
    Breach(StageBreach),
    Other(SimError),
}

impl From<RhsError> for SimError {
    fn from(e: RhsError) -> Self {
        match e {
            RhsError::Breach(b) => SimError::breach_without_log(b),
            RhsError::Other(e) => e,
        }
    }
}

/// Precomputed controller data plus scratch buffers, so that evaluating the
/// closed loop does not allocate.
pub struct ClosedLoop<'a> {
    pub(crate) scenario: &'a Scenario,
    pub(crate) config: &'a ControllerConfig,
    pub(crate) n: usize,
    pub(crate) m: usize,
    pub(crate) p: Matrix,
    pub(crate) sqrt_lambda_min_p: f64,
    pub(crate) b_dagger: Matrix,
    /// Γ_x Bᵀ P
    gbp: Matrix,
    policy: DerivativePolicy,
    /// Measurement noise held over the current step.
    pub(crate) noise: Vector,
    /// Floor the barrier denominator instead of failing (noisy runs).
    pub(crate) floor_denominator: bool,
    xm: Vector,
    em: Vector,
    pe: Vector,
    r: Vector,
    v: Vector,
    g: Vector,
    bde: Vector,
}

impl<'a> ClosedLoop<'a> {
    pub fn new(scenario: &'a Scenario, config: &'a ControllerConfig) -> Result<Self, SimError> {
        let n = scenario.state_dim();
        let m = scenario.input_dim();
        if config.inputs() != m || config.k_r.ncols() != m {
            return Err(SimError::Validation(format!(
                "controller configuration is sized for {} inputs, scenario has {m}",
                config.inputs()
            )));
        }
        let p = scenario.lyapunov()?;
        let constants = linalg::spectral_constants(&p, &scenario.q, &scenario.b)?;
        let b_dagger = linalg::left_pseudo_inverse(&scenario.b)?;
        let gbp = &config.gamma_x * scenario.b.transpose() * &p;
        Ok(Self {
            scenario,
            config,
            n,
            m,
            p,
            sqrt_lambda_min_p: constants.sqrt_lambda_min_p,
            b_dagger,
            gbp,
            policy: scenario.derivative_policy(),
            noise: Vector::zeros(n),
            floor_denominator: false,
            xm: Vector::zeros(n),
            em: Vector::zeros(n),
            pe: Vector::zeros(n),
            r: Vector::zeros(m),
            v: Vector::zeros(m),
            g: Vector::zeros(m),
            bde: Vector::zeros(m),
        })
    }

    pub fn lyapunov_matrix(&self) -> &Matrix {
        &self.p
    }

    pub fn dim(&self) -> usize {
        2 * self.n + self.m * self.n
    }

    /// `φ'_e = φ_e·√λ_min(P)`
    pub fn phi_e_prime(&self, phi_e: f64) -> f64 {
        phi_e * self.sqrt_lambda_min_p
    }

    /// Packed right-hand side. `dy` receives `[ẋ, ẋ_r, vec(K̂̇_x)]`.
    pub(crate) fn rhs(&mut self, t: f64, y: &Vector, dy: &mut Vector) -> Result<(), RhsError> {
        let (n, m) = (self.n, self.m);
        let sc = self.scenario;
        let env = &sc.constraints;
        let phi_e = env
            .phi_e
            .eval_with(t, self.policy)
            .map_err(|e| RhsError::Other(e.into()))?;
        let phi_u = env.phi_u.value(t);

        let ys = y.as_slice();
        let x = y.rows(0, n);
        let x_r = y.rows(n, n);
        let k_hat = DMatrixView::from_slice(&ys[2 * n..], m, n);

        self.xm.copy_from(&x);
        self.xm += &self.noise;
        self.em.copy_from(&self.xm);
        self.em -= &x_r;

        self.pe.gemv(1.0, &self.p, &self.em, 0.0);
        let quadratic = self.em.dot(&self.pe);
        let phi_p = self.phi_e_prime(phi_e.value);
        let limit = phi_p * phi_p;
        let floor = self.config.denom_floor * limit;
        let mut denom = limit - quadratic;
        if denom <= floor {
            if !self.floor_denominator {
                return Err(RhsError::Breach(StageBreach { t, quadratic, limit }));
            }
            denom = floor;
        }

        for (ri, sig) in self.r.iter_mut().zip(&sc.reference) {
            *ri = sig.value(t);
        }

        // v = K̂ x_m + K_r r − (φ̇_e/φ_e) B† e_m, saturated in place.
        self.v.gemv(1.0, &k_hat, &self.xm, 0.0);
        self.v.gemv(1.0, &self.config.k_r, &self.r, 1.0);
        self.bde.gemv(1.0, &self.b_dagger, &self.em, 0.0);
        self.v.axpy(-phi_e.derivative / phi_e.value, &self.bde, 1.0);
        controller::saturate_in_place(&mut self.v, phi_u);

        let (head, k_dot) = dy.as_mut_slice().split_at_mut(2 * n);
        let (x_dot, x_r_dot) = head.split_at_mut(n);
        let mut x_dot = nalgebra::DVectorViewMut::from_slice(x_dot, n);
        x_dot.gemv(1.0, &sc.a, &x, 0.0);
        x_dot.gemv(1.0, &sc.b, &self.v, 1.0);
        if let Some(d) = &sc.disturbance {
            for (xi, di) in x_dot.iter_mut().zip(d) {
                *xi += di.value(t);
            }
        }
        let mut x_r_dot = nalgebra::DVectorViewMut::from_slice(x_r_dot, n);
        x_r_dot.gemv(1.0, &sc.a_r, &x_r, 0.0);
        x_r_dot.gemv(1.0, &sc.b_r, &self.r, 1.0);

        // K̂̇ = Proj(K̂, −Γ Bᵀ P e_m x_mᵀ / denom)
        self.g.gemv(1.0, &self.gbp, &self.em, 0.0);
        let mut k_dot = DMatrixViewMut::from_slice(k_dot, m, n);
        k_dot.fill(0.0);
        k_dot.ger(-1.0 / denom, &self.g, &self.xm, 0.0);
        controller::project_in_place(k_hat, &mut k_dot, self.config.k_bar_x, self.config.proj_epsilon);
        Ok(())
    }

    /// Allocating evaluation returning every intermediate signal.
    pub fn evaluate(&mut self, t: f64, state: &ClosedLoopState) -> Result<ClosedLoopDerivative, SimError> {
        let y = state.pack();
        let mut dy = Vector::zeros(y.len());
        self.rhs(t, &y, &mut dy)?;
        let deriv = ClosedLoopState::unpack(&dy, self.n, self.m);
        let output = self.output(t, &state.x, &state.x_r, &state.k_hat_x)?;
        Ok(ClosedLoopDerivative {
            x_dot: deriv.x,
            x_r_dot: deriv.x_r,
            k_hat_dot: deriv.k_hat_x,
            output,
        })
    }

    /// Controller signals at `t` computed with the public control-path
    /// functions, from the measured state `x + noise`.
    pub fn output(&self, t: f64, x: &Vector, x_r: &Vector, k_hat: &Matrix) -> Result<ControllerOutput, SimError> {
        let sc = self.scenario;
        let phi_e = sc.constraints.phi_e.eval_with(t, self.policy)?;
        let phi_u = sc.constraints.phi_u.value(t);
        let xm = x + &self.noise;
        let em = &xm - x_r;
        let r = sc.reference_at(t);
        let v = controller::auxiliary_input(
            k_hat,
            &self.config.k_r,
            &xm,
            &r,
            phi_e.value,
            phi_e.derivative,
            &self.b_dagger,
            &em,
        );
        let sat = controller::saturate(&v, phi_u);
        let phi_p = self.phi_e_prime(phi_e.value);
        let barrier_denominator = controller::barrier_denominator(&em, &self.p, phi_p);
        let v_e = match controller::tvblf_value(&em, &self.p, phi_p, self.config.denom_floor) {
            Ok(v) => v,
            Err(ControlError::BarrierBreach { .. }) if self.floor_denominator => f64::INFINITY,
            Err(ControlError::BarrierBreach { quadratic, limit }) => {
                return Err(SimError::BarrierBreach {
                    t,
                    quadratic,
                    limit,
                    log: None,
                })
            }
            Err(e) => return Err(e.into()),
        };
        Ok(ControllerOutput {
            u: sat.u,
            v,
            delta_u: sat.delta_u,
            saturated: sat.saturated,
            v_e,
            barrier_denominator,
        })
    }
}

/// Single allocating evaluation of the closed loop at `(state, t)`.
pub fn closed_loop_rhs(
    state: &ClosedLoopState,
    t: f64,
    scenario: &Scenario,
    config: &ControllerConfig,
) -> Result<ClosedLoopDerivative, SimError> {
    ClosedLoop::new(scenario, config)?.evaluate(t, state)
}
