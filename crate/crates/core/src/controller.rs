//! Constrained MRAC control path: auxiliary input, time-varying saturation,
//! the barrier Lyapunov function, and the projection-guarded update law.

use nalgebra::{DMatrixView, DMatrixViewMut};
use thiserror::Error;

use crate::linalg::{self, LinalgError, Matrix, Vector};

pub const DEFAULT_PROJ_EPSILON: f64 = 0.1;
/// Relative barrier guard: the run halts once `φ'_e² − eᵀPe ≤ DEFAULT_DENOM_FLOOR·φ'_e²`.
pub const DEFAULT_DENOM_FLOOR: f64 = 1e-9;
/// Residual below which `B_r` (or `A_r − A`) counts as matched.
pub const MATCHING_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControlError {
    #[error("barrier breached: eᵀPe = {quadratic:.6e} against φ'_e² = {limit:.6e}")]
    BarrierBreach { quadratic: f64, limit: f64 },
    #[error("invalid controller configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerConfig {
    /// Adaptation gain Γ_x (m×m, symmetric positive definite).
    pub gamma_x: Matrix,
    /// Projection radius K̄_x.
    pub k_bar_x: f64,
    /// Fixed feedforward gain K_r.
    pub k_r: Matrix,
    pub proj_epsilon: f64,
    /// Relative barrier-denominator guard.
    pub denom_floor: f64,
}

impl ControllerConfig {
    pub fn new(
        gamma_x: Matrix,
        k_bar_x: f64,
        k_r: Matrix,
        proj_epsilon: f64,
        denom_floor: f64,
    ) -> Result<Self, ControlError> {
        linalg::check_positive_definite(&gamma_x)?;
        if !(k_bar_x > 0.0 && k_bar_x.is_finite()) {
            return Err(ControlError::InvalidConfig(format!(
                "k_bar_x must be positive, got {k_bar_x}"
            )));
        }
        if !(proj_epsilon > 0.0 && proj_epsilon <= 1.0) {
            return Err(ControlError::InvalidConfig(format!(
                "proj_epsilon must lie in (0, 1], got {proj_epsilon}"
            )));
        }
        if !(denom_floor > 0.0 && denom_floor <= 1e-6) {
            return Err(ControlError::InvalidConfig(format!(
                "denom_floor must lie in (0, 1e-6], got {denom_floor}"
            )));
        }
        if k_r.nrows() != gamma_x.nrows() || k_r.ncols() != gamma_x.nrows() {
            return Err(ControlError::InvalidConfig(format!(
                "k_r must be {m}x{m}, got {}x{}",
                k_r.nrows(),
                k_r.ncols(),
                m = gamma_x.nrows()
            )));
        }
        linalg::check_finite(&k_r)?;
        Ok(Self {
            gamma_x,
            k_bar_x,
            k_r,
            proj_epsilon,
            denom_floor,
        })
    }

    /// Inner radius of the projection boundary layer, `K̄_x/√(1+ε_p)`.
    pub fn k_bar_eff(&self) -> f64 {
        self.k_bar_x / (1.0 + self.proj_epsilon).sqrt()
    }

    pub fn inputs(&self) -> usize {
        self.gamma_x.nrows()
    }
}

/// What the controller applied at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerOutput {
    pub u: Vector,
    pub v: Vector,
    pub delta_u: Vector,
    pub saturated: bool,
    pub v_e: f64,
    pub barrier_denominator: f64,
}

/// `v = K̂_x x + K_r r − (φ̇_e/φ_e) B† e`
#[allow(clippy::too_many_arguments)]
pub fn auxiliary_input(
    k_hat_x: &Matrix,
    k_r: &Matrix,
    x: &Vector,
    r: &Vector,
    phi_e: f64,
    phi_e_dot: f64,
    b_dagger: &Matrix,
    e: &Vector,
) -> Vector {
    k_hat_x * x + k_r * r - b_dagger * e * (phi_e_dot / phi_e)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Saturation {
    pub u: Vector,
    pub delta_u: Vector,
    pub saturated: bool,
}

/// Radial saturation onto the ball of radius `φ_u`. The boundary belongs to
/// the unsaturated branch.
pub fn saturate(v: &Vector, phi_u: f64) -> Saturation {
    let mut u = v.clone();
    let saturated = saturate_in_place(&mut u, phi_u);
    let delta_u = if saturated { &u - v } else { Vector::zeros(v.len()) };
    Saturation { u, delta_u, saturated }
}

/// Scales `v` onto the `φ_u` ball if it lies outside; returns whether it did.
pub fn saturate_in_place(v: &mut Vector, phi_u: f64) -> bool {
    let norm = v.norm();
    if norm <= phi_u {
        false
    } else {
        *v *= phi_u / norm;
        true
    }
}

/// `φ'_e² − eᵀPe`
pub fn barrier_denominator(e: &Vector, p: &Matrix, phi_e_prime: f64) -> f64 {
    phi_e_prime * phi_e_prime - p.dot(&(e * e.transpose()))
}

/// `V_e = log(φ'_e² / (φ'_e² − eᵀPe))`.
///
/// `denom_floor` is relative to `φ'_e²`; reaching it is a barrier breach.
pub fn tvblf_value(e: &Vector, p: &Matrix, phi_e_prime: f64, denom_floor: f64) -> Result<f64, ControlError> {
    let limit = phi_e_prime * phi_e_prime;
    let quadratic = quadratic_form(p, e);
    let denom = limit - quadratic;
    if denom <= denom_floor * limit {
        return Err(ControlError::BarrierBreach { quadratic, limit });
    }
    Ok((limit / denom).ln())
}

pub(crate) fn quadratic_form(p: &Matrix, e: &Vector) -> f64 {
    let n = e.len();
    let mut acc = 0.0;
    for j in 0..n {
        let mut col = 0.0;
        for i in 0..n {
            col += p[(i, j)] * e[i];
        }
        acc += col * e[j];
    }
    acc
}

/// Classical MRAC rate `−Γ_x Bᵀ P e xᵀ`.
pub fn classical_rate(e: &Vector, x: &Vector, p: &Matrix, b: &Matrix, gamma_x: &Matrix) -> Matrix {
    let g = gamma_x * (b.transpose() * (p * e));
    -(g * x.transpose())
}

/// Barrier-scaled rate `−Γ_x Bᵀ P e xᵀ / (φ'_e² − eᵀPe)`, projected onto the
/// `K̄_x` ball.
#[allow(clippy::too_many_arguments)]
pub fn adaptive_rate(
    k_hat_x: &Matrix,
    e: &Vector,
    x: &Vector,
    p: &Matrix,
    b: &Matrix,
    gamma_x: &Matrix,
    phi_e_prime: f64,
    config: &ControllerConfig,
) -> Result<Matrix, ControlError> {
    let limit = phi_e_prime * phi_e_prime;
    let quadratic = quadratic_form(p, e);
    let denom = limit - quadratic;
    if denom <= config.denom_floor * limit {
        return Err(ControlError::BarrierBreach { quadratic, limit });
    }
    let raw = classical_rate(e, x, p, b, gamma_x) / denom;
    Ok(project(k_hat_x, &raw, config.k_bar_x, config.proj_epsilon))
}

/// Smooth projection with convex function `f(θ) = (‖θ‖_F² − K̄_eff²)/(ε_p K̄_eff²)`
/// and `K̄_eff = K̄/√(1+ε_p)`, so `f = 1` on the hard ball `‖θ‖_F = K̄`.
pub fn project(theta: &Matrix, y: &Matrix, k_bar: f64, eps_p: f64) -> Matrix {
    let mut out = y.clone();
    project_in_place(theta.as_view(), &mut out.as_view_mut(), k_bar, eps_p);
    out
}

pub(crate) fn project_in_place(theta: DMatrixView<'_, f64>, y: &mut DMatrixViewMut<'_, f64>, k_bar: f64, eps_p: f64) {
    let k_eff_sq = k_bar * k_bar / (1.0 + eps_p);
    let f = (theta.norm_squared() - k_eff_sq) / (eps_p * k_eff_sq);
    if f <= 0.0 {
        return;
    }
    // ∇f = 2θ/(ε_p K̄_eff²); only its direction and the ratio below matter.
    let grad_scale = 2.0 / (eps_p * k_eff_sq);
    let grad_dot_y = grad_scale * theta.dot(&*y);
    if grad_dot_y <= 0.0 {
        return;
    }
    let grad_norm_sq = grad_scale * grad_scale * theta.norm_squared();
    let coeff = f * grad_dot_y * grad_scale / grad_norm_sq;
    y.zip_apply(&theta, |yi, ti| *yi -= coeff * ti);
}

/// Ideal gains from the matching conditions and how far they are from exact.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchedGains {
    pub k_x: Matrix,
    pub k_r: Matrix,
    /// ‖(I − BB†)(A_r − A)‖_F
    pub residual_a: f64,
    /// ‖(I − BB†)B_r‖_F
    pub residual_b: f64,
}

impl MatchedGains {
    pub fn is_matched(&self) -> bool {
        self.residual_a <= MATCHING_TOL && self.residual_b <= MATCHING_TOL
    }
}

pub fn matched_gains(a: &Matrix, a_r: &Matrix, b: &Matrix, b_r: &Matrix) -> Result<MatchedGains, ControlError> {
    let b_dagger = linalg::left_pseudo_inverse(b)?;
    let n = b.nrows();
    let diff = a_r - a;
    let annihilator = Matrix::identity(n, n) - b * &b_dagger;
    Ok(MatchedGains {
        k_x: &b_dagger * &diff,
        k_r: &b_dagger * b_r,
        residual_a: (&annihilator * &diff).norm(),
        residual_b: (&annihilator * b_r).norm(),
    })
}
