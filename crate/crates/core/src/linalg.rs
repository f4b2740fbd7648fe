//! Small dense-matrix kernels used by the controller and the certificates.
//!
//! Everything here works on `nalgebra::DMatrix<f64>`. Problem sizes are tiny
//! (n ≤ ~10), so the Lyapunov equation is solved by Kronecker vectorization
//! and symmetric spectra come from a cyclic Jacobi sweep.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Relative residual accepted for `A_rᵀP + PA_r + Q = 0`.
pub const LYAPUNOV_RESIDUAL_TOL: f64 = 1e-9;
/// Smallest singular value below which `B` is treated as rank deficient.
pub const RANK_TOL: f64 = 1e-10;
/// Relative tolerance for symmetry checks.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Relative off-diagonal Frobenius norm at which Jacobi sweeps stop.
pub const JACOBI_TOL: f64 = 1e-12;

const JACOBI_MAX_SWEEPS: usize = 100;
/// Ratio of smallest to largest LU pivot below which the Kronecker system is
/// considered singular.
const PIVOT_RATIO_TOL: f64 = 1e-13;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        found: String,
    },
    #[error("singular Lyapunov system (reference matrix is not Hurwitz)")]
    SingularSystem,
    #[error("matrix is not symmetric (relative asymmetry {0:.3e})")]
    NotSymmetric(f64),
    #[error("matrix is not positive definite (smallest eigenvalue {0:.6e})")]
    NotPositiveDefinite(f64),
    #[error("input matrix is rank deficient (smallest singular value {0:.3e})")]
    RankDeficient(f64),
    #[error("matrix contains non-finite entries")]
    NonFinite,
    #[error("matrix has an empty dimension")]
    Empty,
}

pub type Result<T> = std::result::Result<T, LinalgError>;

/// Builds a matrix from nested rows. Ragged input is reported as a mismatch.
pub fn from_rows(rows: &[Vec<f64>]) -> Result<Matrix> {
    let nrows = rows.len();
    if nrows == 0 || rows[0].is_empty() {
        return Err(LinalgError::Empty);
    }
    let ncols = rows[0].len();
    for row in rows {
        if row.len() != ncols {
            return Err(LinalgError::DimensionMismatch {
                context: "matrix rows",
                expected: format!("{ncols} columns"),
                found: format!("{} columns", row.len()),
            });
        }
    }
    let m = Matrix::from_fn(nrows, ncols, |i, j| rows[i][j]);
    check_finite(&m)?;
    Ok(m)
}

pub fn to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

pub fn check_finite(m: &Matrix) -> Result<()> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Err(LinalgError::Empty);
    }
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(LinalgError::NonFinite)
    }
}

fn require_square(m: &Matrix, context: &'static str) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(LinalgError::DimensionMismatch {
            context,
            expected: "square matrix".into(),
            found: format!("{}x{}", m.nrows(), m.ncols()),
        });
    }
    Ok(m.nrows())
}

pub fn check_symmetric(m: &Matrix) -> Result<()> {
    require_square(m, "symmetry check")?;
    let scale = m.norm().max(f64::MIN_POSITIVE);
    let asym = (m - m.transpose()).norm() / scale;
    if asym > SYMMETRY_TOL {
        return Err(LinalgError::NotSymmetric(asym));
    }
    Ok(())
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
///
/// Only the symmetric part is read; callers are expected to have checked
/// symmetry when it matters.
pub fn symmetric_eigenvalues(m: &Matrix) -> Result<Vec<f64>> {
    let n = require_square(m, "symmetric eigenvalues")?;
    check_finite(m)?;
    let mut a = (m + m.transpose()) * 0.5;
    let scale = a.norm();
    if scale == 0.0 {
        return Ok(vec![0.0; n]);
    }
    for _ in 0..JACOBI_MAX_SWEEPS {
        let off = off_diagonal_norm(&a);
        if off <= JACOBI_TOL * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                rotate(&mut a, p, q, c, s);
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    eig.sort_by(|x, y| x.total_cmp(y));
    Ok(eig)
}

fn off_diagonal_norm(a: &Matrix) -> f64 {
    let n = a.nrows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[(i, j)] * a[(i, j)];
            }
        }
    }
    s.sqrt()
}

// Applies A <- Jᵀ A J for the (p, q) Givens rotation.
fn rotate(a: &mut Matrix, p: usize, q: usize, c: f64, s: f64) {
    let n = a.nrows();
    for k in 0..n {
        let akp = a[(k, p)];
        let akq = a[(k, q)];
        a[(k, p)] = c * akp - s * akq;
        a[(k, q)] = s * akp + c * akq;
    }
    for k in 0..n {
        let apk = a[(p, k)];
        let aqk = a[(q, k)];
        a[(p, k)] = c * apk - s * aqk;
        a[(q, k)] = s * apk + c * aqk;
    }
}

/// `(λ_min, λ_max)` of a symmetric matrix.
pub fn eigen_extrema(m: &Matrix) -> Result<(f64, f64)> {
    let eig = symmetric_eigenvalues(m)?;
    Ok((eig[0], eig[eig.len() - 1]))
}

pub fn check_positive_definite(m: &Matrix) -> Result<(f64, f64)> {
    check_symmetric(m)?;
    let (lo, hi) = eigen_extrema(m)?;
    if lo <= 0.0 {
        return Err(LinalgError::NotPositiveDefinite(lo));
    }
    Ok((lo, hi))
}

/// Induced 2-norm, `√λ_max(MᵀM)`.
pub fn spectral_norm(m: &Matrix) -> Result<f64> {
    check_finite(m)?;
    let gram = m.transpose() * m;
    let (_, hi) = eigen_extrema(&gram)?;
    Ok(hi.max(0.0).sqrt())
}

/// Smallest and largest singular value of a tall matrix.
fn singular_extrema(b: &Matrix) -> Result<(f64, f64)> {
    check_finite(b)?;
    let gram = b.transpose() * b;
    let (lo, hi) = eigen_extrema(&gram)?;
    Ok((lo.max(0.0).sqrt(), hi.max(0.0).sqrt()))
}

/// Solves `A_rᵀP + PA_r + Q = 0` through the n²×n² system
/// `(I⊗A_rᵀ + A_rᵀ⊗I)·vec(P) = −vec(Q)`.
pub fn solve_lyapunov(a_r: &Matrix, q: &Matrix) -> Result<Matrix> {
    let n = require_square(a_r, "Lyapunov A_r")?;
    if q.nrows() != n || q.ncols() != n {
        return Err(LinalgError::DimensionMismatch {
            context: "Lyapunov Q",
            expected: format!("{n}x{n}"),
            found: format!("{}x{}", q.nrows(), q.ncols()),
        });
    }
    check_finite(a_r)?;
    check_positive_definite(q)?;

    let p = lyapunov_kernel(a_r, q)?;
    check_positive_definite(&p).map_err(|_| LinalgError::SingularSystem)?;
    Ok(p)
}

// Solves the vectorized system without any definiteness requirement on Q.
fn lyapunov_kernel(a_r: &Matrix, q: &Matrix) -> Result<Matrix> {
    let n = a_r.nrows();
    let at = a_r.transpose();
    let eye = Matrix::identity(n, n);
    let system = eye.kronecker(&at) + at.kronecker(&eye);
    let rhs = -Vector::from_column_slice(q.as_slice());

    let lu = system.lu();
    let u = lu.u();
    let diag = u.diagonal().map(f64::abs);
    let (pmin, pmax) = (diag.min(), diag.max());
    if !(pmax > 0.0) || pmin / pmax < PIVOT_RATIO_TOL {
        return Err(LinalgError::SingularSystem);
    }
    let vec_p = lu.solve(&rhs).ok_or(LinalgError::SingularSystem)?;
    let p = Matrix::from_column_slice(n, n, vec_p.as_slice());
    let p = (&p + p.transpose()) * 0.5;

    let residual = (a_r.transpose() * &p + &p * a_r + q).norm();
    if !residual.is_finite() || residual > LYAPUNOV_RESIDUAL_TOL * q.norm() {
        return Err(LinalgError::SingularSystem);
    }
    Ok(p)
}

/// Lyapunov criterion: `A` is Hurwitz iff `AᵀP + PA + I = 0` has a positive
/// definite solution.
pub fn is_hurwitz(a: &Matrix) -> bool {
    if a.nrows() != a.ncols() || check_finite(a).is_err() {
        return false;
    }
    let eye = Matrix::identity(a.nrows(), a.nrows());
    solve_lyapunov(a, &eye).is_ok()
}

/// `B† = (BᵀB)⁻¹Bᵀ` for full-column-rank `B`.
pub fn left_pseudo_inverse(b: &Matrix) -> Result<Matrix> {
    let (smin, _) = singular_extrema(b)?;
    if smin <= RANK_TOL || b.nrows() < b.ncols() {
        return Err(LinalgError::RankDeficient(smin));
    }
    let gram = b.transpose() * b;
    let inv = gram.lu().try_inverse().ok_or(LinalgError::RankDeficient(smin))?;
    Ok(inv * b.transpose())
}

/// Constants that enter the feasibility certificate and the barrier scaling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralConstants {
    pub lambda_min_p: f64,
    pub lambda_max_p: f64,
    pub lambda_min_q: f64,
    /// ‖B‖
    pub norm_b: f64,
    /// ‖B†‖ = 1/σ_min(B)
    pub norm_b_dagger: f64,
    /// λ_min(Q) / (2 λ_max(P) ‖B‖)
    pub eta: f64,
    pub sqrt_lambda_min_p: f64,
}

pub fn spectral_constants(p: &Matrix, q: &Matrix, b: &Matrix) -> Result<SpectralConstants> {
    let (lambda_min_p, lambda_max_p) = check_positive_definite(p)?;
    let (lambda_min_q, _) = check_positive_definite(q)?;
    if b.nrows() != p.nrows() {
        return Err(LinalgError::DimensionMismatch {
            context: "input matrix B",
            expected: format!("{} rows", p.nrows()),
            found: format!("{} rows", b.nrows()),
        });
    }
    let (smin, smax) = singular_extrema(b)?;
    if smin <= RANK_TOL {
        return Err(LinalgError::RankDeficient(smin));
    }
    Ok(SpectralConstants {
        lambda_min_p,
        lambda_max_p,
        lambda_min_q,
        norm_b: smax,
        norm_b_dagger: 1.0 / smin,
        eta: lambda_min_q / (2.0 * lambda_max_p * smax),
        sqrt_lambda_min_p: lambda_min_p.sqrt(),
    })
}
