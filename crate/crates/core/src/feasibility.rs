//! Offline feasibility certificates for a constraint pair `(φ_x, φ_u)`.

use std::fmt;
use std::io::{self, Write};

use thiserror::Error;

use crate::envelope::{self, ConstraintSet, DerivativePolicy, Envelope, EnvelopeError};
use crate::fmt_real;
use crate::linalg::{self, LinalgError, Matrix, SpectralConstants};

/// Band around zero inside which `α₁` counts as zero.
pub const ALPHA_ZERO_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FeasibilityError {
    #[error("invalid bound {name} = {value}: must be strictly positive")]
    InvalidBound { name: &'static str, value: f64 },
    #[error(transparent)]
    Envelope(#[from] EnvelopeError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

pub type Result<T> = std::result::Result<T, FeasibilityError>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeasibilityCoefficients {
    /// `K̄_x − η`
    pub alpha1: f64,
    /// `‖B†‖`
    pub alpha2: f64,
    /// `η·𝒳̄_r + K̄_r·r̄`
    pub beta: f64,
    pub eta: f64,
    pub k_bar_x: f64,
    pub k_bar_r: f64,
    pub r_bar: f64,
}

pub fn compute_coefficients(
    constants: &SpectralConstants,
    k_bar_x: f64,
    k_bar_r: f64,
    r_bar: f64,
    chi_r_sup: f64,
) -> Result<FeasibilityCoefficients> {
    for (name, value) in [("k_bar_x", k_bar_x), ("k_bar_r", k_bar_r), ("r_bar", r_bar)] {
        if !(value > 0.0 && value.is_finite()) {
            return Err(FeasibilityError::InvalidBound { name, value });
        }
    }
    if !(chi_r_sup >= 0.0 && chi_r_sup.is_finite()) {
        return Err(FeasibilityError::InvalidBound {
            name: "chi_r_sup",
            value: chi_r_sup,
        });
    }
    let eta = constants.eta;
    Ok(FeasibilityCoefficients {
        alpha1: k_bar_x - eta,
        alpha2: constants.norm_b_dagger,
        beta: eta * chi_r_sup + k_bar_r * r_bar,
        eta,
        k_bar_x,
        k_bar_r,
        r_bar,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Feasible,
    Infeasible,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Feasible => "Feasible",
            Verdict::Infeasible => "Infeasible",
        })
    }
}

/// Which part of the input budget `α₁φ_e + α₂|φ̇_e| + β` is largest.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BudgetTerm {
    StateEnvelope,
    Rate,
    Offset,
}

impl fmt::Display for BudgetTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BudgetTerm::StateEnvelope => "state-envelope",
            BudgetTerm::Rate => "rate",
            BudgetTerm::Offset => "offset",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// α₁ > 0
    Case2_1,
    /// α₁ < 0
    Case2_2,
    AlphaZero,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::Case2_1 => "Case2_1",
            Regime::Case2_2 => "Case2_2",
            Regime::AlphaZero => "AlphaZero",
        })
    }
}

pub fn classify_regime(coeffs: &FeasibilityCoefficients) -> Regime {
    if coeffs.alpha1.abs() <= ALPHA_ZERO_TOL {
        Regime::AlphaZero
    } else if coeffs.alpha1 > 0.0 {
        Regime::Case2_1
    } else {
        Regime::Case2_2
    }
}

/// `‖A_r − A‖₂` compared against `η`. Only meaningful when the true `A` is known.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelDistance {
    pub distance: f64,
    pub eta: f64,
    pub exceeds_eta: bool,
}

pub fn model_distance(a: &Matrix, a_r: &Matrix, eta: f64) -> Result<ModelDistance> {
    let distance = linalg::spectral_norm(&(a_r - a))?;
    Ok(ModelDistance {
        distance,
        eta,
        exceeds_eta: distance > eta,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityReport {
    pub grid: Vec<f64>,
    pub phi_u: Vec<f64>,
    pub rhs: Vec<f64>,
    pub margin: Vec<f64>,
    pub min_margin: f64,
    pub argmin_t: f64,
    pub verdict: Verdict,
    pub dominant_term: Vec<BudgetTerm>,
    pub regime: Regime,
    pub disturbance_bound: f64,
    /// Largest pointwise gap between the certified right-hand side and the
    /// `α₁φ_e + α₂|φ̇_e| + β (+ d̄/‖B‖)` decomposition used for attribution.
    pub decomposition_gap: f64,
}

impl FeasibilityReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "t,phi_u,rhs,margin,dominant_term")?;
        for k in 0..self.grid.len() {
            writeln!(
                w,
                "{},{},{},{},{}",
                fmt_real(self.grid[k]),
                fmt_real(self.phi_u[k]),
                fmt_real(self.rhs[k]),
                fmt_real(self.margin[k]),
                self.dominant_term[k]
            )?;
        }
        Ok(())
    }

    pub fn summary(&self) -> String {
        format!(
            "verdict: {}\nmin_margin: {}\nargmin_t: {}\nregime: {}\ndisturbance_bound: {}\ndecomposition_gap: {}\n",
            self.verdict,
            fmt_real(self.min_margin),
            fmt_real(self.argmin_t),
            self.regime,
            fmt_real(self.disturbance_bound),
            fmt_real(self.decomposition_gap),
        )
    }
}

/// Pointwise C1 scan with the strict derivative policy.
pub fn check_c1(
    coeffs: &FeasibilityCoefficients,
    constraints: &ConstraintSet,
    grid: &[f64],
    d_bar: f64,
    norm_b: f64,
) -> Result<FeasibilityReport> {
    check_c1_with(coeffs, constraints, grid, d_bar, norm_b, DerivativePolicy::Strict)
}

/// Evaluates `m(t) = φ_u − [φ_x(K̄_x − η) + |φ̇_e|‖B†‖ + η𝒳_r + K̄_r r̄ + d̄/‖B‖]`.
pub fn check_c1_with(
    coeffs: &FeasibilityCoefficients,
    constraints: &ConstraintSet,
    grid: &[f64],
    d_bar: f64,
    norm_b: f64,
    policy: DerivativePolicy,
) -> Result<FeasibilityReport> {
    envelope::check_grid(grid)?;
    if !(d_bar >= 0.0 && d_bar.is_finite()) {
        return Err(FeasibilityError::InvalidBound {
            name: "d_bar",
            value: d_bar,
        });
    }
    if !(norm_b > 0.0 && norm_b.is_finite()) {
        return Err(FeasibilityError::InvalidBound {
            name: "norm_b",
            value: norm_b,
        });
    }
    let disturbance = if d_bar > 0.0 { d_bar / norm_b } else { 0.0 };
    let c = coeffs;

    let n = grid.len();
    let mut phi_u = Vec::with_capacity(n);
    let mut rhs = Vec::with_capacity(n);
    let mut margin = Vec::with_capacity(n);
    let mut dominant_term = Vec::with_capacity(n);
    let mut decomposition_gap: f64 = 0.0;

    for &t in grid {
        let phi_x = constraints.phi_x.value(t);
        let chi_r = constraints.chi_r.value(t);
        let phi_e = constraints.phi_e.eval_with(t, policy)?;
        let u = constraints.phi_u.value(t);

        let rate = phi_e.derivative.abs() * c.alpha2;
        let r = phi_x * c.alpha1 + rate + c.eta * chi_r + c.k_bar_r * c.r_bar + disturbance;

        let state_part = c.alpha1 * phi_e.value;
        let decomposed = state_part + rate + c.beta + disturbance;
        decomposition_gap = decomposition_gap.max((r - decomposed).abs());

        let dominant = if state_part >= rate && state_part >= c.beta {
            BudgetTerm::StateEnvelope
        } else if rate >= c.beta {
            BudgetTerm::Rate
        } else {
            BudgetTerm::Offset
        };

        phi_u.push(u);
        rhs.push(r);
        margin.push(u - r);
        dominant_term.push(dominant);
    }

    let (argmin, min_margin) =
        margin.iter().copied().enumerate().fold(
            (0, f64::INFINITY),
            |best, (k, m)| if m < best.1 { (k, m) } else { best },
        );

    Ok(FeasibilityReport {
        grid: grid.to_vec(),
        phi_u,
        rhs,
        margin,
        min_margin,
        argmin_t: grid[argmin],
        verdict: if min_margin > 0.0 {
            Verdict::Feasible
        } else {
            Verdict::Infeasible
        },
        dominant_term,
        regime: classify_regime(coeffs),
        disturbance_bound: d_bar,
        decomposition_gap,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckOutcome {
    pub pass: bool,
    pub margin: f64,
}

/// Limit form `φ_u^∞ > α₁φ_e^∞ + β`.
pub fn steady_state_check(coeffs: &FeasibilityCoefficients, phi_e_inf: f64, phi_u_inf: f64) -> CheckOutcome {
    let margin = phi_u_inf - coeffs.alpha1 * phi_e_inf - coeffs.beta;
    CheckOutcome {
        pass: margin > 0.0,
        margin,
    }
}

/// Input-constraint-only condition `φ_u(t) > η𝒳_r(t) + K̄_r r̄`; reports the
/// minimum margin over the grid.
pub fn input_only_check(
    eta: f64,
    chi_r: &Envelope,
    k_bar_r: f64,
    r_bar: f64,
    phi_u: &Envelope,
    grid: &[f64],
) -> Result<CheckOutcome> {
    envelope::check_grid(grid)?;
    let margin = grid
        .iter()
        .map(|&t| phi_u.value(t) - eta * chi_r.value(t) - k_bar_r * r_bar)
        .fold(f64::INFINITY, f64::min);
    Ok(CheckOutcome {
        pass: margin > 0.0,
        margin,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn consts(eta: f64, norm_b_dagger: f64) -> SpectralConstants {
        SpectralConstants {
            lambda_min_p: 1.0,
            lambda_max_p: 1.0,
            lambda_min_q: 1.0,
            norm_b: 1.0,
            norm_b_dagger,
            eta,
            sqrt_lambda_min_p: 1.0,
        }
    }

    fn constant_set(phi_x: f64, phi_u: f64, chi_r: f64) -> ConstraintSet {
        let grid = envelope::uniform_grid(0.0, 10.0, 0.5).unwrap();
        ConstraintSet::from_state_bound(
            Envelope::constant(phi_x),
            Envelope::constant(phi_u),
            Envelope::constant(chi_r),
            &grid,
        )
        .unwrap()
    }

    #[test]
    fn coefficient_arithmetic() {
        let c = compute_coefficients(&consts(0.5, 1.0), 2.0, 1.0, 1.0, 0.3).unwrap();
        assert_relative_eq!(c.alpha1, 1.5);
        assert_eq!(c.alpha2, 1.0);
        // η·𝒳̄_r + K̄_r·r̄ = 0.15 + 1
        assert_relative_eq!(c.beta, 1.15);
        assert_eq!(classify_regime(&c), Regime::Case2_1);

        let c = compute_coefficients(&consts(0.5, 1.0), 0.5, 1.0, 1.0, 0.3).unwrap();
        assert_eq!(c.alpha1, 0.0);
        assert_eq!(classify_regime(&c), Regime::AlphaZero);

        assert!(compute_coefficients(&consts(0.5, 1.0), 0.0, 1.0, 1.0, 0.3).is_err());
        assert!(compute_coefficients(&consts(0.5, 1.0), 1.0, 1.0, -1.0, 0.3).is_err());
    }

    #[test]
    fn regime_signs() {
        let mut c = compute_coefficients(&consts(0.5, 1.0), 2.0, 1.0, 1.0, 0.3).unwrap();
        c.alpha1 = -0.2;
        assert_eq!(classify_regime(&c), Regime::Case2_2);
        c.alpha1 = 1e-13;
        assert_eq!(classify_regime(&c), Regime::AlphaZero);
    }

    #[test]
    fn constant_envelope_margins() {
        let c = compute_coefficients(&consts(0.5, 1.0), 2.0, 1.0, 1.0, 0.3).unwrap();
        let grid = envelope::uniform_grid(0.0, 10.0, 0.5).unwrap();

        let report = check_c1(&c, &constant_set(1.0, 5.0, 0.3), &grid, 0.0, 1.0).unwrap();
        for (&r, &m) in report.rhs.iter().zip(&report.margin) {
            assert_relative_eq!(r, 2.65, epsilon = 1e-14);
            assert_relative_eq!(m, 2.35, epsilon = 1e-14);
        }
        assert_eq!(report.verdict, Verdict::Feasible);
        assert_eq!(report.margin.len(), grid.len());

        let report = check_c1(&c, &constant_set(1.0, 2.0, 0.3), &grid, 0.0, 1.0).unwrap();
        assert_relative_eq!(report.min_margin, -0.65, epsilon = 1e-14);
        assert_eq!(report.verdict, Verdict::Infeasible);
        assert!(grid.contains(&report.argmin_t));

        let ss = steady_state_check(&c, 0.7, 5.0);
        let c1 = check_c1(&c, &constant_set(1.0, 5.0, 0.3), &grid, 0.0, 1.0).unwrap();
        assert_eq!(ss.pass, c1.verdict == Verdict::Feasible);
    }

    #[test]
    fn disturbance_shifts_margin_exactly() {
        let c = compute_coefficients(&consts(0.5, 1.0), 2.0, 1.0, 1.0, 0.3).unwrap();
        let grid = envelope::uniform_grid(0.0, 10.0, 0.5).unwrap();
        let set = constant_set(1.0, 5.0, 0.3);
        let clean = check_c1(&c, &set, &grid, 0.0, 2.0).unwrap();
        let dist = check_c1(&c, &set, &grid, 0.8, 2.0).unwrap();
        for (a, b) in clean.margin.iter().zip(&dist.margin) {
            assert_relative_eq!(a - 0.4, *b, epsilon = 1e-14);
        }
        assert_eq!(dist.disturbance_bound, 0.8);
    }

    #[test]
    fn steady_state_examples() {
        let mut c = compute_coefficients(&consts(0.5, 1.0), 2.0, 1.0, 1.0, 0.3).unwrap();
        c.alpha1 = 1.0;
        c.beta = 0.5;
        let ok = steady_state_check(&c, 0.05, 1.7);
        assert!(ok.pass);
        assert_relative_eq!(ok.margin, 1.15, epsilon = 1e-14);
        let bad = steady_state_check(&c, 0.05, 0.5);
        assert!(!bad.pass);
        assert_relative_eq!(bad.margin, -0.05, epsilon = 1e-14);
    }

    #[test]
    fn input_only_examples() {
        let grid = envelope::uniform_grid(0.0, 30.0, 0.01).unwrap();
        let chi = Envelope::constant(1.0);
        let ok = input_only_check(0.5, &chi, 1.0, 1.0, &Envelope::constant(2.0), &grid).unwrap();
        assert!(ok.pass);
        assert_relative_eq!(ok.margin, 0.5);
        let bad = input_only_check(0.5, &chi, 1.0, 1.0, &Envelope::constant(1.4), &grid).unwrap();
        assert!(!bad.pass);
        assert_relative_eq!(bad.margin, -0.1, epsilon = 1e-14);

        let fig = Envelope::exponential(4.8, -1.0, 0.2);
        let out = input_only_check(0.15, &Envelope::constant(0.0), 0.15, 1.0, &fig, &grid).unwrap();
        assert!(out.pass);
        assert!(out.margin > 0.04 && out.margin < 0.0501);
    }

    #[test]
    fn alpha_zero_keeps_rate_and_offset() {
        let c = compute_coefficients(&consts(0.5, 2.0), 0.5, 1.0, 1.0, 0.0).unwrap();
        let grid = envelope::uniform_grid(0.0, 5.0, 0.25).unwrap();
        let set = ConstraintSet::from_error_bound(
            Envelope::ppf(2.0, 0.5, 1.0, 1.0).unwrap(),
            Envelope::constant(10.0),
            Envelope::constant(0.0),
            &grid,
        )
        .unwrap();
        let report = check_c1(&c, &set, &grid, 0.0, 1.0).unwrap();
        for (k, &t) in grid.iter().enumerate() {
            let rate = set.phi_e.eval(t).unwrap().derivative.abs() * 2.0;
            assert_relative_eq!(report.rhs[k], rate + 1.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn budget_monotone_in_phi_u() {
        let c = compute_coefficients(&consts(0.3, 1.0), 2.0, 1.0, 1.0, 0.1).unwrap();
        let grid = envelope::uniform_grid(0.0, 10.0, 0.1).unwrap();
        let base = ConstraintSet::from_error_bound(
            Envelope::ppf(1.0, 0.1, 1.0, 1.0).unwrap(),
            Envelope::ppf(5.0, 2.0, 1.0, 1.0).unwrap(),
            Envelope::constant(0.1),
            &grid,
        )
        .unwrap();
        let mut bigger = base.clone();
        bigger.phi_u = Envelope::sum(vec![base.phi_u.clone(), Envelope::constant(0.5)]);
        let a = check_c1(&c, &base, &grid, 0.0, 1.0).unwrap();
        let b = check_c1(&c, &bigger, &grid, 0.0, 1.0).unwrap();
        for (x, y) in a.margin.iter().zip(&b.margin) {
            assert!(y >= x);
        }
        if a.verdict == Verdict::Feasible {
            assert_eq!(b.verdict, Verdict::Feasible);
        }
    }

    #[test]
    fn error_envelope_scaling_trade_off() {
        let grid = envelope::uniform_grid(0.0, 10.0, 0.1).unwrap();
        let set = |phi_e: Envelope| {
            ConstraintSet::from_error_bound(phi_e, Envelope::constant(20.0), Envelope::constant(0.1), &grid).unwrap()
        };
        let pf = Envelope::ppf(1.0, 0.1, 1.0, 1.0).unwrap();
        let c = compute_coefficients(&consts(0.3, 1.0), 2.0, 1.0, 1.0, 0.1).unwrap();
        let lo = check_c1(&c, &set(pf.clone()), &grid, 0.0, 1.0).unwrap();
        let hi = check_c1(&c, &set(Envelope::scaled(1.5, pf)), &grid, 0.0, 1.0).unwrap();
        assert!(lo.margin.iter().zip(&hi.margin).all(|(a, b)| b <= a));

        // α₁ < 0 with a flat envelope, so the rate term stays zero.
        let c = compute_coefficients(&consts(0.3, 1.0), 0.1, 1.0, 1.0, 0.1).unwrap();
        assert_eq!(classify_regime(&c), Regime::Case2_2);
        let lo = check_c1(&c, &set(Envelope::constant(0.5)), &grid, 0.0, 1.0).unwrap();
        let hi = check_c1(&c, &set(Envelope::constant(0.75)), &grid, 0.0, 1.0).unwrap();
        assert!(lo.margin.iter().zip(&hi.margin).all(|(a, b)| b >= a));
    }

    #[test]
    fn csv_layout() {
        let c = compute_coefficients(&consts(0.5, 1.0), 2.0, 1.0, 1.0, 0.3).unwrap();
        let grid = envelope::uniform_grid(0.0, 1.0, 0.5).unwrap();
        let report = check_c1(&c, &constant_set(1.0, 5.0, 0.3), &grid, 0.0, 1.0).unwrap();
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "t,phi_u,rhs,margin,dominant_term");
        assert_eq!(lines.len(), 4);
        // α₁φ_e = 1.05 against β = 1.15
        assert!(lines[1].ends_with(",offset"));
        assert!(report.summary().contains("verdict: Feasible"));
    }
}
