//! Model reference adaptive control under time-varying state and input
//! constraints.
//!
//! The crate is organised bottom-up: [`linalg`] and [`envelope`] provide the
//! numerical building blocks, [`feasibility`] certifies a constraint pair
//! offline, [`controller`] holds the control path, [`simulation`] integrates
//! the closed loop and runs Monte-Carlo noise studies, and [`config`] reads
//! scenario files and the built-in examples used by the `mrac` binary.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod controller;
pub mod envelope;
pub mod feasibility;
pub mod linalg;
pub mod simulation;

pub use controller::{ControlError, ControllerConfig};
pub use envelope::{ConstraintSet, Envelope, PerformanceFunction};
pub use feasibility::{FeasibilityReport, Verdict};
pub use linalg::{Matrix, Vector};
pub use simulation::{MonteCarloReport, Scenario, SimError, SimLog};

/// Formats a real in scientific notation with 17 significant digits, which
/// round-trips every `f64`.
pub fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}
