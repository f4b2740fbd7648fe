//! TOML scenario files and the built-in examples.
//!
//! A scenario file has the sections `[plant]`, `[reference]`,
//! `[constraints]`, `[bounds]`, `[simulation]` and the optional
//! `[disturbance]` and `[noise]`. Envelopes are inline tables tagged with a
//! `kind`. Unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{DEFAULT_DENOM_FLOOR, DEFAULT_PROJ_EPSILON};
use crate::envelope::{ConstraintSet, Envelope, EnvelopeError};
use crate::linalg::{self, Matrix, Vector};
use crate::simulation::{Bounds, ConstraintSource, NoiseSettings, Scenario, SimError, ValidationReport};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("unknown scenario {0:?}; expected a built-in name or a file path")]
    UnknownScenario(String),
    #[error(transparent)]
    Simulation(#[from] SimError),
}

impl From<EnvelopeError> for ConfigError {
    fn from(e: EnvelopeError) -> Self {
        ConfigError::Validation(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub plant: PlantSection,
    pub reference: ReferenceSection,
    pub constraints: ConstraintsSection,
    pub bounds: BoundsSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disturbance: Option<DisturbanceSection>,
    pub simulation: SimulationSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSection {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceSection {
    #[serde(rename = "A_r")]
    pub a_r: Vec<Vec<f64>>,
    #[serde(rename = "B_r")]
    pub b_r: Vec<Vec<f64>>,
    pub r: Vec<Envelope>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintsSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi_x: Option<Envelope>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi_e: Option<Envelope>,
    pub phi_u: Envelope,
    pub chi_r: Envelope,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsSection {
    pub k_bar_x: f64,
    pub k_bar_r: f64,
    pub r_bar: f64,
    #[serde(default)]
    pub d_bar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceSection {
    pub d: Vec<Envelope>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    pub x0: Vec<f64>,
    pub xr0: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_hat_x0: Option<Vec<Vec<f64>>>,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub dt: f64,
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    pub gamma_x: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proj_epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub denom_floor: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clamp_t_floor: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    pub sigma2: f64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<[f64; 2]>,
}

/// Built-in scenarios: name, one-line description, file contents.
pub const BUILTINS: &[(&str, &str, &str)] = &[
    (
        "example1",
        "single-input bicycle lateral model, sinusoidal command",
        include_str!("../scenarios/example1.toml"),
    ),
    (
        "example2",
        "four-state two-input plant with a windowed disturbance on [5, 10]",
        include_str!("../scenarios/example2.toml"),
    ),
    (
        "example2_noise",
        "four-state plant, tighter input envelope, noisy measurements",
        include_str!("../scenarios/example2_noise.toml"),
    ),
    (
        "saturation_demo",
        "scalar loop saturating against 4.8 exp(-t) + 0.2",
        include_str!("../scenarios/saturation_demo.toml"),
    ),
];

pub fn builtin_source(name: &str) -> Option<&'static str> {
    BUILTINS.iter().find(|(n, _, _)| *n == name).map(|(_, _, src)| *src)
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string().trim_end().to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario files always serialize")
    }

    /// Builds the scenario. Shapes are checked here; everything else is left
    /// to [`Scenario::validate`].
    pub fn into_scenario(self) -> Result<Scenario, ConfigError> {
        let matrix = |name: &str, rows: &[Vec<f64>]| {
            linalg::from_rows(rows).map_err(|e| ConfigError::Validation(format!("{name}: {e}")))
        };
        let a = matrix("[plant].A", &self.plant.a)?;
        let b = matrix("[plant].B", &self.plant.b)?;
        let n = a.nrows();
        let m = b.ncols();
        if a.ncols() != n {
            return Err(ConfigError::Validation(format!(
                "[plant].A is {}x{}, expected square",
                n,
                a.ncols()
            )));
        }
        if b.nrows() != n {
            return Err(ConfigError::Validation(format!(
                "[plant].B has {} rows, expected {n} to match [plant].A",
                b.nrows()
            )));
        }
        let a_r = matrix("[reference].A_r", &self.reference.a_r)?;
        let b_r = matrix("[reference].B_r", &self.reference.b_r)?;
        let q = matrix("[simulation].Q", &self.simulation.q)?;
        let gamma_x = matrix("[simulation].gamma_x", &self.simulation.gamma_x)?;
        let k_hat_x0 = match &self.simulation.k_hat_x0 {
            Some(rows) => matrix("[simulation].k_hat_x0", rows)?,
            None => Matrix::zeros(m, n),
        };

        let sim = &self.simulation;
        if !(sim.horizon > 0.0 && sim.dt > 0.0 && sim.dt <= sim.horizon) {
            return Err(ConfigError::Validation(format!(
                "[simulation] needs 0 < dt <= T, got dt = {}, T = {}",
                sim.dt, sim.horizon
            )));
        }
        let steps = (sim.horizon / sim.dt).round() as usize;
        let grid: Vec<f64> = (0..=steps).map(|k| k as f64 * sim.dt).collect();

        let c = self.constraints;
        let (constraints, constraint_source) = match (c.phi_x, c.phi_e) {
            (Some(phi_x), None) => (
                ConstraintSet::from_state_bound(phi_x, c.phi_u, c.chi_r, &grid)?,
                ConstraintSource::StateBound,
            ),
            (None, Some(phi_e)) => (
                ConstraintSet::from_error_bound(phi_e, c.phi_u, c.chi_r, &grid)?,
                ConstraintSource::ErrorBound,
            ),
            _ => {
                return Err(ConfigError::Validation(
                    "[constraints] needs exactly one of phi_x and phi_e".into(),
                ))
            }
        };

        Ok(Scenario {
            name: self.name.unwrap_or_else(|| "scenario".into()),
            a,
            b,
            a_r,
            b_r,
            q,
            reference: self.reference.r,
            disturbance: self.disturbance.map(|d| d.d),
            constraints,
            constraint_source,
            bounds: Bounds {
                k_bar_x: self.bounds.k_bar_x,
                k_bar_r: self.bounds.k_bar_r,
                r_bar: self.bounds.r_bar,
                d_bar: self.bounds.d_bar,
            },
            x0: Vector::from_vec(sim.x0.clone()),
            xr0: Vector::from_vec(sim.xr0.clone()),
            k_hat_x0,
            horizon: sim.horizon,
            dt: sim.dt,
            gamma_x,
            proj_epsilon: sim.proj_epsilon.unwrap_or(DEFAULT_PROJ_EPSILON),
            denom_floor: sim.denom_floor.unwrap_or(DEFAULT_DENOM_FLOOR),
            clamp_t_floor: sim.clamp_t_floor.unwrap_or(false),
            noise: self.noise.map(|n| NoiseSettings {
                sigma2: n.sigma2,
                seed: n.seed,
                window: n.window.map(|[a, b]| (a, b)),
            }),
        })
    }

    /// Inverse of [`ScenarioFile::into_scenario`], with every default written out.
    pub fn from_scenario(s: &Scenario) -> Self {
        let (phi_x, phi_e) = match s.constraint_source {
            ConstraintSource::StateBound => (Some(s.constraints.phi_x.clone()), None),
            ConstraintSource::ErrorBound => (None, Some(s.constraints.phi_e.clone())),
        };
        Self {
            name: Some(s.name.clone()),
            plant: PlantSection {
                a: linalg::to_rows(&s.a),
                b: linalg::to_rows(&s.b),
            },
            reference: ReferenceSection {
                a_r: linalg::to_rows(&s.a_r),
                b_r: linalg::to_rows(&s.b_r),
                r: s.reference.clone(),
            },
            constraints: ConstraintsSection {
                phi_x,
                phi_e,
                phi_u: s.constraints.phi_u.clone(),
                chi_r: s.constraints.chi_r.clone(),
            },
            bounds: BoundsSection {
                k_bar_x: s.bounds.k_bar_x,
                k_bar_r: s.bounds.k_bar_r,
                r_bar: s.bounds.r_bar,
                d_bar: s.bounds.d_bar,
            },
            disturbance: s.disturbance.clone().map(|d| DisturbanceSection { d }),
            simulation: SimulationSection {
                x0: s.x0.iter().copied().collect(),
                xr0: s.xr0.iter().copied().collect(),
                k_hat_x0: Some(linalg::to_rows(&s.k_hat_x0)),
                horizon: s.horizon,
                dt: s.dt,
                q: linalg::to_rows(&s.q),
                gamma_x: linalg::to_rows(&s.gamma_x),
                proj_epsilon: Some(s.proj_epsilon),
                denom_floor: Some(s.denom_floor),
                clamp_t_floor: Some(s.clamp_t_floor),
            },
            noise: s.noise.map(|n| NoiseSection {
                sigma2: n.sigma2,
                seed: n.seed,
                window: n.window.map(|(a, b)| [a, b]),
            }),
        }
    }
}

/// Parses scenario text without validating invariants.
pub fn parse_scenario(text: &str) -> Result<Scenario, ConfigError> {
    ScenarioFile::parse(text)?.into_scenario()
}

/// Resolves a built-in name or a file path, parses and validates it.
pub fn load_scenario(spec: &str) -> Result<(Scenario, ValidationReport), ConfigError> {
    let text = match builtin_source(spec) {
        Some(src) => src.to_string(),
        None => {
            let path = Path::new(spec);
            if !path.exists() {
                return Err(ConfigError::UnknownScenario(spec.to_string()));
            }
            std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
                path: spec.to_string(),
                message: e.to_string(),
            })?
        }
    };
    let scenario = parse_scenario(&text)?;
    let report = scenario.validate().map_err(|e| match e {
        SimError::Validation(msg) => ConfigError::Validation(msg),
        other => ConfigError::Validation(other.to_string()),
    })?;
    Ok((scenario, report))
}

/// Loads a built-in scenario, panicking if it does not validate.
pub fn builtin(name: &str) -> Scenario {
    let src = builtin_source(name).unwrap_or_else(|| panic!("no built-in scenario {name:?}"));
    parse_scenario(src).unwrap_or_else(|e| panic!("built-in {name} is broken: {e}"))
}
