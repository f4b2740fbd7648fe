//! Python bindings for `mrac-core`.
//!
//! Matrices cross the boundary as lists of rows, time series as lists.

use pyo3::create_exception;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use mrac_core::config::{self, ScenarioFile};
use mrac_core::linalg::{self, Matrix};
use mrac_core::simulation::{self, RunOptions, SimError};
use mrac_core::{envelope, FeasibilityReport, MonteCarloReport, Scenario, SimLog};

create_exception!(
    mrac_py,
    BarrierBreach,
    PyRuntimeError,
    "The tracking error left the barrier."
);

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    linalg::to_rows(m)
}

#[pyclass(name = "PerformanceFunction", module = "mrac_py", frozen)]
struct PyPerformanceFunction(envelope::PerformanceFunction);

#[pymethods]
impl PyPerformanceFunction {
    #[new]
    fn new(phi0: f64, phi_inf: f64, kappa: f64, nu: f64) -> PyResult<Self> {
        envelope::PerformanceFunction::new(phi0, phi_inf, kappa, nu)
            .map(Self)
            .map_err(value_err)
    }

    fn value(&self, t: f64) -> f64 {
        self.0.value(t)
    }

    fn derivative(&self, t: f64) -> f64 {
        self.0.derivative(t)
    }

    /// Time at which the envelope reaches `epsilon`.
    fn convergence_time(&self, epsilon: f64) -> PyResult<f64> {
        self.0.convergence_time(epsilon).map_err(value_err)
    }

    fn __repr__(&self) -> String {
        let p = &self.0;
        format!(
            "PerformanceFunction(phi0={}, phi_inf={}, kappa={}, nu={})",
            p.phi0, p.phi_inf, p.kappa, p.nu
        )
    }
}

#[pyclass(name = "FeasibilityReport", module = "mrac_py", frozen, get_all)]
struct PyFeasibilityReport {
    verdict: String,
    min_margin: f64,
    argmin_t: f64,
    regime: String,
    disturbance_bound: f64,
    decomposition_gap: f64,
    grid: Vec<f64>,
    phi_u: Vec<f64>,
    rhs: Vec<f64>,
    margin: Vec<f64>,
    dominant_term: Vec<String>,
}

impl From<FeasibilityReport> for PyFeasibilityReport {
    fn from(r: FeasibilityReport) -> Self {
        Self {
            verdict: r.verdict.to_string(),
            min_margin: r.min_margin,
            argmin_t: r.argmin_t,
            regime: r.regime.to_string(),
            disturbance_bound: r.disturbance_bound,
            decomposition_gap: r.decomposition_gap,
            dominant_term: r.dominant_term.iter().map(ToString::to_string).collect(),
            grid: r.grid,
            phi_u: r.phi_u,
            rhs: r.rhs,
            margin: r.margin,
        }
    }
}

#[pymethods]
impl PyFeasibilityReport {
    #[getter]
    fn feasible(&self) -> bool {
        self.verdict == "Feasible"
    }

    fn __repr__(&self) -> String {
        format!(
            "FeasibilityReport(verdict={}, min_margin={}, argmin_t={})",
            self.verdict, self.min_margin, self.argmin_t
        )
    }
}

#[pyclass(name = "SimLog", module = "mrac_py", frozen)]
struct PySimLog {
    log: SimLog,
    /// True when the run stopped early on a breach.
    #[pyo3(get)]
    partial: bool,
}

fn series(v: &[mrac_core::Vector]) -> Vec<Vec<f64>> {
    v.iter().map(|x| x.iter().copied().collect()).collect()
}

#[pymethods]
impl PySimLog {
    fn __len__(&self) -> usize {
        self.log.len()
    }

    #[getter]
    fn times(&self) -> Vec<f64> {
        self.log.times.clone()
    }
    #[getter]
    fn x(&self) -> Vec<Vec<f64>> {
        series(&self.log.x)
    }
    #[getter]
    fn x_r(&self) -> Vec<Vec<f64>> {
        series(&self.log.x_r)
    }
    #[getter]
    fn e(&self) -> Vec<Vec<f64>> {
        series(&self.log.e)
    }
    #[getter]
    fn u(&self) -> Vec<Vec<f64>> {
        series(&self.log.u)
    }
    #[getter]
    fn v(&self) -> Vec<Vec<f64>> {
        series(&self.log.v)
    }
    #[getter]
    fn k_hat_x(&self) -> Vec<Vec<Vec<f64>>> {
        self.log.k_hat_x.iter().map(rows).collect()
    }
    #[getter]
    fn v_e(&self) -> Vec<f64> {
        self.log.v_e.clone()
    }
    #[getter]
    fn lyapunov_total(&self) -> Option<Vec<f64>> {
        self.log.lyapunov_total.clone()
    }
    #[getter]
    fn margin_h(&self) -> Vec<f64> {
        self.log.margin_h.clone()
    }
    #[getter]
    fn sat_flags(&self) -> Vec<bool> {
        self.log.sat_flags.clone()
    }
    #[getter]
    fn phi_e(&self) -> Vec<f64> {
        self.log.phi_e.clone()
    }
    #[getter]
    fn phi_u(&self) -> Vec<f64> {
        self.log.phi_u.clone()
    }
    #[getter]
    fn phi_x(&self) -> Vec<f64> {
        self.log.phi_x.clone()
    }

    fn max_error_ratio(&self) -> f64 {
        self.log.max_error_ratio()
    }
    fn max_input_ratio(&self) -> f64 {
        self.log.max_input_ratio()
    }
    fn max_state_ratio(&self) -> f64 {
        self.log.max_state_ratio()
    }
    fn max_gain_norm(&self) -> f64 {
        self.log.max_gain_norm()
    }

    fn to_csv(&self) -> PyResult<String> {
        let mut buf = Vec::new();
        self.log.write_csv(&mut buf).map_err(value_err)?;
        String::from_utf8(buf).map_err(value_err)
    }
}

#[pyclass(name = "MonteCarloReport", module = "mrac_py", frozen, get_all)]
struct PyMonteCarloReport {
    trials: usize,
    sigma2: f64,
    p_avg: f64,
    per_trial_satisfaction: Vec<f64>,
    window: (f64, f64),
    master_seed: u64,
    breached_trials: usize,
    max_gain_norm: f64,
}

impl From<MonteCarloReport> for PyMonteCarloReport {
    fn from(r: MonteCarloReport) -> Self {
        Self {
            trials: r.trials,
            sigma2: r.sigma2,
            p_avg: r.p_avg,
            per_trial_satisfaction: r.per_trial_satisfaction,
            window: r.window,
            master_seed: r.master_seed,
            breached_trials: r.breached_trials,
            max_gain_norm: r.max_gain_norm,
        }
    }
}

#[pymethods]
impl PyMonteCarloReport {
    fn __repr__(&self) -> String {
        format!(
            "MonteCarloReport(trials={}, sigma2={}, p_avg={})",
            self.trials, self.sigma2, self.p_avg
        )
    }
}

#[pyclass(name = "Scenario", module = "mrac_py", frozen)]
struct PyScenario {
    inner: Scenario,
    warnings: Vec<String>,
}

#[pymethods]
impl PyScenario {
    /// Built-in name or path to a TOML scenario file.
    #[staticmethod]
    fn load(spec: &str) -> PyResult<Self> {
        let (inner, report) = config::load_scenario(spec).map_err(value_err)?;
        Ok(Self {
            inner,
            warnings: report.warnings,
        })
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        let inner = config::parse_scenario(text).map_err(value_err)?;
        let report = inner.validate().map_err(value_err)?;
        Ok(Self {
            inner,
            warnings: report.warnings,
        })
    }

    fn to_toml(&self) -> String {
        ScenarioFile::from_scenario(&self.inner).to_toml()
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }
    #[getter]
    fn state_dim(&self) -> usize {
        self.inner.state_dim()
    }
    #[getter]
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }
    #[getter]
    fn horizon(&self) -> f64 {
        self.inner.horizon
    }
    #[getter]
    fn dt(&self) -> f64 {
        self.inner.dt
    }
    #[getter]
    fn warnings(&self) -> Vec<String> {
        self.warnings.clone()
    }

    fn lyapunov(&self) -> PyResult<Vec<Vec<f64>>> {
        self.inner.lyapunov().map(|p| rows(&p)).map_err(value_err)
    }

    #[pyo3(signature = (grid_step = 0.01, disturbed = false))]
    fn feasibility(&self, py: Python<'_>, grid_step: f64, disturbed: bool) -> PyResult<PyFeasibilityReport> {
        py.detach(|| self.inner.feasibility(grid_step, disturbed))
            .map(Into::into)
            .map_err(value_err)
    }

    /// Noise-free run. A barrier breach raises `BarrierBreach` unless
    /// `allow_breach` is set, in which case the partial log is returned.
    #[pyo3(signature = (oracle = false, allow_breach = false))]
    fn simulate(&self, py: Python<'_>, oracle: bool, allow_breach: bool) -> PyResult<PySimLog> {
        let cfg = self.inner.controller_config().map_err(value_err)?;
        let res = py.detach(|| simulation::run_with(&self.inner, &cfg, RunOptions { oracle }));
        match res {
            Ok(log) => Ok(PySimLog { log, partial: false }),
            Err(e @ (SimError::BarrierBreach { .. } | SimError::NonFiniteState { .. })) => {
                match (allow_breach, e.partial_log()) {
                    (true, Some(log)) => Ok(PySimLog {
                        log: log.clone(),
                        partial: true,
                    }),
                    _ => Err(BarrierBreach::new_err(e.to_string())),
                }
            }
            Err(e) => Err(value_err(e)),
        }
    }

    /// Runs `trials` noisy closed loops. `sigma2`, `seed` and `window`
    /// default to the scenario's noise settings.
    #[pyo3(signature = (trials = 1000, sigma2 = None, seed = None, window = None))]
    fn monte_carlo(
        &self,
        py: Python<'_>,
        trials: usize,
        sigma2: Option<f64>,
        seed: Option<u64>,
        window: Option<(f64, f64)>,
    ) -> PyResult<PyMonteCarloReport> {
        let s = &self.inner;
        let noise = s.noise;
        let sigma2 = sigma2
            .or(noise.map(|n| n.sigma2))
            .ok_or_else(|| PyValueError::new_err("sigma2 is required for this scenario"))?;
        let seed = seed.or(noise.map(|n| n.seed)).unwrap_or(0);
        let window = window.or(noise.and_then(|n| n.window)).unwrap_or((0.0, s.horizon));
        let cfg = s.controller_config().map_err(value_err)?;
        py.detach(|| simulation::monte_carlo(s, &cfg, trials, sigma2, seed, window))
            .map(Into::into)
            .map_err(value_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Scenario(name={:?}, n={}, m={})",
            self.inner.name,
            self.inner.state_dim(),
            self.inner.input_dim()
        )
    }
}

/// Solves `A_rᵀP + PA_r = −Q`.
#[pyfunction]
fn solve_lyapunov(a_r: Vec<Vec<f64>>, q: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    let a_r = linalg::from_rows(&a_r).map_err(value_err)?;
    let q = linalg::from_rows(&q).map_err(value_err)?;
    linalg::solve_lyapunov(&a_r, &q).map(|p| rows(&p)).map_err(value_err)
}

#[pyfunction]
fn builtin_scenarios() -> Vec<(&'static str, &'static str)> {
    config::BUILTINS
        .iter()
        .map(|(name, about, _)| (*name, *about))
        .collect()
}

/// Runs the `mrac` command line with `args` and returns its exit code.
#[pyfunction]
fn cli(args: Vec<String>) -> i32 {
    mrac_core::cli::command_dispatch(std::iter::once("mrac".to_string()).chain(args))
}

#[pymodule]
fn mrac_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPerformanceFunction>()?;
    m.add_class::<PyScenario>()?;
    m.add_class::<PyFeasibilityReport>()?;
    m.add_class::<PySimLog>()?;
    m.add_class::<PyMonteCarloReport>()?;
    m.add("BarrierBreach", m.py().get_type::<BarrierBreach>())?;
    m.add_function(wrap_pyfunction!(solve_lyapunov, m)?)?;
    m.add_function(wrap_pyfunction!(builtin_scenarios, m)?)?;
    m.add_function(wrap_pyfunction!(cli, m)?)?;
    Ok(())
}
