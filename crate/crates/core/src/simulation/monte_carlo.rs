use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::controller::{quadratic_form, ControllerConfig};
use crate::fmt_real;
use crate::linalg::Vector;

use super::{clamp_gain, ClosedLoop, ClosedLoopState, Rk4, Scenario, SimError};

/// Zero-mean Gaussian samples with variance `σ²` from a ChaCha stream,
/// via the Box–Muller transform.
#[derive(Debug, Clone)]
pub struct GaussianNoise {
    rng: ChaCha8Rng,
    spare: Option<f64>,
    std_dev: f64,
}

impl GaussianNoise {
    /// Stream `stream` of the generator keyed by `master_seed`.
    pub fn new(master_seed: u64, stream: u64, sigma2: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
        rng.set_stream(stream);
        Self {
            rng,
            spare: None,
            std_dev: sigma2.max(0.0).sqrt(),
        }
    }

    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        // 1 − U keeps the logarithm's argument in (0, 1].
        let u1 = 1.0 - self.rng.random::<f64>();
        let u2: f64 = self.rng.random();
        let radius = (-2.0 * u1.ln()).sqrt();
        let angle = std::f64::consts::TAU * u2;
        self.spare = Some(radius * angle.sin());
        radius * angle.cos()
    }

    pub fn fill(&mut self, out: &mut Vector) {
        for v in out.iter_mut() {
            *v = self.std_dev * self.standard_normal();
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloReport {
    pub trials: usize,
    pub sigma2: f64,
    pub p_avg: f64,
    pub per_trial_satisfaction: Vec<f64>,
    pub window: (f64, f64),
    pub master_seed: u64,
    /// Trials that ended early on a true barrier breach or a blow-up.
    pub breached_trials: usize,
    /// Largest `‖K̂_x‖_F` seen in any trial.
    pub max_gain_norm: f64,
}

impl MonteCarloReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "sigma2,trial,satisfaction")?;
        for (i, s) in self.per_trial_satisfaction.iter().enumerate() {
            writeln!(w, "{},{},{}", fmt_real(self.sigma2), i, fmt_real(*s))?;
        }
        Ok(())
    }

    pub fn summary(&self) -> String {
        format!(
            "sigma2={} trials={} seed={} window=[{}, {}] p_avg={} breached={}",
            fmt_real(self.sigma2),
            self.trials,
            self.master_seed,
            fmt_real(self.window.0),
            fmt_real(self.window.1),
            fmt_real(self.p_avg),
            self.breached_trials
        )
    }
}

/// Mean of `1{h > 0}` over every (trial, sample) pair.
pub fn p_avg(margins: &[Vec<f64>]) -> Result<f64, SimError> {
    let total: usize = margins.iter().map(Vec::len).sum();
    if total == 0 {
        return Err(SimError::EmptyWindow);
    }
    let hits = margins.iter().flatten().filter(|&&h| h > 0.0).count();
    Ok(hits as f64 / total as f64)
}

struct TrialOutcome {
    satisfied: usize,
    samples: usize,
    ended_early: bool,
    max_gain: f64,
}

/// Runs `trials` independent noisy closed loops and aggregates the
/// satisfaction probability over `window`.
pub fn monte_carlo(
    scenario: &Scenario,
    config: &ControllerConfig,
    trials: usize,
    sigma2: f64,
    master_seed: u64,
    window: (f64, f64),
) -> Result<MonteCarloReport, SimError> {
    if trials == 0 {
        return Err(SimError::Validation("at least one trial is required".into()));
    }
    if !(sigma2 >= 0.0 && sigma2.is_finite()) {
        return Err(SimError::Validation(format!(
            "sigma2 must be non-negative, got {sigma2}"
        )));
    }
    let (ta, tb) = window;
    let tol = 1e-9 * scenario.dt;
    if !(ta >= 0.0 && ta <= tb && tb <= scenario.horizon + tol) {
        return Err(SimError::Validation(format!(
            "window [{ta}, {tb}] must lie inside [0, {}]",
            scenario.horizon
        )));
    }
    let in_window: Vec<bool> = scenario
        .grid()
        .iter()
        .map(|&t| t >= ta - tol && t <= tb + tol)
        .collect();
    let window_len = in_window.iter().filter(|&&w| w).count();
    if window_len == 0 {
        return Err(SimError::EmptyWindow);
    }

    let outcomes = (0..trials)
        .into_par_iter()
        .map(|i| run_trial(scenario, config, sigma2, master_seed, i as u64, &in_window))
        .collect::<Result<Vec<_>, _>>()?;

    let satisfied: usize = outcomes.iter().map(|o| o.satisfied).sum();
    let samples: usize = outcomes.iter().map(|o| o.samples).sum();
    Ok(MonteCarloReport {
        trials,
        sigma2,
        p_avg: satisfied as f64 / samples as f64,
        per_trial_satisfaction: outcomes.iter().map(|o| o.satisfied as f64 / o.samples as f64).collect(),
        window,
        master_seed,
        breached_trials: outcomes.iter().filter(|o| o.ended_early).count(),
        max_gain_norm: outcomes.iter().map(|o| o.max_gain).fold(0.0, f64::max),
    })
}

#[allow(clippy::needless_range_loop)]
fn run_trial(
    scenario: &Scenario,
    config: &ControllerConfig,
    sigma2: f64,
    master_seed: u64,
    trial: u64,
    in_window: &[bool],
) -> Result<TrialOutcome, SimError> {
    let mut cl = ClosedLoop::new(scenario, config)?;
    let noisy = sigma2 > 0.0;
    cl.floor_denominator = noisy;
    let mut noise = GaussianNoise::new(master_seed, trial, sigma2);
    let n = cl.n;
    let p = cl.p.clone();
    let mut rk = Rk4::new(cl.dim());
    let mut y = ClosedLoopState {
        x: scenario.x0.clone(),
        x_r: scenario.xr0.clone(),
        k_hat_x: scenario.k_hat_x0.clone(),
    }
    .pack();
    let mut e = Vector::zeros(n);
    let mut e_m = Vector::zeros(n);
    let samples = in_window.iter().filter(|&&w| w).count();
    let mut satisfied = 0;
    let mut max_gain: f64 = 0.0;
    let mut ended_early = false;
    let steps = scenario.steps();
    let dt = scenario.dt;

    for k in 0..=steps {
        let t = k as f64 * dt;
        if noisy {
            noise.fill(&mut cl.noise);
        }
        let gain = y.as_slice()[2 * n..].iter().map(|v| v * v).sum::<f64>().sqrt();
        max_gain = max_gain.max(gain);

        e.copy_from(&y.rows(0, n));
        e -= &y.rows(n, n);
        let phi_p = cl.phi_e_prime(scenario.constraints.phi_e.value(t));
        let limit = phi_p * phi_p;
        if limit - quadratic_form(&p, &e) <= config.denom_floor * limit {
            ended_early = true;
            break;
        }
        e_m.copy_from(&e);
        e_m += &cl.noise;
        if in_window[k] && limit - quadratic_form(&p, &e_m) > 0.0 {
            satisfied += 1;
        }

        if k == steps {
            break;
        }
        match rk.step(|t, y, dy| cl.rhs(t, y, dy), t, dt, &mut y) {
            Ok(()) => {}
            Err(err) => match SimError::from(err) {
                SimError::BarrierBreach { .. } => {
                    ended_early = true;
                    break;
                }
                other => return Err(other),
            },
        }
        if y.iter().any(|v| !v.is_finite()) {
            ended_early = true;
            break;
        }
        clamp_gain(&mut y, 2 * n, config.k_bar_x);
    }
    Ok(TrialOutcome {
        satisfied,
        samples,
        ended_early,
        max_gain,
    })
}
