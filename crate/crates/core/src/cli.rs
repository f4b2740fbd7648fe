//! The `mrac` command line.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::config::{self, ConfigError, ScenarioFile};
use crate::feasibility::Verdict;
use crate::fmt_real;
use crate::simulation::{self, RunOptions, Scenario, SimError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_BREACH: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;

/// Overrides the default output directory (the current one).
pub const OUT_DIR_ENV: &str = "MRAC_OUT_DIR";

#[derive(Debug, Parser)]
#[command(
    name = "mrac",
    version,
    about = "Constrained MRAC: feasibility certificates, simulation and noise studies"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check the feasibility condition on a time grid.
    Feasibility {
        /// Built-in name or path to a scenario file.
        #[arg(long)]
        scenario: String,
        #[arg(long, default_value_t = 0.01)]
        grid_step: f64,
        /// Include the disturbance bound in the certificate.
        #[arg(long)]
        disturbed: bool,
        /// Exit with code 3 when the verdict is Infeasible.
        #[arg(long)]
        strict: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one noise-free closed-loop simulation.
    Simulate {
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Log the total Lyapunov function using the true plant.
        #[arg(long)]
        oracle: bool,
    },
    /// Monte-Carlo study under measurement noise.
    Montecarlo {
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        sigma2: Option<f64>,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, num_args = 2, value_names = ["T_A", "T_B"])]
        window: Option<Vec<f64>>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Inspect the built-in scenarios.
    Scenario {
        #[command(subcommand)]
        action: ScenarioAction,
    },
}

#[derive(Debug, Subcommand)]
enum ScenarioAction {
    List,
    Show { name: String },
}

/// Parses `argv` (program name first) and runs the command; returns the
/// process exit code.
pub fn command_dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let stdout = io::stdout();
    let stderr = io::stderr();
    run(argv, &mut stdout.lock(), &mut stderr.lock())
}

/// Same as [`command_dispatch`] with explicit output streams.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
            let _ = if e.use_stderr() {
                write!(err, "{}", e.render())
            } else {
                write!(out, "{}", e.render())
            };
            return code;
        }
    };
    match execute(cli.command, out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_INVALID
        }
    }
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Simulation(#[from] SimError),
    #[error("{0}")]
    Usage(String),
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
}

fn out_dir(explicit: Option<PathBuf>) -> PathBuf {
    explicit
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

fn create(dir: &Path, file: &str) -> Result<(PathBuf, BufWriter<File>), CliError> {
    fs::create_dir_all(dir)?;
    let path = dir.join(file);
    let f = File::create(&path)?;
    Ok((path, BufWriter::new(f)))
}

fn load(spec: &str, err: &mut dyn Write) -> Result<Scenario, CliError> {
    let (scenario, report) = config::load_scenario(spec)?;
    for w in &report.warnings {
        writeln!(err, "warning: {w}")?;
    }
    Ok(scenario)
}

fn execute(cmd: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32, CliError> {
    match cmd {
        Command::Feasibility {
            scenario,
            grid_step,
            disturbed,
            strict,
            out: dir,
        } => {
            let (s, _) = config::load_scenario(&scenario)?;
            if !(grid_step > 0.0) {
                return Err(CliError::Usage(format!(
                    "--grid-step must be positive, got {grid_step}"
                )));
            }
            let report = s.feasibility(grid_step, disturbed)?;
            let (path, mut w) = create(&out_dir(dir), "feasibility.csv")?;
            report.write_csv(&mut w)?;
            w.flush()?;
            writeln!(out, "scenario: {}", s.name)?;
            write!(out, "{}", report.summary())?;
            writeln!(out, "csv: {}", path.display())?;
            if strict && report.verdict == Verdict::Infeasible {
                return Ok(EXIT_INFEASIBLE);
            }
            Ok(EXIT_OK)
        }
        Command::Simulate {
            scenario,
            out: dir,
            oracle,
        } => {
            let s = load(&scenario, err)?;
            let cfg = s.controller_config()?;
            let (path, mut w) = create(&out_dir(dir), "simlog.csv")?;
            match simulation::run_with(&s, &cfg, RunOptions { oracle }) {
                Ok(log) => {
                    log.write_csv(&mut w)?;
                    w.flush()?;
                    writeln!(out, "scenario: {}", s.name)?;
                    writeln!(out, "samples: {}", log.len())?;
                    writeln!(out, "max |e|/phi_e: {}", fmt_real(log.max_error_ratio()))?;
                    writeln!(out, "max |u|/phi_u: {}", fmt_real(log.max_input_ratio()))?;
                    writeln!(out, "max |K_hat|: {}", fmt_real(log.max_gain_norm()))?;
                    if oracle && log.lyapunov_total.is_none() {
                        writeln!(err, "warning: plant is not matched; total Lyapunov function not logged")?;
                    }
                    writeln!(out, "csv: {}", path.display())?;
                    Ok(EXIT_OK)
                }
                Err(e @ (SimError::BarrierBreach { .. } | SimError::NonFiniteState { .. })) => {
                    if let Some(log) = e.partial_log() {
                        log.write_csv(&mut w)?;
                        w.flush()?;
                    }
                    writeln!(err, "error: {e}")?;
                    writeln!(out, "partial csv: {}", path.display())?;
                    Ok(EXIT_BREACH)
                }
                Err(e) => Err(e.into()),
            }
        }
        Command::Montecarlo {
            scenario,
            sigma2,
            trials,
            seed,
            window,
            out: dir,
        } => {
            let s = load(&scenario, err)?;
            let cfg = s.controller_config()?;
            let noise = s.noise;
            let sigma2 = sigma2
                .or(noise.map(|n| n.sigma2))
                .ok_or_else(|| CliError::Usage("--sigma2 is required for this scenario".into()))?;
            let seed = seed.or(noise.map(|n| n.seed)).unwrap_or(0);
            let window = match window.as_deref() {
                Some([a, b]) => (*a, *b),
                Some(_) => return Err(CliError::Usage("--window takes two values".into())),
                None => noise.and_then(|n| n.window).unwrap_or((0.0, s.horizon)),
            };
            let report = simulation::monte_carlo(&s, &cfg, trials, sigma2, seed, window)?;
            let (path, mut w) = create(&out_dir(dir), "montecarlo.csv")?;
            report.write_csv(&mut w)?;
            w.flush()?;
            writeln!(out, "{}", report.summary())?;
            writeln!(out, "csv: {}", path.display())?;
            Ok(EXIT_OK)
        }
        Command::Scenario { action } => match action {
            ScenarioAction::List => {
                for (name, about, _) in config::BUILTINS {
                    writeln!(out, "{name:<16} {about}")?;
                }
                Ok(EXIT_OK)
            }
            ScenarioAction::Show { name } => {
                let (s, _) = config::load_scenario(&name)?;
                write!(out, "{}", ScenarioFile::from_scenario(&s).to_toml())?;
                Ok(EXIT_OK)
            }
        },
    }
}
