//! Command-line driver: root inspection, degenerate and relaxation runs,
//! ε sweeps, the square non-uniqueness check and adjoint flow traces.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 configuration error,
//! 3 numerical failure, 4 collision-guard termination.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anisoswarm::output;
use anisoswarm::polar::{enumerate_roots, rest_solutions, RestOptions, RootOptions};
use anisoswarm::relaxation::{adjoint_flow, sweep_epsilon, AdjointOptions, EpsParams};
use anisoswarm::scenario::{
    build_square_scenario, run_scenario, verify_nonuniqueness, OutputSpec, RunMode, RunSummary,
};
use anisoswarm::{Error, KernelParams, PhaseState, ScenarioSpec, Termination};
use clap::{Parser, Subcommand};
use serde_json::json;

/// Horizon used by `--long`.
const LONG_T_END: f64 = 5000.0;

#[derive(Parser)]
#[command(
    name = "anisoswarm",
    version,
    about = "Anisotropic aggregation model simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the roots and rest solutions of one particle as JSON.
    Roots {
        config: PathBuf,
        #[arg(long)]
        particle: usize,
    },
    /// Run the degenerate system.
    Simulate {
        config: PathBuf,
        /// Output directory for trajectory, events, diagnostics and summary.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Override the configured end time.
        #[arg(long)]
        t_end: Option<f64>,
        /// Run to t = 5000.
        #[arg(long, conflicts_with = "t_end")]
        long: bool,
    },
    /// Run the relaxation system started on the initial roots.
    Relax {
        config: PathBuf,
        #[arg(long)]
        epsilon: f64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        t_end: Option<f64>,
    },
    /// Error of relaxation runs against the degenerate run, as CSV.
    Sweep {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        epsilons: Vec<f64>,
        /// CSV path; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        t_end: Option<f64>,
    },
    /// Build the square scenario and print it as JSON.
    Square {
        /// Verify the non-uniqueness construction instead.
        #[arg(long)]
        check: bool,
    },
    /// Frozen adjoint flow at the initial configuration.
    Adjoint {
        config: PathBuf,
        #[arg(long)]
        particle: usize,
        #[arg(long, allow_hyphen_values = true)]
        theta0: f64,
        #[arg(long)]
        r0: f64,
        /// CSV path for the trace `tau,r,theta`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// A failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Io(_) => 1,
            Error::Config(_)
            | Error::InvalidParams(_)
            | Error::Json(_)
            | Error::UnsupportedDimension(_)
            | Error::Domain(_) => 2,
            Error::Coincident(..)
            | Error::NonConvergence(_)
            | Error::UnresolvedJump { .. }
            | Error::Internal(_) => 3,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e).into()
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn load(path: &Path) -> Result<ScenarioSpec, Failure> {
    // A missing or unreadable config is a configuration error, not an I/O one.
    ScenarioSpec::load(path).map_err(|e| Failure {
        code: 2,
        message: format!("{}: {e}", path.display()),
    })
}

fn print_json(value: &serde_json::Value) -> Result<(), Failure> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value).map_err(Error::from)?;
    writeln!(out)?;
    Ok(())
}

/// Exit code for a finished run.
fn finish(summary: &RunSummary) -> Result<u8, Failure> {
    print_json(&serde_json::to_value(summary).map_err(Error::from)?)?;
    Ok(match summary.termination {
        Termination::ReachedTEnd => 0,
        Termination::CollisionGuard => 4,
        Termination::Error => 3,
    })
}

fn run(command: Command) -> Result<u8, Failure> {
    match command {
        Command::Roots { config, particle } => {
            let spec = load(&config)?;
            let positions = spec.positions();
            if particle >= positions.len() {
                return Err(Error::Config(format!(
                    "particle {particle} out of range for {} particles",
                    positions.len()
                ))
                .into());
            }
            let roots = enumerate_roots(particle, &positions, &spec.model, &spec.sim.roots)?;
            let rest = rest_solutions(
                particle,
                &positions,
                &spec.model,
                &spec.sim.roots,
                &RestOptions::default(),
            )?;
            print_json(&json!({
                "particle": particle,
                "roots": roots,
                "rest_solutions": rest,
            }))?;
            Ok(0)
        }
        Command::Simulate {
            config,
            out,
            t_end,
            long,
        } => {
            let mut spec = load(&config)?;
            if long {
                spec.sim.t_end = LONG_T_END;
            } else if let Some(t) = t_end {
                spec.sim.t_end = t;
            }
            let outputs = OutputSpec::in_dir(&out, &spec.name);
            let (_, summary) = run_scenario(&spec, RunMode::Degenerate, &outputs)?;
            finish(&summary)
        }
        Command::Relax {
            config,
            epsilon,
            out,
            t_end,
        } => {
            let mut spec = load(&config)?;
            if let Some(t) = t_end {
                spec.sim.t_end = t;
                if let Some(eps) = spec.eps.as_mut() {
                    eps.t_end = t;
                }
            }
            let name = format!("{}.eps{epsilon:e}", spec.name);
            let outputs = OutputSpec::in_dir(&out, &name);
            let (_, summary) = run_scenario(&spec, RunMode::Relaxation { epsilon }, &outputs)?;
            finish(&summary)
        }
        Command::Sweep {
            config,
            epsilons,
            out,
            t_end,
        } => {
            let mut spec = load(&config)?;
            if let Some(t) = t_end {
                spec.sim.t_end = t;
            }
            let (reference, _) = run_scenario(&spec, RunMode::Degenerate, &OutputSpec::default())?;
            let template = EpsParams {
                t_end: reference.last_state().time,
                ..spec.eps.unwrap_or_default()
            };
            let initial: PhaseState = reference.samples[0].clone();
            let table = sweep_epsilon(
                &initial,
                &spec.model,
                &epsilons,
                &template,
                &reference,
                None,
            )?;
            match out {
                Some(path) => output::write_sweep_csv(&mut output::create(&path)?, &table)?,
                None => output::write_sweep_csv(&mut std::io::stdout().lock(), &table)?,
            }
            if table.partial {
                eprintln!(
                    "warning: reference run ended early; table covers t <= {}",
                    template.t_end
                );
            }
            Ok(match reference.termination {
                Termination::CollisionGuard => 4,
                _ => 0,
            })
        }
        Command::Square { check } => {
            let spec = build_square_scenario(&KernelParams::default())?;
            if !check {
                println!("{}", spec.to_json()?);
                return Ok(0);
            }
            let report = verify_nonuniqueness(&spec)?;
            print_json(&serde_json::to_value(&report).map_err(Error::from)?)?;
            if report.passed() {
                Ok(0)
            } else {
                for c in report.checks.iter().filter(|c| !c.passed) {
                    eprintln!(
                        "failed {}: value {:e}, expected {:e} (tolerance {:e})",
                        c.name, c.value, c.expected, c.tolerance
                    );
                }
                Ok(3)
            }
        }
        Command::Adjoint {
            config,
            particle,
            theta0,
            r0,
            out,
        } => {
            let spec = load(&config)?;
            let positions = spec.positions();
            if particle >= positions.len() {
                return Err(Error::Config(format!(
                    "particle {particle} out of range for {} particles",
                    positions.len()
                ))
                .into());
            }
            let v0 = [r0 * theta0.cos(), r0 * theta0.sin()];
            let opts = AdjointOptions {
                r_floor: spec.sim.adjoint.r_floor.min(r0),
                ..spec.sim.adjoint
            };
            let roots: &RootOptions = &spec.sim.roots;
            let res = adjoint_flow(
                &positions,
                v0,
                particle,
                &spec.model,
                roots,
                &opts,
                out.is_some(),
            )?;
            if let Some(path) = out {
                let mut w = output::create(&path)?;
                writeln!(w, "tau,r,theta")?;
                for [tau, r, theta] in &res.trace {
                    writeln!(w, "{tau:.16e},{r:.16e},{theta:.16e}")?;
                }
                w.flush()?;
            }
            print_json(&json!({
                "particle": particle,
                "theta": res.theta,
                "radius": res.radius,
                "slope": res.slope,
                "tau": res.tau,
                "steps": res.steps,
            }))?;
            Ok(0)
        }
    }
}
