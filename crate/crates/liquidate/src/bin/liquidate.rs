//! Command-line front end: solve, simulate, sweep, verify, figures.
//!
//! Exit status: 0 = success, 1 = numeric failure, 2 = config error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use liquidate::error::{ModelError, SolveError};
use liquidate::experiment::{figure_specs, run_solve, run_sweep, run_verify, ExperimentConfig};
use liquidate::riccati::GridSpec;
use liquidate::trajectory::simulate;

#[derive(Parser)]
#[command(name = "liquidate", about = "Optimal liquidation Riccati solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the penalized Riccati equation and write the path as CSV.
    Solve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 64.0)]
        n: f64,
        #[arg(long, default_value_t = 2000)]
        steps: usize,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Solve, then simulate the closed-loop trajectory from the config's
    /// initial state.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 64.0)]
        n: f64,
        #[arg(long, default_value_t = 2000)]
        steps: usize,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run the configured parameter sweep: one solve + simulate per value.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 2000)]
        steps: usize,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run every invariant family and write a machine-readable report.
    Verify {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated penalization ladder.
        #[arg(long, value_delimiter = ',')]
        ladder: Option<Vec<f64>>,
        #[arg(long, default_value_t = 1000)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Emit the five built-in figure data sets.
    Figures {
        #[arg(long, default_value_t = 1000)]
        steps: usize,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(AppError::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(2)
        }
        Err(AppError::Numeric(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

enum AppError {
    Config(String),
    Numeric(String),
}

impl From<ModelError> for AppError {
    fn from(e: ModelError) -> Self {
        AppError::Config(match e {
            ModelError::Invalid(v) => v.join("; "),
            ModelError::Config(s) => s,
        })
    }
}

impl From<SolveError> for AppError {
    fn from(e: SolveError) -> Self {
        match e {
            SolveError::Model(m) => m.into(),
            other => AppError::Numeric(other.to_string()),
        }
    }
}

const REFINEMENT: f64 = 8.0;

fn run(cli: Cli) -> Result<ExitCode, AppError> {
    match cli.command {
        Command::Solve { config, n, steps, out } => {
            let cfg = ExperimentConfig::from_file(&config)?;
            let params = cfg.params()?;
            let grid = GridSpec::new(0.0, params.horizon, steps, REFINEMENT);
            let summary = run_solve(&params, n, &grid, &out)?;
            println!(
                "solved n={n}: n0={} accepted_steps={}",
                summary.n0, summary.accepted_steps
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Simulate { config, n, steps, out } => {
            let cfg = ExperimentConfig::from_file(&config)?;
            let spec = cfg.into_spec(out.clone(), steps, REFINEMENT)?;
            let params = &spec.base;
            let grid = GridSpec::new(0.0, params.horizon, steps, REFINEMENT);
            let sol = liquidate::riccati::solve_penalized(params, n, &grid)?;
            let sim_grid = GridSpec::new(spec.t0, params.horizon, steps, REFINEMENT);
            let traj = simulate(params, &sol, spec.t0, &spec.x0, &spec.y0, &sim_grid)?;
            std::fs::create_dir_all(&out)
                .map_err(|e| AppError::Numeric(e.to_string()))?;
            std::fs::write(out.join("trajectory.csv"), traj.to_csv())
                .map_err(|e| AppError::Numeric(e.to_string()))?;
            println!("trajectory written to {}", out.join("trajectory.csv").display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep { config, steps, out } => {
            let cfg = ExperimentConfig::from_file(&config)?;
            let spec = cfg.into_spec(out, steps, REFINEMENT)?;
            let outcome = run_sweep(&spec)?;
            for row in &outcome.rows {
                println!(
                    "{}={}: V={:.6e}",
                    spec.variable.label(),
                    row.value,
                    row.value_function
                );
            }
            for (v, msg) in &outcome.failures {
                eprintln!("value {v} failed: {msg}");
            }
            if outcome.failures.is_empty() {
                Ok(ExitCode::SUCCESS)
            } else {
                Ok(ExitCode::from(1))
            }
        }
        Command::Verify { config, ladder, steps, seed, out } => {
            let cfg = ExperimentConfig::from_file(&config)?;
            let params = cfg.params()?;
            let ladder = ladder.unwrap_or_else(|| (4..=11).map(|k| f64::powi(2.0, k)).collect());
            let grid = GridSpec::new(0.0, params.horizon, steps, REFINEMENT);
            let report = run_verify(&params, &ladder, &grid, seed, &out)?;
            for f in &report.families {
                println!(
                    "{} {}: {}",
                    if f.pass { "PASS" } else { "FAIL" },
                    f.family,
                    f.detail
                );
            }
            if report.all_pass {
                Ok(ExitCode::SUCCESS)
            } else {
                Ok(ExitCode::from(1))
            }
        }
        Command::Figures { steps, out } => {
            let mut failed = false;
            for (name, spec) in figure_specs(&out, steps) {
                let outcome = run_sweep(&spec)?;
                println!("{name}: {} rows, {} failures", outcome.rows.len(), outcome.failures.len());
                failed |= !outcome.failures.is_empty();
            }
            Ok(if failed { ExitCode::from(1) } else { ExitCode::SUCCESS })
        }
    }
}
