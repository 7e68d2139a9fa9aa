//! `redmd` command-line driver.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numerical failure. Logs go to standard error.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::Solver;
use crate::config::{Overrides, RunConfig, SystemKind};
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "redmd",
    version,
    about = "Streaming Koopman operator identification"
)]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a trajectory CSV and a sidecar JSON of true eigenvalues.
    Simulate {
        #[arg(long, value_enum)]
        system: Option<SystemKind>,
        /// State dimension of the linear system.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        spectral_radius: Option<f64>,
        #[arg(long)]
        noise_std: Option<f64>,
        #[arg(long)]
        dt: Option<f64>,
        /// Sidecar path; defaults to the output with a `.truth.json` extension.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Stream snapshot pairs, writing the model and an eigenvalue trajectory.
    FitStream {
        #[arg(long)]
        cadence: Option<usize>,
        #[arg(long)]
        dominant: Option<usize>,
        /// Eigenvalue trajectory CSV (`sample_count,index,re,im`).
        #[arg(long)]
        eig_out: Option<PathBuf>,
    },
    /// One-shot batch fit.
    FitBatch {
        #[arg(long, value_enum, default_value = "ridge")]
        solver: Solver,
    },
    /// Predict a window of the input from its first state.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        start: usize,
        #[arg(long)]
        horizon: usize,
        /// MSE report JSON; logged to standard error when absent.
        #[arg(long)]
        mse_out: Option<PathBuf>,
    },
    /// Validation MSE for each regularization value.
    SweepDelta {
        #[arg(long, value_delimiter = ',', required = true)]
        deltas: Vec<f64>,
        #[arg(long)]
        val_start: usize,
        #[arg(long)]
        val_end: usize,
    },
    /// Streaming versus checkpoint-recompute timing.
    Bench {
        #[arg(long, value_delimiter = ',', required = true)]
        checkpoints: Vec<usize>,
        /// Per-update wall times CSV.
        #[arg(long)]
        updates_out: Option<PathBuf>,
        /// Summary JSON; logged to standard error when absent.
        #[arg(long)]
        summary_out: Option<PathBuf>,
    },
    /// Eigenvalues of a saved model.
    Eig {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        dominant: Option<usize>,
        /// Continuous-time eigenvalues `log(λ)/dt` CSV.
        #[arg(long)]
        continuous_out: Option<PathBuf>,
        #[arg(long, default_value_t = redmd::datagen::DEFAULT_DT)]
        dt: f64,
        #[arg(long, default_value_t = redmd::spectral::DEFAULT_UNSTABLE_TOL)]
        unstable_tol: f64,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = RunConfig::resolve(&cli.overrides)?;
    match cli.command {
        Command::Simulate {
            system,
            n,
            steps,
            spectral_radius,
            noise_std,
            dt,
            truth,
        } => {
            let s = &mut cfg.system;
            if let Some(v) = system {
                s.kind = v;
            }
            if let Some(v) = n {
                s.n = v;
            }
            if let Some(v) = steps {
                s.steps = v;
            }
            if let Some(v) = spectral_radius {
                s.spectral_radius = v;
            }
            if let Some(v) = noise_std {
                s.noise_std = v;
            }
            if let Some(v) = dt {
                s.dt = v;
            }
            cfg.validate()?;
            commands::simulate(&cfg, truth.as_deref())
        }
        Command::FitStream {
            cadence,
            dominant,
            eig_out,
        } => {
            if let Some(v) = cadence {
                cfg.cadence = v;
            }
            if let Some(v) = dominant {
                cfg.dominant = v;
            }
            cfg.validate()?;
            commands::fit_stream(&cfg, eig_out.as_deref())
        }
        Command::FitBatch { solver } => commands::fit_batch(&cfg, solver),
        Command::Predict {
            model,
            start,
            horizon,
            mse_out,
        } => commands::predict(&cfg, &model, start, horizon, mse_out.as_deref()),
        Command::SweepDelta {
            deltas,
            val_start,
            val_end,
        } => commands::sweep_delta(&cfg, &deltas, val_start, val_end),
        Command::Bench {
            checkpoints,
            updates_out,
            summary_out,
        } => commands::bench(
            &cfg,
            &checkpoints,
            updates_out.as_deref(),
            summary_out.as_deref(),
        ),
        Command::Eig {
            model,
            dominant,
            continuous_out,
            dt,
            unstable_tol,
        } => commands::eig(
            &cfg,
            &model,
            dominant,
            continuous_out.as_deref().map(|p| (p, dt)),
            unstable_tol,
        ),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("redmd: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
