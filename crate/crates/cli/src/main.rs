//! `gkdv`: train, evaluate and tabulate PINN experiments for the gKdV equation.

mod commands;
mod config;
mod table;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_DIVERGED: u8 = 3;
pub const EXIT_IO: u8 = 4;

#[derive(Debug, Parser)]
#[command(name = "gkdv", version, about = "PINNs for the generalized KdV equation")]
struct Cli {
    /// Root directory for run artifacts [default: the config's `output`, else `runs`].
    #[arg(long, global = true, env = "GKDV_OUT_DIR")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

/// Where the experiment comes from.
#[derive(Debug, Args, Clone)]
pub struct Source {
    /// TOML experiment file.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in experiment name (see `gkdv presets`).
    #[arg(long)]
    preset: Option<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one or more seeds and write checkpoint, history, metrics and slices.
    Train {
        #[command(flatten)]
        source: Source,
        /// Single seed (overrides the config).
        #[arg(long, conflicts_with = "seeds")]
        seed: Option<u64>,
        /// Seed list `0,1,2` or range `0..5`.
        #[arg(long)]
        seeds: Option<String>,
        /// Worker processes for multi-seed runs.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Override the L-BFGS iteration cap.
        #[arg(long)]
        iters: Option<usize>,
        /// Record A, A~, L and error_Y every this many iterations.
        #[arg(long)]
        monitor_every: Option<usize>,
    },
    /// Recompute the metrics of a checkpoint on the test grid.
    Eval {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Integrate the initial data with the pseudo-spectral reference solver.
    Refsolve {
        #[command(flatten)]
        source: Source,
        /// Spatial points.
        #[arg(long, default_value_t = 1024)]
        n: usize,
        #[arg(long, default_value_t = 1e-4)]
        dt: f64,
        /// Keep every this many steps.
        #[arg(long, default_value_t = 100)]
        save_every: usize,
    },
    /// Collect metrics from run directories into one table.
    Table {
        /// Run directories (searched recursively for metrics.json).
        dirs: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = table::Format::Csv)]
        format: table::Format,
    },
    /// Evaluate the Y_{k,s} functional of a saved field or sample matrix.
    Norms {
        /// `.field` or `.samples` file.
        file: PathBuf,
        #[arg(long)]
        k: u32,
        /// Regularity (defaults to s_k).
        #[arg(long)]
        s: Option<f64>,
        /// Rescale each term from grid means to integrals over the box.
        #[arg(long)]
        calibrated: bool,
    },
    /// List presets, or print one as TOML.
    Presets {
        name: Option<String>,
    },
}

/// A failure with its exit status.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_IO,
            message: message.into(),
        }
    }
}

impl From<gkdv::io::IoError> for Failure {
    fn from(e: gkdv::io::IoError) -> Self {
        Self::io(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self::io(e.to_string())
    }
}

impl From<gkdv::training::TrainError> for Failure {
    fn from(e: gkdv::training::TrainError) -> Self {
        use gkdv::training::TrainError;
        let code = match &e {
            TrainError::Diverged { .. } | TrainError::NonFiniteStart => EXIT_DIVERGED,
            TrainError::Io(_) => EXIT_IO,
            _ => EXIT_CONFIG,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train {
            source,
            seed,
            seeds,
            jobs,
            iters,
            monitor_every,
        } => commands::train(cli.out.as_deref(), &source, seed, seeds.as_deref(), jobs, iters, monitor_every),
        Command::Eval { source, checkpoint } => commands::eval(&source, &checkpoint),
        Command::Refsolve { source, n, dt, save_every } => commands::refsolve(cli.out.as_deref(), &source, n, dt, save_every),
        Command::Table { dirs, format } => table::run(&dirs, format),
        Command::Norms { file, k, s, calibrated } => commands::norms(&file, k, s, calibrated),
        Command::Presets { name } => commands::presets(name.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
