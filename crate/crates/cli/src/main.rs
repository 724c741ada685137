//! `mpstn`: the batch command surface over corpora and trained forecasters.

mod commands;
mod config;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thiserror::Error;

/// Environment variable holding the log filter (e.g. `info`, `debug`).
pub const LOG_ENV: &str = "MPSTN_LOG";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    mpstn::io::write_atomic(path, bytes).map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

#[derive(Parser, Debug)]
#[command(name = "mpstn", version, about = "Multi-period spatio-temporal passenger flow forecaster")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic corpus (flows.csv, weather.csv, edges.csv).
    Gen {
        /// Generator config (JSON); defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model and write its best checkpoint and epoch log.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Experiment config (JSON, one section per concern).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Check that every search-space configuration fits the data, without training.
        #[arg(long)]
        dry_run: bool,
    },
    /// Score a checkpoint on the test split.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also score the historical-average and seasonal-naive baselines.
        #[arg(long)]
        baselines: bool,
    },
    /// Train the first `budget` points of the hyperparameter grid and rank them.
    Grid {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = mpstn::trainer::GRID_SIZE)]
        budget: usize,
    },
    /// Train every model variant and compare them.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render Markdown tables and per-station prediction series.
    Report {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// An ablation.csv written by `ablate`, rendered as a second table.
        #[arg(long)]
        ablation: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Gen { config, out } => commands::gen(config.as_deref(), &out),
        Command::Train {
            data,
            config,
            out,
            dry_run,
        } => commands::train(&data, config.as_deref(), &out, dry_run),
        Command::Eval {
            data,
            checkpoint,
            config,
            out,
            baselines,
        } => commands::eval(&data, &checkpoint, config.as_deref(), &out, baselines),
        Command::Grid {
            data,
            config,
            out,
            budget,
        } => commands::grid(&data, config.as_deref(), &out, budget),
        Command::Ablate { data, config, out } => commands::ablate(&data, config.as_deref(), &out),
        Command::Report {
            data,
            checkpoint,
            config,
            ablation,
            out,
        } => commands::report(&data, &checkpoint, config.as_deref(), ablation.as_deref(), &out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
