//! fedseg: trains a miniature segmentation network on the full dataset,
//! per silo, or federated across silos, and compares the outcomes.

mod config;
mod experiment;
mod tools;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thiserror::Error;

use fedseg_core::{DataError, MetricsError, NnError, ProtoError, TransportError};

use crate::config::RunArgs;

#[derive(Parser, Debug)]
#[command(
    name = "fedseg",
    version,
    about = "Federated semantic-segmentation testbed",
    args_conflicts_with_subcommands = true
)]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,

    #[command(flatten)]
    run: RunArgs,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Evaluate a saved model and print its metric record as JSON.
    Eval(tools::EvalArgs),
    /// Render inputs and predictions side by side as PPM files.
    Render(tools::RenderArgs),
    /// Write a synthetic dataset to disk as PPM pairs.
    GenData(tools::GenDataArgs),
    /// Summarize a COCO-style annotation file.
    InspectCoco(tools::InspectCocoArgs),
}

/// Everything that can go wrong, bucketed for the exit code contract:
/// 0 success, 2 config, 3 data, 4 numeric abort, 5 protocol.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Proto(#[from] ProtoError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Nn(NnError::NonFinite(_)) => 4,
            CliError::Nn(_) => 2,
            CliError::Data(_) | CliError::Metrics(_) | CliError::Io(_) => 3,
            CliError::Proto(ProtoError::NumericAbort { .. })
            | CliError::Proto(ProtoError::Nn(NnError::NonFinite(_))) => 4,
            CliError::Proto(_) | CliError::Transport(_) => 5,
        }
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Some(Command::Eval(args)) => tools::run_eval(args),
        Some(Command::Render(args)) => tools::run_render(args),
        Some(Command::GenData(args)) => tools::run_gen_data(args),
        Some(Command::InspectCoco(args)) => tools::run_inspect_coco(args),
        None => {
            let cfg = cli.run.resolve()?;
            experiment::run_experiment(&cfg)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("fedseg: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
