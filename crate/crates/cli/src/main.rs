//! `gncount`: choose group-normalization group counts from layer widths and
//! check the underlying gradient-variance claims numerically.
//!
//! Exit codes: 0 success, 1 a measured quantity missed its tolerance,
//! 2 usage error, 3 I/O or data format error.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod report;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Tolerance(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Tolerance(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

impl From<gncount::Error> for CliError {
    fn from(e: gncount::Error) -> Self {
        match e {
            gncount::Error::Io { .. } | gncount::Error::Format { .. } => CliError::Io(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "gncount", version, about = "Group counts for group normalization that keep gradient variance stable")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Per-layer group counts for an architecture.
    Plan(commands::plan::PlanArgs),
    /// Monte-Carlo gradient-variance ratios around one block.
    Probe(commands::probe::ProbeArgs),
    /// Forward/backward activation gains.
    Gains(commands::gains::GainsArgs),
    /// Analytic gradients against central differences.
    Gradcheck(commands::gradcheck::GradcheckArgs),
    /// Train a group-normalized MLP classifier.
    Train(commands::train::TrainArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Plan(a) => commands::plan::run(a),
        Command::Probe(a) => commands::probe::run(a),
        Command::Gains(a) => commands::gains::run(a),
        Command::Gradcheck(a) => commands::gradcheck::run(a),
        Command::Train(a) => commands::train::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
