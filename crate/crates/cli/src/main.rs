//! `mpa` — build vocabularies and context matrices, pre-train with any
//! registered mode, evaluate checkpoints, dump attention, and drive the
//! planted-trap experiment.

mod commands;
mod manifest;

use clap::{Parser, Subcommand};
use thiserror::Error;

use mpa_core::cooccur::CooccurError;
use mpa_core::corpus::CorpusError;
use mpa_core::model::ModelError;
use mpa_core::train::TrainError;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Format(String),
    #[error("numeric abort: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Io(_) | CliError::Format(_) => EXIT_IO,
            CliError::Numeric(_) => EXIT_NUMERIC,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::Io(io) => CliError::Io(io.to_string()),
            other => CliError::Format(other.to_string()),
        }
    }
}

impl From<CooccurError> for CliError {
    fn from(e: CooccurError) -> Self {
        match e {
            CooccurError::Io(io) => CliError::Io(io.to_string()),
            other => CliError::Format(other.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::InvalidConfig(m) => CliError::Config(m),
            ModelError::Io(io) => CliError::Io(io.to_string()),
            other => CliError::Format(other.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::UnknownMode(_)
            | TrainError::Config(_)
            | TrainError::MissingContextMatrix { .. } => CliError::Config(e.to_string()),
            TrainError::NumericAbort { .. } => CliError::Numeric(e.to_string()),
            TrainError::Objective(o) => CliError::Config(o.to_string()),
            TrainError::Model(m) => m.into(),
            TrainError::Io(io) => CliError::Io(io.to_string()),
            other => CliError::Format(other.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(name = "mpa", version, about = "Co-occurrence-guided transformer pre-training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a frequency-ranked vocabulary from a line-per-document corpus
    BuildVocab(commands::build_vocab::Args),
    /// Count windowed co-occurrences and write the scaled context matrix
    BuildCooccur(commands::build_cooccur::Args),
    /// Train a model pair under a registered mode
    Pretrain(commands::pretrain::Args),
    /// Evaluate a trainer checkpoint on held-out text
    Eval(commands::eval::Args),
    /// Dump per-head attention rows for one sentence
    DumpAttention(commands::dump_attention::Args),
    /// Generate the planted-trap corpus and compare modes across seeds
    ExperimentTrap(commands::experiment_trap::Args),
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::BuildVocab(args) => commands::build_vocab::run(args),
        Command::BuildCooccur(args) => commands::build_cooccur::run(args),
        Command::Pretrain(args) => commands::pretrain::run(args),
        Command::Eval(args) => commands::eval::run(args),
        Command::DumpAttention(args) => commands::dump_attention::run(args),
        Command::ExperimentTrap(args) => commands::experiment_trap::run(args),
    };
    if let Err(err) = result {
        eprintln!("error: {err}");
        std::process::exit(err.exit_code());
    }
}
