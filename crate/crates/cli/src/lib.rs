//! The `mcls` command line: pretraining, fine-tuning and analysis runs.
//!
//! [`run`] parses arguments and returns the process exit code, so tests can
//! drive the tool in-process.

mod commands;
mod paths;

use std::ffi::OsString;

use clap::{Parser, Subcommand};
use mcls_core::Error;

pub use paths::{metrics_path, predictions_path, train_log_path, vocab_path};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "mcls", version, about = "Multi-CLS encoder pretraining, fine-tuning and analysis")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pretrain an encoder on a directory of text files.
    Pretrain(commands::pretrain::PretrainArgs),
    /// Fine-tune a pretrained checkpoint on a task file.
    Finetune(commands::finetune::FinetuneArgs),
    /// Write predictions of a fine-tuned model, optionally as a dropout ensemble.
    Predict(commands::finetune::PredictArgs),
    /// Analyze prediction files and checkpoints.
    #[command(subcommand)]
    Analyze(commands::analyze::AnalyzeCommand),
    /// Generate a synthetic corpus, task file and starter config.
    Synth(commands::synth::SynthArgs),
}

/// A failed command: either bad usage or an error from the library.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Core(Error::Io(e))
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "usage: {m}"),
            Failure::Core(e) => write!(f, "{e}"),
        }
    }
}

pub type CmdResult<T = ()> = Result<T, Failure>;

/// 3 for numeric failures, 2 for everything else.
pub fn exit_code(f: &Failure) -> i32 {
    match f {
        Failure::Core(Error::NonFinite { .. } | Error::Numeric(_) | Error::Estimation(_)) => EXIT_NUMERIC,
        _ => EXIT_USAGE,
    }
}

pub fn execute(cli: Cli) -> CmdResult {
    match cli.command {
        Command::Pretrain(a) => commands::pretrain::run(a),
        Command::Finetune(a) => commands::finetune::run(a),
        Command::Predict(a) => commands::finetune::run_predict(a),
        Command::Analyze(a) => commands::analyze::run(a),
        Command::Synth(a) => commands::synth::run(a),
    }
}

/// Parse `args` (including the program name) and run; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {f}");
            exit_code(&f)
        }
    }
}
