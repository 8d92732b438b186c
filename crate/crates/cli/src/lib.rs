//! `vattr`: toy corpus synthesis, feature extraction, training and
//! evaluation for synthetic speech attribution.
//!
//! Exit codes: 0 success, 1 user or configuration error, 2 data error,
//! 3 numerical failure.

use std::ffi::OsString;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};

pub mod commands;
mod common;
mod error;

pub use commands::eval::EvalArgs;
pub use commands::extract::{ExtractArgs, ExtractKind};
pub use commands::toygen::ToygenArgs;
pub use commands::train::{SplitKind, TrainArgs};
pub use common::ECHO_FILE;
pub use error::{CliError, ExitKind, Result};

#[derive(Debug, Parser)]
#[command(name = "vattr", version, about = "Attribute synthetic speech to the algorithm that generated it")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize a labelled source-filter toy corpus.
    Toygen(ToygenArgs),
    /// Compute and cache features for every utterance in a manifest.
    Extract(ExtractArgs),
    /// Train an attribution network.
    Train(TrainArgs),
    /// Evaluate one model or the late fusion of two.
    Eval(EvalArgs),
}

/// Parses arguments, runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match Cli::command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => ExitKind::User as i32,
            };
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitKind::User as i32;
        }
    };
    let sub = matches.subcommand().expect("subcommand is required").1;
    let result = match cli.command {
        Command::Toygen(a) => commands::toygen::run(a, sub),
        Command::Extract(a) => commands::extract::run(a, sub),
        Command::Train(a) => commands::train::run(a, sub),
        Command::Eval(a) => commands::eval::run(a, sub),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.code()
        }
    }
}
