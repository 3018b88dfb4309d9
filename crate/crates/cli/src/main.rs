use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod ablate;
mod commands;
mod error;
mod render;

use error::CliError;

/// Point-supervised berry segmentation and counting toolkit.
#[derive(Debug, Parser)]
#[command(name = "tss", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset with a manifest.
    Gen(commands::GenArgs),
    /// Train the pixel classifier and write a checkpoint.
    Train(commands::TrainArgs),
    /// Evaluate a checkpoint on one split.
    Eval(commands::EvalArgs),
    /// Render the selective watershed regions of a probability map.
    Watershed(commands::WatershedArgs),
    /// Train and evaluate several loss configurations and tabulate them.
    Ablate(ablate::AblateArgs),
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Gen(args) => commands::gen(args),
        Command::Train(args) => commands::train(args),
        Command::Eval(args) => commands::eval(args),
        Command::Watershed(args) => commands::watershed(args),
        Command::Ablate(args) => ablate::ablate(args),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(CliError::USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

/// `path` with `suffix` appended to its file name.
pub(crate) fn sibling(path: &std::path::Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}
