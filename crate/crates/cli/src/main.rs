//! `bloinst`: generate synthetic shape datasets, train the detector and
//! segmenter pair, evaluate checkpoints and run ablation sweeps.
//!
//! Exit codes: 0 success, 2 usage, 3 I/O, 4 training divergence,
//! 5 incompatible inputs, 1 anything else.

mod commands;
mod config;
mod error;
mod output;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(
    name = "bloinst",
    version,
    about = "Bi-level detector and segmenter training on synthetic shapes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic shapes dataset.
    Generate(commands::generate::GenerateArgs),
    /// Train one strategy and write checkpoint, trace and summary.
    Train(commands::train::TrainArgs),
    /// Evaluate a checkpoint's mask AP on a dataset.
    Eval(commands::eval::EvalArgs),
    /// Sweep strategies, split ratios and seeds.
    Ablate(commands::ablate::AblateArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => commands::generate::run(a),
        Command::Train(a) => commands::train::run(a),
        Command::Eval(a) => commands::eval::run(a),
        Command::Ablate(a) => commands::ablate::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
