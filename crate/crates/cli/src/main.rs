//! `typegraph`: build graphs, train, evaluate and inspect entity typing
//! models from a JSON experiment config.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::Overrides;
use error::CliError;

#[derive(Parser)]
#[command(name = "typegraph", version, about = "Fine-grained entity typing with label co-occurrence propagation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the training co-occurrence graph as a TSV edge list plus stats.
    BuildGraph {
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Train a model and write its checkpoint and epoch log.
    Train {
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Score a split and write the full evaluation report.
    Eval {
        #[command(flatten)]
        overrides: Overrides,
        /// Defaults to `<output_dir>/checkpoint.json`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "dev")]
        split: String,
    },
    /// Write thresholded type predictions as JSON lines.
    Predict {
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Dataset file to label; defaults to the configured split.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Precision, recall and F1 at the 50 grid thresholds, as CSV.
    PrCurve {
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "dev")]
        split: String,
    },
    /// Finite-difference check of every gradient of the built-in toy model.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Generate a seeded synthetic corpus with a matching config.
    Synth {
        #[arg(long)]
        output_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 400)]
        samples: usize,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::BuildGraph { overrides } => commands::build_graph(&overrides),
        Command::Train { overrides } => commands::train(&overrides),
        Command::Eval { overrides, checkpoint, split } => commands::eval(&overrides, checkpoint.as_deref(), &split),
        Command::Predict {
            overrides,
            checkpoint,
            input,
            split,
        } => commands::predict(&overrides, checkpoint.as_deref(), input.as_deref(), &split),
        Command::PrCurve { overrides, checkpoint, split } => commands::pr_curve(&overrides, checkpoint.as_deref(), &split),
        Command::Gradcheck { seed, output_dir } => commands::gradcheck(seed, output_dir.as_deref()),
        Command::Synth { output_dir, seed, samples } => commands::synth(&output_dir, seed, samples),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
