//! `cnn-recon`: the reconstruction pipeline as file-handoff stages.
//!
//! Exit codes: 0 success, 2 config error, 3 data error, 4 numerical failure.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::PipelineConfig;
use error::CliResult;

#[derive(Parser)]
#[command(name = "cnn-recon", version, about = "Decode network features from voxel responses and reconstruct images")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate stimuli, a network and simulated voxel responses.
    Simulate(StageArgs),
    /// Extract network features of every stimulus for the decoded layers.
    Features(StageArgs),
    /// Train one sparse decoder per layer and score it on held-out items.
    Train(StageArgs),
    /// Reconstruct held-out items from decoded features.
    Invert(StageArgs),
    /// Score reconstructions and summarize voxel selection by area.
    Evaluate(StageArgs),
    /// Print every config key with its default.
    Schema,
}

#[derive(Args)]
struct StageArgs {
    /// Pipeline config file (`section.key = value` lines).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Replace this stage's existing output directory.
    #[arg(long)]
    force: bool,
    /// Override `run.seed`.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
}

fn run_stage(args: &StageArgs, stage: fn(&PipelineConfig, bool) -> CliResult<()>) -> CliResult<()> {
    let cfg = PipelineConfig::load(&args.config, args.seed)?;
    stage(&cfg, args.force)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(a) => run_stage(a, commands::simulate),
        Command::Features(a) => run_stage(a, commands::features),
        Command::Train(a) => run_stage(a, commands::train),
        Command::Invert(a) => run_stage(a, commands::invert),
        Command::Evaluate(a) => run_stage(a, commands::evaluate),
        Command::Schema => {
            print!("{}", config::template());
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
