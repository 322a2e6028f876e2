use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mmf::commands::{run_to_exit_code, Command, CommandArgs};

#[derive(Parser)]
#[command(name = "mmf", version, about = "Average-velocity field training and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a field; writes the log, checkpoints, and a manifest.
    Train(Args),
    /// Score a checkpoint; writes metrics and sample paths.
    Eval(Args),
    /// Generate samples from a checkpoint.
    Sample(Args),
    /// Run the analytic oracle residual checks.
    Diagnose(Args),
    /// Train the four λ variants over the configured seeds.
    Ablation(Args),
}

#[derive(clap::Args)]
struct Args {
    /// Experiment config (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Checkpoint to load (eval, sample).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Output directory; overrides `output_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the field-initialization and training seeds.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, args) = match cli.command {
        Cmd::Train(a) => (Command::Train, a),
        Cmd::Eval(a) => (Command::Eval, a),
        Cmd::Sample(a) => (Command::Sample, a),
        Cmd::Diagnose(a) => (Command::Diagnose, a),
        Cmd::Ablation(a) => (Command::Ablation, a),
    };
    let args = CommandArgs {
        config: args.config,
        checkpoint: args.checkpoint,
        out: args.out,
        seed: args.seed,
    };
    ExitCode::from(run_to_exit_code(command, &args) as u8)
}
