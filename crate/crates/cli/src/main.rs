use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dualpath::cli::{run, Command, Invocation};

#[derive(Parser)]
#[command(name = "dualpath", version, about = "Dual-path forecaster: training, ablation and diagnostics")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train one model and save the best checkpoint
    Train(Args),
    /// Score a saved checkpoint on the test split
    Evaluate(Args),
    /// Train alternating and joint variants under one seed
    Ablate(Args),
    /// Export per-branch gradient log-variance for both modes
    DiagnoseGradvar(Args),
    /// Run the Monte-Carlo theory checks on a synthetic spec
    SynthVerify(Args),
}

#[derive(clap::Args)]
struct Args {
    /// Run config (or synthetic spec for synth-verify)
    #[arg(long)]
    config: PathBuf,
    /// Output directory
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the config seed
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (command, args) = match cli.command {
        Cmd::Train(a) => (Command::Train, a),
        Cmd::Evaluate(a) => (Command::Evaluate, a),
        Cmd::Ablate(a) => (Command::Ablate, a),
        Cmd::DiagnoseGradvar(a) => (Command::DiagnoseGradvar, a),
        Cmd::SynthVerify(a) => (Command::SynthVerify, a),
    };
    let code = run(&Invocation {
        command,
        config: args.config,
        out: args.out,
        seed: args.seed,
    });
    ExitCode::from(code as u8)
}
