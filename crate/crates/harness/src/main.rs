use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mdvsc_harness::{run, Command, ExperimentConfig, HarnessError};

#[derive(Parser)]
#[command(name = "mdvsc", about = "Semantic video transmission experiments", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a model; writes a checkpoint and the loss curve.
    Train(Args),
    /// Quality over a grid of target CBRs.
    SweepCbr(Args),
    /// Quality over a grid of channel SNRs at fixed CBR.
    SweepSnr(Args),
    /// Quality over equal common/individual drop ratios.
    SweepDrop(Args),
    /// Count-preserving trades between common and individual drop ratios.
    SweepBalance(Args),
    /// Drop policies and common-feature ablations.
    Ablate(Args),
    /// Per-GOP CBR and quality over a long video.
    Jitter(Args),
}

#[derive(clap::Args)]
struct Args {
    /// TOML experiment configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// `section.key=value` overrides, applied after the file.
    #[arg(value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Cmd {
    fn split(self) -> (Command, Args) {
        match self {
            Cmd::Train(a) => (Command::Train, a),
            Cmd::SweepCbr(a) => (Command::SweepCbr, a),
            Cmd::SweepSnr(a) => (Command::SweepSnr, a),
            Cmd::SweepDrop(a) => (Command::SweepDrop, a),
            Cmd::SweepBalance(a) => (Command::SweepBalance, a),
            Cmd::Ablate(a) => (Command::Ablate, a),
            Cmd::Jitter(a) => (Command::Jitter, a),
        }
    }
}

fn execute(command: Command, args: Args) -> Result<(), HarnessError> {
    let mut overrides = args.overrides;
    if let Some(s) = args.seed {
        overrides.push(format!("seed={s}"));
    }
    if let Some(o) = &args.out {
        overrides.push(format!("out={:?}", o.display().to_string()));
    }
    if let Some(c) = &args.checkpoint {
        overrides.push(format!("checkpoint={:?}", c.display().to_string()));
    }
    let cfg = ExperimentConfig::load(args.config.as_deref(), &overrides)?;
    let report = run(command, &cfg)?;
    for (name, table) in &report.tables {
        println!("{}: {} rows -> {}", command.name(), table.rows.len(), cfg.out.join(format!("{name}.csv")).display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let (command, args) = Cli::parse().command.split();
    match execute(command, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mdvsc {}: {e}", command.name());
            ExitCode::from(e.exit_code())
        }
    }
}
