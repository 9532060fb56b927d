//! Command-line front end for the modulation-guidance lab.
//!
//! Exit codes: 0 success, 2 configuration error, 3 checkpoint or
//! compatibility error, 4 numeric failure, 1 anything else (I/O).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use modlab_core::commands;
use modlab_core::config::RunConfig;
use modlab_core::Error;

#[derive(Parser)]
#[command(
    name = "modlab",
    about = "Desk-scale diffusion-transformer lab: modulation-space guidance, \
             dynamic per-layer schedules, and pooled-embedding retrofit",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, clap::Args)]
struct CommonArgs {
    /// Path to the run configuration (strict JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override every seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Allow writing into an existing output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Train the toy diffusion transformer and write a checkpoint.
    Train(CommonArgs),
    /// Sample images from a checkpoint and grade them with the oracle.
    Generate(CommonArgs),
    /// Sweep a guidance axis (w, i, or cfg) and emit the trade-off curve.
    Sweep(CommonArgs),
    /// Distill a pooled-embedding adapter onto a frozen pooled-free base.
    Retrofit(CommonArgs),
    /// Pooled-embedding ablation across prompt lengths.
    Ablate(CommonArgs),
    /// Attention-mass analysis under guidance.
    Attn(CommonArgs),
}

impl Command {
    fn common(&self) -> &CommonArgs {
        match self {
            Command::Train(a)
            | Command::Generate(a)
            | Command::Sweep(a)
            | Command::Retrofit(a)
            | Command::Ablate(a)
            | Command::Attn(a) => a,
        }
    }
}

fn load_config(args: &CommonArgs) -> Result<RunConfig, Error> {
    let mut config = RunConfig::from_file(&args.config)?;
    if let Some(seed) = args.seed {
        config.override_seed(seed);
    }
    if let Some(out) = &args.out {
        config.io.out_dir = out.clone();
    }
    if args.force {
        config.io.force = true;
    }
    Ok(config)
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_)
        | Error::Range(_)
        | Error::Vocabulary(_)
        | Error::PromptLength { .. }
        | Error::Analysis(_) => 2,
        Error::Checkpoint(_) | Error::Dataset(_) => 3,
        Error::Numeric(_)
        | Error::Divergence(_)
        | Error::Frozenness(_)
        | Error::MissingGradient(_)
        | Error::DimensionMismatch { .. } => 4,
        Error::Io(_) => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = load_config(cli.command.common()).and_then(|config| match &cli.command {
        Command::Train(_) => commands::cmd_train(&config),
        Command::Generate(_) => commands::cmd_generate(&config),
        Command::Sweep(_) => commands::cmd_sweep(&config),
        Command::Retrofit(_) => commands::cmd_retrofit(&config),
        Command::Ablate(_) => commands::cmd_ablate(&config),
        Command::Attn(_) => commands::cmd_attn(&config),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
