//! `sketchflow`: train an invertible latent flow against one reference
//! sketch, then sample, evaluate, and edit with the frozen source model.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sketchflow::error::Error;

use crate::commands::Metric;
use crate::config::RunConfig;

#[derive(Parser)]
#[command(
    name = "sketchflow",
    about = "Sketch-conditioned sampling from a frozen generator via an invertible latent flow",
    version
)]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. --set train.lambda_energy=5000.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Override the run seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the category text anchor.
    #[arg(long, global = true)]
    category: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build and export the cross-domain anchor pair.
    Anchors {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the flow against the configured sketch.
    Train,
    /// Render a sample grid from a checkpoint.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(short, default_value_t = 16)]
        n: usize,
        /// Style truncation for this grid (defaults to the config value).
        #[arg(long)]
        phi: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint (FID and/or precision-recall).
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Reference statistics cache.
        #[arg(long)]
        stats: Option<PathBuf>,
        /// Directory of reference images (builds stats; required for P&R).
        #[arg(long)]
        ref_images: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Metric::Fid)]
        metric: Metric,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Apply a latent edit direction or inject an inverted real image.
    Edit {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Edit-direction JSON file.
        #[arg(long)]
        direction: Option<PathBuf>,
        /// Inverted per-layer latent file.
        #[arg(long)]
        wplus: Option<PathBuf>,
        /// Override the direction's magnitude.
        #[arg(long)]
        magnitude: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig, Error> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::config("--config FILE is required"))?;
    let mut cfg = RunConfig::load(path, &cli.set)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
        cfg.train.seed = seed;
    }
    if let Some(category) = &cli.category {
        cfg.category = category.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Error> {
    let cfg = load_config(&cli)?;
    match cli.command {
        Command::Anchors { out } => commands::cmd_anchors(&cfg, out),
        Command::Train => commands::cmd_train(&cfg),
        Command::Sample {
            checkpoint,
            n,
            phi,
            out,
        } => commands::cmd_sample(&cfg, &checkpoint, n, phi, out),
        Command::Eval {
            checkpoint,
            stats,
            ref_images,
            metric,
            out,
        } => commands::cmd_eval(&cfg, &checkpoint, stats, ref_images, metric, out),
        Command::Edit {
            checkpoint,
            direction,
            wplus,
            magnitude,
            out,
        } => commands::cmd_edit(&cfg, &checkpoint, direction, wplus, magnitude, out),
    }
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 2,
        Error::Backend(_) => 3,
        Error::VersionMismatch { .. } => 4,
        Error::FingerprintMismatch(_) => 5,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
