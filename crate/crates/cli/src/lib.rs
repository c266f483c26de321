//! `salienc3d`: train, predict, evaluate, gradient-check and generate
//! synthetic data for the 3D convolutional saliency model.

pub mod commands;
pub mod config;

use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use salienc3d_core::gradcheck::Backwards;

pub use commands::{
    Failure, Outcome, EXIT_CHECKPOINT, EXIT_CONFIG, EXIT_DATA, EXIT_FAILED, EXIT_OK,
};
pub use config::RunConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Train on the manifest and checkpoint the weights.
    Train,
    /// Write one saliency PGM per manifest entry.
    Predict,
    /// Score saliency maps against ground truth.
    Eval,
    /// Check every backward pass against finite differences.
    Gradcheck,
    /// Generate a synthetic moving-square dataset.
    Synth,
}

#[derive(Debug, Clone, Parser)]
#[command(name = "salienc3d", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON run configuration; every key is optional.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Checkpoint to load (predict) or resume from (train).
    #[arg(long, global = true)]
    pub checkpoint: Option<PathBuf>,
    /// Manifest overriding the config's `manifest`.
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    /// Output directory: checkpoints for train, maps for predict, reports
    /// for eval, the dataset for synth.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Seed overriding the config's `seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

fn resolve(cli: &Cli) -> Result<RunConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p).map_err(|m| Failure {
            code: EXIT_CONFIG,
            message: m,
        })?,
        None => RunConfig::default(),
    };
    if let Some(m) = &cli.manifest {
        cfg.manifest = Some(m.clone());
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let (Command::Train, Some(o)) = (cli.command, &cli.out) {
        cfg.checkpoint_dir = o.clone();
    }
    Ok(cfg)
}

/// Runs the parsed command with the default backward passes.
pub fn run(cli: &Cli, out: &mut dyn Write) -> Outcome {
    run_with(cli, Backwards::default(), out)
}

/// As [`run`], with the backward passes used by `gradcheck` replaced.
pub fn run_with(cli: &Cli, backwards: Backwards, out: &mut dyn Write) -> Outcome {
    let cfg = resolve(cli)?;
    let out_dir = cli.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    match cli.command {
        Command::Train => commands::cmd_train(&cfg, cli.checkpoint.as_deref(), out),
        Command::Predict => commands::cmd_predict(&cfg, cli.checkpoint.as_deref(), &out_dir, out),
        Command::Eval => {
            let (report, roc) = (out_dir.join("report.csv"), out_dir.join("roc.csv"));
            commands::cmd_eval(&cfg, cfg.saliency_dir(), &report, &roc, out)
        }
        Command::Gradcheck => commands::cmd_gradcheck(cfg.seed, backwards, out),
        Command::Synth => commands::cmd_synth(&cfg, &out_dir, out),
    }
}
