//! `fractoseg` command-line front end.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 invalid configuration,
//! 3 missing input path.

pub mod commands;
pub mod config;
pub mod error;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use fractoseg_core::synth::Profile;
use fractoseg_seg::StrategyRef;

pub use config::*;
pub use error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Device {
    Cpu,
    Gpu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProfileArg {
    Hom,
    Het,
    Har,
}

impl From<ProfileArg> for Profile {
    fn from(p: ProfileArg) -> Profile {
        match p {
            ProfileArg::Hom => Profile::Hom,
            ProfileArg::Het => Profile::Het,
            ProfileArg::Har => Profile::Har,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "fractoseg", version, about = "Fracture-surface segmentation toolkit")]
pub struct Cli {
    /// TOML configuration for the command; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output root; each run writes into `<out>/<command>-<hash>`.
    #[arg(long, global = true, default_value = "runs")]
    pub out: PathBuf,
    #[arg(long, global = true, value_enum, default_value = "cpu")]
    pub device: Device,
    /// Augmentation strategy name (train), or a comma-separated list (sweep).
    #[arg(long, global = true)]
    pub strategy: Option<String>,
    #[arg(long, global = true, value_enum)]
    pub profile: Option<ProfileArg>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    Gen {
        #[arg(long)]
        n: Option<usize>,
        /// Unlabeled-to-labeled ratio.
        #[arg(long)]
        mu: Option<f64>,
    },
    /// Pairwise SSIM matrix, summary statistics and heatmap.
    Ssim {
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Train/val/test split of a dataset.
    Split {
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Supervised or semi-supervised training run.
    Train {
        /// Dataset directory or manifest.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// One training run per strategy, evaluated on the test split.
    Sweep {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Full-resolution mask prediction.
    Predict {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Image directory, single image, or dataset directory.
        #[arg(long)]
        images: Option<PathBuf>,
    },
    /// Per-image IoU metrics and diagnostic plots.
    Eval {
        #[arg(long)]
        pred: Option<PathBuf>,
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Initial crack size from predicted masks.
    Measure {
        #[arg(long)]
        pred: Option<PathBuf>,
        /// Directory of `<id>.json` metadata files.
        #[arg(long)]
        meta: Option<PathBuf>,
    },
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn apply_run_overrides(cli: &Cli, cfg: &mut RunConfig, data: &Option<PathBuf>, epochs: Option<usize>) {
    set(&mut cfg.seed, cli.seed);
    set(&mut cfg.data.manifest, data.clone());
    set(&mut cfg.trainer.epochs, epochs);
}

/// Runs one command and returns its run directory.
pub fn run(cli: &Cli) -> Result<PathBuf, CliError> {
    if cli.device == Device::Gpu {
        return Err(CliError::ConfigInvalid("no GPU backend is available; use --device cpu".into()));
    }
    let cfg_path = cli.config.as_deref();
    let out: &Path = &cli.out;
    match &cli.command {
        Command::Gen { n, mu } => {
            let mut cfg: GenConfig = load_toml(cfg_path)?;
            set(&mut cfg.n, *n);
            set(&mut cfg.mu, *mu);
            set(&mut cfg.seed, cli.seed);
            set(&mut cfg.profile, cli.profile.map(Profile::from));
            commands::gen(&cfg, out)
        }
        Command::Ssim { dataset } => {
            let mut cfg: SsimRunConfig = load_toml(cfg_path)?;
            set(&mut cfg.dataset, dataset.clone());
            commands::ssim(&cfg, out)
        }
        Command::Split { dataset } => {
            let mut cfg: SplitConfig = load_toml(cfg_path)?;
            set(&mut cfg.dataset, dataset.clone());
            set(&mut cfg.seed, cli.seed);
            commands::split(&cfg, out)
        }
        Command::Train { data, epochs } => {
            let mut cfg: RunConfig = load_toml(cfg_path)?;
            apply_run_overrides(cli, &mut cfg, data, *epochs);
            set(&mut cfg.trainer.strategy, cli.strategy.clone().map(StrategyRef::Named));
            commands::train(&cfg, out)
        }
        Command::Sweep { data, epochs } => {
            let mut cfg: RunConfig = load_toml(cfg_path)?;
            apply_run_overrides(cli, &mut cfg, data, *epochs);
            if let Some(s) = &cli.strategy {
                cfg.strategies = s.split(',').map(|s| s.trim().to_string()).collect();
            }
            commands::sweep_cmd(&cfg, out)
        }
        Command::Predict { checkpoint, images } => {
            let mut cfg: PredictConfig = load_toml(cfg_path)?;
            set(&mut cfg.checkpoint, checkpoint.clone());
            set(&mut cfg.images, images.clone());
            commands::predict(&cfg, out)
        }
        Command::Eval { pred, truth } => {
            let mut cfg: EvalConfig = load_toml(cfg_path)?;
            set(&mut cfg.pred, pred.clone());
            set(&mut cfg.truth, truth.clone());
            commands::eval(&cfg, out)
        }
        Command::Measure { pred, meta } => {
            let mut cfg: MeasureConfig = load_toml(cfg_path)?;
            set(&mut cfg.pred, pred.clone());
            set(&mut cfg.meta, meta.clone());
            commands::measure(&cfg, out)
        }
    }
}
