//! Per-command configuration documents.
//!
//! Every command resolves its settings into one TOML document (file values, then
//! command-line overrides), validates it, and copies it into its run directory as
//! `config.toml`. Passing that copy back with `--config` repeats the run. The run
//! directory is `<out>/<command>-<hash>`, where `hash` is the first 12 hex digits
//! of the SHA-256 of the resolved document.

use std::path::{Path, PathBuf};

use fractoseg_core::dataset::SplitMethod;
use fractoseg_core::ssim::SsimConfig;
use fractoseg_core::synth::Profile;
use fractoseg_seg::TrainerConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenConfig {
    pub profile: Profile,
    pub n: usize,
    /// Unlabeled-to-labeled ratio; 0 labels every image.
    pub mu: f64,
    pub seed: u64,
    pub min_size: u32,
    pub max_size: u32,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            profile: Profile::Het,
            n: 20,
            mu: 0.0,
            seed: 0,
            min_size: 64,
            max_size: 96,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SelectionKind {
    #[default]
    AllPairs,
    VsFirst,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SsimRunConfig {
    /// Dataset directory or manifest file.
    pub dataset: PathBuf,
    pub selection: SelectionKind,
    pub ssim: SsimConfig,
}

impl Default for SsimRunConfig {
    fn default() -> Self {
        SsimRunConfig {
            dataset: PathBuf::new(),
            selection: SelectionKind::AllPairs,
            ssim: SsimConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub dataset: PathBuf,
    pub method: SplitMethod,
    pub seed: u64,
    pub train_fraction: f64,
    pub val_fraction: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            dataset: PathBuf::new(),
            method: SplitMethod::Stratified,
            seed: 0,
            train_fraction: 0.6,
            val_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Dataset directory or manifest file. Stored splits are used when present.
    pub manifest: PathBuf,
    pub split_method: SplitMethod,
    pub train_fraction: f64,
    pub val_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            manifest: PathBuf::new(),
            split_method: SplitMethod::Stratified,
            train_fraction: 0.6,
            val_fraction: 0.2,
        }
    }
}

/// Training and sweep runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub trainer: TrainerConfig,
    /// Strategies for `sweep`; ignored by `train`.
    pub strategies: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct PredictConfig {
    pub checkpoint: PathBuf,
    /// Directory of PNG images, or a dataset directory / manifest.
    pub images: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Directory of predicted class-id PNG masks.
    pub pred: PathBuf,
    /// Directory of ground-truth masks with matching file names.
    pub truth: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeasureConfig {
    /// Directory of predicted class-id PNG masks.
    pub pred: PathBuf,
    /// Directory of per-image metadata JSON files (`<id>.json`).
    pub meta: PathBuf,
    /// Relative band in % for outlier marking.
    pub band_pct: f64,
}

impl Default for MeasureConfig {
    fn default() -> Self {
        MeasureConfig {
            pred: PathBuf::new(),
            meta: PathBuf::new(),
            band_pct: 1.0,
        }
    }
}

pub fn load_toml<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, CliError> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            if !p.exists() {
                return Err(CliError::PathMissing(p.to_path_buf()));
            }
            let text = std::fs::read_to_string(p)?;
            toml::from_str(&text).map_err(|e| CliError::ConfigInvalid(format!("{}: {e}", p.display())))
        }
    }
}

/// Canonical absolute form of an input path; fails when it does not exist.
pub fn existing(path: &Path, what: &str) -> Result<PathBuf, CliError> {
    if path.as_os_str().is_empty() {
        return Err(CliError::ConfigInvalid(format!("{what} is required")));
    }
    std::fs::canonicalize(path).map_err(|_| CliError::PathMissing(path.to_path_buf()))
}

pub fn to_toml<T: Serialize>(cfg: &T) -> Result<String, CliError> {
    toml::to_string_pretty(cfg).map_err(|e| CliError::ConfigInvalid(e.to_string()))
}

pub fn config_hash(text: &str) -> String {
    hex::encode(&Sha256::digest(text.as_bytes())[..6])
}

/// Creates `<out>/<command>-<hash>` and writes the resolved config into it.
pub fn run_dir<T: Serialize>(out: &Path, command: &str, cfg: &T) -> Result<PathBuf, CliError> {
    let text = to_toml(cfg)?;
    let dir = out.join(format!("{command}-{}", config_hash(&text)));
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("config.toml"), text)?;
    Ok(dir)
}
