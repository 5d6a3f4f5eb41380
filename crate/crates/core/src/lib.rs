//! Fracture-surface segmentation toolkit: data model and everything that does not
//! need a neural network.
//!
//! - [`taxonomy`], [`mask`], [`annotation`], [`dataset`]: label space, raster masks,
//!   polygon ingestion, manifests and splits
//! - [`ssim`]: pairwise structural similarity and dataset statistics
//! - [`augment`]: weak/strong augmentation pipelines and named strategies
//! - [`patching`]: 2×2 slicing to fixed-size patches and stitching back
//! - [`metrics`]: IoU, mIoU, Dice and per-image diagnostics
//! - [`measure`]: initial crack size from masks and error statistics
//! - [`synth`]: procedural fracture-surface images with exact ground truth

pub mod annotation;
pub mod augment;
pub mod dataset;
pub mod imageops;
pub mod io;
pub mod mask;
pub mod measure;
pub mod metrics;
pub mod patching;
pub mod plot;
pub mod rng;
pub mod ssim;
pub mod stats;
pub mod synth;
pub mod taxonomy;

pub use annotation::{rasterize, PolygonAnnotation};
pub use dataset::{
    compute_ratio, split_dataset, DatasetManifest, ImageRecord, RecordEntry, SplitMethod,
    SplitReport, Splits, UnlabeledRatio,
};
pub use mask::Mask;
pub use taxonomy::{Class, ClassTaxonomy, NUM_CLASSES};

/// Errors from data ingestion, manifests and splitting.
#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("annotation label {0:?} is not a taxonomy class")]
    UnknownLabel(String),
    #[error("polygon {label:?} has {points} points, need at least 3")]
    DegeneratePolygon { label: String, points: usize },
    #[error("class id {0} outside 0..=6")]
    InvalidClassId(u8),
    #[error("buffer of {found} labels does not match {expected:?}")]
    ShapeMismatch { expected: (u32, u32), found: usize },
    #[error("image {width}x{height} is smaller than 64x64")]
    ImageTooSmall { width: u32, height: u32 },
    #[error("scale must be positive and finite, got {0}")]
    InvalidScale(f64),
    #[error("duplicate record id {0:?}")]
    DuplicateId(String),
    #[error("split references unknown id {0:?}")]
    UnknownId(String),
    #[error("id {0:?} appears in more than one split")]
    OverlappingSplits(String),
    #[error("unlabeled id {0:?} placed in val or test")]
    UnlabeledInEvaluation(String),
    #[error("no labeled records")]
    DivisionByZero,
    #[error("insufficient labeled records ({count}){}", stratum.as_ref().map(|s| format!(" in stratum {s:?}")).unwrap_or_default())]
    InsufficientLabeled { stratum: Option<String>, count: usize },
    #[error("bad split fractions ({0}, {1})")]
    BadFractions(f64, f64),
    #[error("unknown split method {0:?}")]
    UnknownSplitMethod(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
