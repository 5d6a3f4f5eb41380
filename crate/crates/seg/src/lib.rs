//! Segmentation networks, losses and the supervised / semi-supervised trainer.
//!
//! Logits are NCHW [`Tensor`](fractoseg_nn::Tensor)s with the 7 classes on the
//! channel axis. Losses are evaluated in f64 outside the autograd graph and hand
//! their logit gradients back to [`Graph::backward`](fractoseg_nn::Graph::backward).

pub mod checkpoint;
pub mod desk;
pub mod infer;
pub mod losses;
pub mod model;
pub mod softmax;
pub mod trainer;

pub use checkpoint::Checkpoint;
pub use infer::{evaluate, predict_logits, predict_mask, EvalSummary};
pub use losses::{lambda_at, LossBundle, RampSchedule, UnsupervisedWeights};
pub use model::{Architecture, Encoder, ModelConfig, SegModel};
pub use softmax::{pseudo_label, softmax, PseudoLabel};
pub use trainer::{
    sweep, sweep_to_csv, train_semi_supervised, train_supervised, EpochRecord, LabeledSample, Mode,
    StrategyRef, SweepRow, Trainer,
    TrainData, TrainOutcome, TrainerConfig, TrainingLog, UnlabeledSample,
};

use fractoseg_core::augment::AugmentError;
use fractoseg_core::patching::PatchError;
use fractoseg_core::DataError;

#[derive(Debug, thiserror::Error)]
pub enum SegError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite logits")]
    NonFinite,
    #[error("threshold {0} outside [0, 1]")]
    InvalidThreshold(f64),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("empty dataset: {0}")]
    EmptyDataset(&'static str),
    #[error("loss diverged at epoch {epoch}, step {step}")]
    DivergedLoss { epoch: usize, step: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("pretrained encoder weights not found at {0}")]
    PretrainedUnavailable(std::path::PathBuf),
    #[error(transparent)]
    Patch(#[from] PatchError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
