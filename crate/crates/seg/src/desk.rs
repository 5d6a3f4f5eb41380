//! Small synthetic semi-supervised setup that runs on one CPU core.

use fractoseg_core::imageops::to_f32;
use fractoseg_core::synth::{generate_dataset, Profile, SampleMeta, SizeRange};
use serde::{Deserialize, Serialize};

use crate::model::ModelConfig;
use crate::trainer::{LabeledSample, StrategyRef, TrainData, TrainerConfig, UnlabeledSample};
use crate::losses::RampSchedule;
use crate::SegError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeskSetup {
    pub profile: Profile,
    pub labeled: usize,
    pub unlabeled: usize,
    pub val: usize,
    pub test: usize,
    pub size: SizeRange,
}

impl Default for DeskSetup {
    fn default() -> Self {
        DeskSetup {
            profile: Profile::Het,
            labeled: 12,
            unlabeled: 60,
            val: 4,
            test: 16,
            size: SizeRange::default(),
        }
    }
}

/// Training pools plus a labeled test split with the generator metadata.
#[derive(Debug, Clone)]
pub struct DeskData {
    pub train: TrainData,
    pub test: Vec<LabeledSample>,
    pub test_meta: Vec<SampleMeta>,
}

impl DeskSetup {
    /// Draws all images from one generator stream and assigns them, in order, to
    /// labeled train, unlabeled, validation and test.
    pub fn build(&self, seed: u64) -> Result<DeskData, SegError> {
        let total = self.labeled + self.unlabeled + self.val + self.test;
        let ds = generate_dataset(self.profile, total, seed, 0.0, self.size)
            .map_err(|e| SegError::Config(e.to_string()))?;
        let mut out = DeskData {
            train: TrainData::default(),
            test: Vec::new(),
            test_meta: Vec::new(),
        };
        for (i, s) in ds.samples.into_iter().enumerate() {
            let image = to_f32(&s.image);
            let id = s.meta.id.clone();
            let labeled = LabeledSample {
                id: id.clone(),
                image: image.clone(),
                mask: s.mask,
            };
            if i < self.labeled {
                out.train.labeled.push(labeled);
            } else if i < self.labeled + self.unlabeled {
                out.train.unlabeled.push(UnlabeledSample { id, image });
            } else if i < self.labeled + self.unlabeled + self.val {
                out.train.val.push(labeled);
            } else {
                out.test.push(labeled);
                out.test_meta.push(s.meta);
            }
        }
        Ok(out)
    }
}

/// Trainer settings used for the desk experiment. Both modes take the same number
/// of steps: one pass over the unlabeled patches per epoch.
pub fn desk_trainer(seed: u64) -> TrainerConfig {
    let setup = DeskSetup::default();
    TrainerConfig {
        strategy: StrategyRef::Named("HET3".into()),
        model: ModelConfig::small_unet(32, 8),
        epochs: 60,
        batch_labeled: 8,
        batch_unlabeled: 8,
        steps_per_epoch: Some((setup.unlabeled * 4).div_ceil(8)),
        ramp: RampSchedule {
            lambda_max: 1.0,
            ramp_epochs: 60.0,
        },
        seed,
        ..Default::default()
    }
}
