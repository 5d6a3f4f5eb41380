//! Full-resolution prediction through 2×2 patch slicing.

use fractoseg_core::imageops::argmax_planar;
use fractoseg_core::metrics::{miou, ClassIoUReport};
use fractoseg_core::patching::{slice_image, stitch_logits, PatchGrid};
use fractoseg_core::{Mask, NUM_CLASSES};
use image::Rgb32FImage;
use serde::{Deserialize, Serialize};

use crate::model::SegModel;
use crate::trainer::LabeledSample;
use crate::SegError;

/// Planar `7 × H × W` logits for a full image.
pub fn predict_logits(model: &SegModel, image: &Rgb32FImage) -> Result<(PatchGrid, Vec<f32>), SegError> {
    let (grid, patches) = slice_image(image, model.config.input_size)?;
    let refs: Vec<&Rgb32FImage> = patches.iter().collect();
    let z = model.logits(&refs, false)?;
    let per = z.len() / patches.len();
    let planar: Vec<Vec<f32>> = z.data.chunks(per).map(|c| c.to_vec()).collect();
    let full = stitch_logits(&grid, &planar, NUM_CLASSES)?;
    Ok((grid, full))
}

pub fn predict_mask(model: &SegModel, image: &Rgb32FImage) -> Result<Mask, SegError> {
    let (grid, z) = predict_logits(model, image)?;
    let labels = argmax_planar(&z, NUM_CLASSES, (grid.width * grid.height) as usize);
    Ok(Mask::from_vec(grid.width, grid.height, labels)?)
}

/// Per-image IoU reports on labeled samples.
pub fn evaluate(model: &SegModel, samples: &[LabeledSample]) -> Result<Vec<ClassIoUReport>, SegError> {
    samples
        .iter()
        .map(|s| {
            let pred = predict_mask(model, &s.image)?;
            let r = miou(&pred, &s.mask).map_err(|e| SegError::Shape(e.to_string()))?;
            Ok(r.with_id(s.id.clone()))
        })
        .collect()
}

/// Dataset-level summary: per-class IoU averaged over the images where it is
/// defined, and the mean of per-image mIoU.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub n: usize,
    pub per_class: [Option<f64>; NUM_CLASSES],
    pub miou: f64,
}

impl EvalSummary {
    pub fn from_reports(reports: &[ClassIoUReport]) -> EvalSummary {
        let per_class = std::array::from_fn(|k| {
            let v: Vec<f64> = reports.iter().filter_map(|r| r.per_class[k].value()).collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        });
        let miou = if reports.is_empty() {
            0.0
        } else {
            reports.iter().map(|r| r.miou).sum::<f64>() / reports.len() as f64
        };
        EvalSummary {
            n: reports.len(),
            per_class,
            miou,
        }
    }
}
