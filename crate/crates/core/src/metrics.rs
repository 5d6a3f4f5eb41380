//! IoU, mIoU, Dice and per-image diagnostics.
//!
//! Counting is exact integer arithmetic; division happens last. A class missing from
//! both masks is flagged and left out of the means. A class predicted but absent
//! from the truth scores 0.

use serde::{Deserialize, Serialize};

use crate::mask::Mask;
use crate::stats;
use crate::taxonomy::{Class, NUM_CLASSES};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricsError {
    #[error("prediction {pred:?} and truth {truth:?} differ in shape")]
    ShapeMismatch { pred: (u32, u32), truth: (u32, u32) },
    #[error("no reports given")]
    EmptyInput,
}

/// Pixel counts of one class in prediction, truth and their intersection.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub pred: u64,
    pub truth: u64,
    pub inter: u64,
}

impl ClassCounts {
    pub fn union(&self) -> u64 {
        self.pred + self.truth - self.inter
    }

    pub fn iou(&self) -> ClassIoU {
        match self.union() {
            0 => ClassIoU::AbsentInBoth,
            u => ClassIoU::Value(self.inter as f64 / u as f64),
        }
    }

    pub fn dice(&self) -> Option<f64> {
        match self.pred + self.truth {
            0 => None,
            s => Some(2.0 * self.inter as f64 / s as f64),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassIoU {
    Value(f64),
    AbsentInBoth,
}

impl ClassIoU {
    pub fn value(self) -> Option<f64> {
        match self {
            ClassIoU::Value(v) => Some(v),
            ClassIoU::AbsentInBoth => None,
        }
    }
}

pub fn class_counts(pred: &Mask, truth: &Mask) -> Result<[ClassCounts; NUM_CLASSES], MetricsError> {
    if pred.dimensions() != truth.dimensions() {
        return Err(MetricsError::ShapeMismatch {
            pred: pred.dimensions(),
            truth: truth.dimensions(),
        });
    }
    let mut c = [ClassCounts::default(); NUM_CLASSES];
    for (&p, &t) in pred.labels().iter().zip(truth.labels()) {
        c[p as usize].pred += 1;
        c[t as usize].truth += 1;
        if p == t {
            c[p as usize].inter += 1;
        }
    }
    Ok(c)
}

pub fn iou(pred: &Mask, truth: &Mask, class: Class) -> Result<ClassIoU, MetricsError> {
    Ok(class_counts(pred, truth)?[class.index()].iou())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassIoUReport {
    pub id: Option<String>,
    pub per_class: [ClassIoU; NUM_CLASSES],
    pub miou: f64,
    /// Ground-truth pixels per class.
    pub n_pixels: [u64; NUM_CLASSES],
    /// Classes present in the ground truth.
    pub n_classes: usize,
}

impl ClassIoUReport {
    pub fn from_counts(counts: &[ClassCounts; NUM_CLASSES]) -> Self {
        let per_class = counts.map(|c| c.iou());
        let defined: Vec<f64> = per_class.iter().filter_map(|c| c.value()).collect();
        ClassIoUReport {
            id: None,
            per_class,
            miou: if defined.is_empty() { 1.0 } else { stats::mean(&defined) },
            n_pixels: counts.map(|c| c.truth),
            n_classes: counts.iter().filter(|c| c.truth > 0).count(),
        }
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = Some(id.into());
        self
    }
}

pub fn miou(pred: &Mask, truth: &Mask) -> Result<ClassIoUReport, MetricsError> {
    Ok(ClassIoUReport::from_counts(&class_counts(pred, truth)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiceReport {
    /// `None` where the class is absent from both masks.
    pub per_class: [Option<f64>; NUM_CLASSES],
    pub mean: f64,
}

pub fn dice_coefficient(pred: &Mask, truth: &Mask) -> Result<DiceReport, MetricsError> {
    let per_class = class_counts(pred, truth)?.map(|c| c.dice());
    let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
    Ok(DiceReport {
        per_class,
        mean: if defined.is_empty() { 1.0 } else { stats::mean(&defined) },
    })
}

/// One image's position on a per-class n_pixels plot. Classes absent from the
/// truth sit at `n_pixels = 1`; `iou` is `None` when absent from both masks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagPoint {
    pub id: Option<String>,
    pub n_pixels: u64,
    pub iou: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketStats {
    pub n_classes: usize,
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Indexed by class id.
    pub per_class: Vec<Vec<DiagPoint>>,
    /// mIoU grouped by number of classes in the truth, ascending.
    pub buckets: Vec<BucketStats>,
    pub mean_miou: f64,
}

pub fn diagnostics(reports: &[ClassIoUReport]) -> Result<Diagnostics, MetricsError> {
    if reports.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut per_class = vec![Vec::new(); NUM_CLASSES];
    for r in reports {
        for (k, points) in per_class.iter_mut().enumerate() {
            points.push(DiagPoint {
                id: r.id.clone(),
                n_pixels: r.n_pixels[k].max(1),
                iou: r.per_class[k].value(),
            });
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<f64>> = Default::default();
    for r in reports {
        groups.entry(r.n_classes).or_default().push(r.miou);
    }
    let buckets = groups
        .into_iter()
        .map(|(n_classes, v)| BucketStats {
            n_classes,
            n: v.len(),
            mean: stats::mean(&v),
            std: stats::std_population(&v),
            min: v.iter().copied().fold(f64::INFINITY, f64::min),
            max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
        .collect();
    let all: Vec<f64> = reports.iter().map(|r| r.miou).collect();
    Ok(Diagnostics {
        per_class,
        buckets,
        mean_miou: stats::mean(&all),
    })
}

/// CSV with one row per image: id, mIoU, n_classes, per-class IoU (blank when absent
/// from both) and per-class truth pixel counts.
pub fn reports_to_csv(reports: &[ClassIoUReport]) -> String {
    let mut s = String::from("id,miou,n_classes");
    for c in Class::ALL {
        s.push_str(&format!(",iou_{}", c.name()));
    }
    for c in Class::ALL {
        s.push_str(&format!(",n_{}", c.name()));
    }
    s.push('\n');
    for r in reports {
        s.push_str(&format!("{},{:.6},{}", r.id.as_deref().unwrap_or(""), r.miou, r.n_classes));
        for c in &r.per_class {
            match c.value() {
                Some(v) => s.push_str(&format!(",{v:.6}")),
                None => s.push(','),
            }
        }
        for n in &r.n_pixels {
            s.push_str(&format!(",{n}"));
        }
        s.push('\n');
    }
    s
}
