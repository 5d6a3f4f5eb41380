//! Image records, dataset manifests and train/val/test splitting.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use image::RgbImage;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::rng::rng_from;
use crate::DataError;

/// Smallest accepted image side in pixels.
pub const MIN_IMAGE_SIDE: u32 = 64;

#[derive(Debug, Clone)]
pub struct ImageRecord {
    id: String,
    pixels: RgbImage,
    scale: Option<f64>,
    domain_tag: String,
    labeled: bool,
}

impl ImageRecord {
    pub fn new(
        id: impl Into<String>,
        pixels: RgbImage,
        scale: Option<f64>,
        domain_tag: impl Into<String>,
        labeled: bool,
    ) -> Result<Self, DataError> {
        let (w, h) = pixels.dimensions();
        if w < MIN_IMAGE_SIDE || h < MIN_IMAGE_SIDE {
            return Err(DataError::ImageTooSmall { width: w, height: h });
        }
        if let Some(s) = scale {
            if !(s.is_finite() && s > 0.0) {
                return Err(DataError::InvalidScale(s));
            }
        }
        Ok(ImageRecord {
            id: id.into(),
            pixels,
            scale,
            domain_tag: domain_tag.into(),
            labeled,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }
    pub fn pixels(&self) -> &RgbImage {
        &self.pixels
    }
    pub fn width(&self) -> u32 {
        self.pixels.width()
    }
    pub fn height(&self) -> u32 {
        self.pixels.height()
    }
    /// Millimetres per pixel.
    pub fn scale(&self) -> Option<f64> {
        self.scale
    }
    pub fn domain_tag(&self) -> &str {
        &self.domain_tag
    }
    pub fn labeled(&self) -> bool {
        self.labeled
    }
}

/// One manifest line. Paths are relative to the manifest file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordEntry {
    pub id: String,
    pub domain_tag: String,
    pub labeled: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Splits {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    /// Unlabeled ids; they only ever feed the unsupervised training pool.
    pub unlabeled: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub name: String,
    pub records: Vec<RecordEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub splits: Option<Splits>,
}

impl DatasetManifest {
    pub fn new(name: impl Into<String>, records: Vec<RecordEntry>) -> Result<Self, DataError> {
        let m = DatasetManifest {
            name: name.into(),
            records,
            splits: None,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn n(&self) -> usize {
        self.records.len()
    }

    pub fn n_labeled(&self) -> usize {
        self.records.iter().filter(|r| r.labeled).count()
    }

    pub fn n_unlabeled(&self) -> usize {
        self.n() - self.n_labeled()
    }

    pub fn get(&self, id: &str) -> Option<&RecordEntry> {
        self.records.iter().find(|r| r.id == id)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let mut ids = HashSet::new();
        for r in &self.records {
            if !ids.insert(r.id.as_str()) {
                return Err(DataError::DuplicateId(r.id.clone()));
            }
        }
        if let Some(s) = &self.splits {
            let mut seen = HashSet::new();
            for id in s.train.iter().chain(&s.val).chain(&s.test).chain(&s.unlabeled) {
                if !ids.contains(id.as_str()) {
                    return Err(DataError::UnknownId(id.clone()));
                }
                if !seen.insert(id.as_str()) {
                    return Err(DataError::OverlappingSplits(id.clone()));
                }
            }
            for id in s.val.iter().chain(&s.test) {
                if !self.get(id).map(|r| r.labeled).unwrap_or(false) {
                    return Err(DataError::UnlabeledInEvaluation(id.clone()));
                }
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path)?;
        let m: DatasetManifest = serde_json::from_str(&text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn with_splits(mut self, report: &SplitReport) -> Result<Self, DataError> {
        self.splits = Some(report.splits.clone());
        self.validate()?;
        Ok(self)
    }
}

/// Ratio of unlabeled to labeled images, kept as exact counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnlabeledRatio {
    pub unlabeled: usize,
    pub labeled: usize,
}

impl UnlabeledRatio {
    pub fn value(&self) -> f64 {
        self.unlabeled as f64 / self.labeled as f64
    }
}

impl fmt::Display for UnlabeledRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2}", self.value())
    }
}

pub fn compute_ratio(manifest: &DatasetManifest) -> Result<UnlabeledRatio, DataError> {
    let labeled = manifest.n_labeled();
    if labeled == 0 {
        return Err(DataError::DivisionByZero);
    }
    Ok(UnlabeledRatio {
        unlabeled: manifest.n_unlabeled(),
        labeled,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMethod {
    Randomized,
    Stratified,
}

impl std::str::FromStr for SplitMethod {
    type Err = DataError;
    fn from_str(s: &str) -> Result<Self, DataError> {
        match s {
            "randomized" | "random" => Ok(SplitMethod::Randomized),
            "stratified" => Ok(SplitMethod::Stratified),
            other => Err(DataError::UnknownSplitMethod(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub unlabeled: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub method: SplitMethod,
    pub seed: u64,
    pub ratio: Option<UnlabeledRatio>,
    pub splits: Splits,
    pub per_tag: BTreeMap<String, TagCounts>,
}

/// Allocates `n` items to (train, val) counts; the remainder goes to test.
fn allocate(n: usize, train: f64, val: f64, keep_both: bool) -> (usize, usize) {
    let mut n_train = ((train * n as f64).round() as usize).min(n);
    let mut n_val = ((val * n as f64).round() as usize).min(n - n_train);
    if keep_both && n >= 2 {
        if n_val == 0 {
            n_val = 1;
            if n_train + n_val > n {
                n_train -= 1;
            }
        }
        if n_train == 0 {
            n_train = 1;
            if n_train + n_val > n {
                n_val -= 1;
            }
        }
    }
    (n_train, n_val)
}

/// Splits the labeled records into train/val/test. Unlabeled records always go to the
/// unsupervised pool. Labeled ids are sorted ascending before the seeded shuffle so the
/// result depends only on the id set and the seed.
pub fn split_dataset(
    manifest: &DatasetManifest,
    method: SplitMethod,
    seed: u64,
    fractions: (f64, f64),
) -> Result<SplitReport, DataError> {
    let (f_train, f_val) = fractions;
    let ok = f_train.is_finite()
        && f_val.is_finite()
        && f_train > 0.0
        && f_val >= 0.0
        && f_train + f_val <= 1.0 + 1e-9
        && !(method == SplitMethod::Stratified && f_val == 0.0);
    if !ok {
        return Err(DataError::BadFractions(f_train, f_val));
    }
    let n_labeled = manifest.n_labeled();
    if n_labeled < 4 {
        return Err(DataError::InsufficientLabeled {
            stratum: None,
            count: n_labeled,
        });
    }

    let mut by_tag: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for r in manifest.records.iter().filter(|r| r.labeled) {
        by_tag.entry(r.domain_tag.as_str()).or_default().push(r.id.as_str());
    }

    let mut rng = rng_from(seed);
    let mut splits = Splits::default();
    match method {
        SplitMethod::Randomized => {
            let mut ids: Vec<&str> = by_tag.values().flatten().copied().collect();
            ids.sort_unstable();
            ids.shuffle(&mut rng);
            let (nt, nv) = allocate(ids.len(), f_train, f_val, false);
            splits.train = ids[..nt].iter().map(|s| s.to_string()).collect();
            splits.val = ids[nt..nt + nv].iter().map(|s| s.to_string()).collect();
            splits.test = ids[nt + nv..].iter().map(|s| s.to_string()).collect();
        }
        SplitMethod::Stratified => {
            for (tag, ids) in &by_tag {
                if ids.len() < 2 {
                    return Err(DataError::InsufficientLabeled {
                        stratum: Some(tag.to_string()),
                        count: ids.len(),
                    });
                }
            }
            for ids in by_tag.values_mut() {
                ids.sort_unstable();
                ids.shuffle(&mut rng);
                let (nt, nv) = allocate(ids.len(), f_train, f_val, true);
                splits.train.extend(ids[..nt].iter().map(|s| s.to_string()));
                splits.val.extend(ids[nt..nt + nv].iter().map(|s| s.to_string()));
                splits.test.extend(ids[nt + nv..].iter().map(|s| s.to_string()));
            }
        }
    }
    splits.unlabeled = manifest
        .records
        .iter()
        .filter(|r| !r.labeled)
        .map(|r| r.id.clone())
        .collect();

    let mut per_tag: BTreeMap<String, TagCounts> = BTreeMap::new();
    let tag_of = |id: &str| manifest.get(id).map(|r| r.domain_tag.clone()).unwrap_or_default();
    for id in &splits.train {
        per_tag.entry(tag_of(id)).or_default().train += 1;
    }
    for id in &splits.val {
        per_tag.entry(tag_of(id)).or_default().val += 1;
    }
    for id in &splits.test {
        per_tag.entry(tag_of(id)).or_default().test += 1;
    }
    for id in &splits.unlabeled {
        per_tag.entry(tag_of(id)).or_default().unlabeled += 1;
    }

    Ok(SplitReport {
        method,
        seed,
        ratio: compute_ratio(manifest).ok(),
        splits,
        per_tag,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn manifest(tags: &[(&str, usize)], unlabeled: usize) -> DatasetManifest {
        let mut records = Vec::new();
        let mut k = 0;
        for (tag, n) in tags {
            for _ in 0..*n {
                records.push(RecordEntry {
                    id: format!("img{k:04}"),
                    domain_tag: tag.to_string(),
                    labeled: true,
                    image: None,
                    mask: None,
                    meta: None,
                    scale: None,
                });
                k += 1;
            }
        }
        for _ in 0..unlabeled {
            records.push(RecordEntry {
                id: format!("img{k:04}"),
                domain_tag: "u".into(),
                labeled: false,
                image: None,
                mask: None,
                meta: None,
                scale: None,
            });
            k += 1;
        }
        DatasetManifest::new("t", records).unwrap()
    }

    #[test]
    fn ratio_examples() {
        let r = compute_ratio(&manifest(&[("a", 32)], 168)).unwrap();
        assert_eq!(r.value(), 5.25);
        assert_eq!(r.to_string(), "5.25");
        let r = compute_ratio(&manifest(&[("a", 46)], 268)).unwrap();
        assert_eq!(r.to_string(), "5.83");
        assert_eq!(compute_ratio(&manifest(&[("a", 3)], 0)).unwrap().value(), 0.0);
        assert!(matches!(compute_ratio(&manifest(&[], 5)), Err(DataError::DivisionByZero)));
    }

    #[test]
    fn thirty_two_labeled_split() {
        let m = manifest(&[("a", 32)], 168);
        let r = split_dataset(&m, SplitMethod::Randomized, 1, (0.75, 0.25)).unwrap();
        assert_eq!((r.splits.train.len(), r.splits.val.len(), r.splits.test.len()), (24, 8, 0));
        assert_eq!(r.splits.unlabeled.len(), 168);
    }

    #[test]
    fn single_stratum_matches_randomized_sizes() {
        let m = manifest(&[("a", 30)], 0);
        let a = split_dataset(&m, SplitMethod::Randomized, 3, (0.6, 0.2)).unwrap();
        let b = split_dataset(&m, SplitMethod::Stratified, 3, (0.6, 0.2)).unwrap();
        assert_eq!(a.splits.train.len(), b.splits.train.len());
        assert_eq!(a.splits.val.len(), b.splits.val.len());
        assert_eq!(a.splits.test.len(), b.splits.test.len());
    }

    #[test]
    fn four_equal_strata() {
        let m = manifest(&[("a", 24), ("b", 24), ("c", 24), ("d", 24)], 10);
        let r = split_dataset(&m, SplitMethod::Stratified, 9, (0.75, 0.25)).unwrap();
        for tag in ["a", "b", "c", "d"] {
            let c = r.per_tag[tag];
            assert_eq!((c.train, c.val, c.test), (18, 6, 0));
        }
        let m = m.with_splits(&r).unwrap();
        m.validate().unwrap();
    }

    #[test]
    fn split_errors() {
        let m = manifest(&[("a", 10), ("b", 1)], 0);
        assert!(matches!(
            split_dataset(&m, SplitMethod::Stratified, 0, (0.5, 0.5)),
            Err(DataError::InsufficientLabeled { stratum: Some(_), .. })
        ));
        assert!(matches!(
            split_dataset(&m, SplitMethod::Randomized, 0, (0.8, 0.5)),
            Err(DataError::BadFractions(..))
        ));
        let small = manifest(&[("a", 3)], 5);
        assert!(matches!(
            split_dataset(&small, SplitMethod::Randomized, 0, (0.5, 0.5)),
            Err(DataError::InsufficientLabeled { stratum: None, count: 3 })
        ));
    }

    #[test]
    fn manifest_rejects_unlabeled_in_val() {
        let mut m = manifest(&[("a", 4)], 1);
        m.splits = Some(Splits {
            train: vec!["img0000".into()],
            val: vec!["img0004".into()],
            test: vec![],
            unlabeled: vec![],
        });
        assert!(matches!(m.validate(), Err(DataError::UnlabeledInEvaluation(_))));
    }

    #[test]
    fn record_invariants() {
        assert!(ImageRecord::new("a", RgbImage::new(64, 64), Some(0.01), "t", true).is_ok());
        assert!(ImageRecord::new("a", RgbImage::new(63, 64), None, "t", true).is_err());
        assert!(ImageRecord::new("a", RgbImage::new(64, 64), Some(0.0), "t", true).is_err());
        assert!(ImageRecord::new("a", RgbImage::new(64, 64), Some(f64::NAN), "t", true).is_err());
    }

    proptest! {
        #[test]
        fn splits_partition_labeled_ids(
            sizes in proptest::collection::vec(2usize..12, 1..5),
            unl in 0usize..20,
            seed in any::<u64>(),
            stratified in any::<bool>(),
            f_train in 0.3f64..0.8,
        ) {
            let tags: Vec<(String, usize)> = sizes.iter().enumerate().map(|(i, &n)| (format!("t{i}"), n)).collect();
            let tag_refs: Vec<(&str, usize)> = tags.iter().map(|(t, n)| (t.as_str(), *n)).collect();
            let m = manifest(&tag_refs, unl);
            prop_assume!(m.n_labeled() >= 4);
            let method = if stratified { SplitMethod::Stratified } else { SplitMethod::Randomized };
            let f_val = (1.0 - f_train) / 2.0;
            let r = split_dataset(&m, method, seed, (f_train, f_val)).unwrap();
            let mut all: Vec<&String> = r.splits.train.iter().chain(&r.splits.val).chain(&r.splits.test).collect();
            all.sort();
            let mut expected: Vec<&String> = m.records.iter().filter(|r| r.labeled).map(|r| &r.id).collect();
            expected.sort();
            prop_assert_eq!(all, expected);
            prop_assert_eq!(r.splits.unlabeled.len(), unl);
            let again = split_dataset(&m, method, seed, (f_train, f_val)).unwrap();
            prop_assert_eq!(&again, &r);
            if stratified {
                for (tag, n) in &tag_refs {
                    let c = r.per_tag[*tag];
                    prop_assert!(c.train >= 1 && c.val >= 1);
                    prop_assert!(c.train < *n && c.val < *n);
                }
            }
        }
    }
}
