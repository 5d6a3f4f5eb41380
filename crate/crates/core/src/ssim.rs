//! Structural similarity between fracture-surface photographs.
//!
//! Images are reduced to luminance (or kept per channel), resized bilinearly to a
//! common working size, and compared with a uniform square window. The score is the
//! mean over every fully-contained window position of `l^α · c^β · s^γ`, with local
//! moments taken as plain (population) window averages.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::imageops::{luminance, resize_bilinear_interleaved};
use crate::stats::{mean, std_population, BoxSummary};

#[derive(Debug, thiserror::Error)]
pub enum SsimError {
    #[error("image has zero area")]
    EmptyImage,
    #[error("invalid SSIM configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("images differ in size ({0:?} vs {1:?}) and no working size is set")]
    SizeMismatch((u32, u32), (u32, u32)),
    #[error("window {window} does not fit a {width}x{height} image")]
    WindowTooLarge { window: usize, width: usize, height: usize },
    #[error("SSIM is not finite; check the stabilizer constants")]
    NonFiniteResult,
    #[error("pair ({a}, {b}): {source}")]
    Pair {
        a: String,
        b: String,
        #[source]
        source: Box<SsimError>,
    },
    #[error("need at least two images, got {0}")]
    TooFewImages(usize),
    #[error("selection contains no entries")]
    EmptySelection,
    #[error("no score for image {0:?}")]
    MissingScore(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SsimConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Odd side length of the uniform window.
    pub window: usize,
    /// Luminance stabilizer, `(0.01 · 255)²` by default.
    pub c1: f64,
    /// Contrast stabilizer, `(0.03 · 255)²` by default. The structure term uses `c2 / 2`.
    pub c2: f64,
    /// (width, height) every image is resized to; `None` requires equal sizes.
    pub working_size: Option<(u32, u32)>,
    pub grayscale: bool,
}

impl Default for SsimConfig {
    fn default() -> Self {
        SsimConfig {
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
            window: 11,
            c1: (0.01f64 * 255.0).powi(2),
            c2: (0.03f64 * 255.0).powi(2),
            working_size: Some((256, 256)),
            grayscale: true,
        }
    }
}

impl SsimConfig {
    pub fn validate(&self) -> Result<(), SsimError> {
        if ![self.alpha, self.beta, self.gamma].iter().all(|v| v.is_finite()) {
            return Err(SsimError::InvalidConfig("exponents must be finite"));
        }
        if self.window < 3 || self.window % 2 == 0 {
            return Err(SsimError::InvalidConfig("window must be odd and >= 3"));
        }
        if !(self.c1 > 0.0 && self.c2 > 0.0 && self.c1.is_finite() && self.c2.is_finite()) {
            return Err(SsimError::InvalidConfig("stabilizers must be positive"));
        }
        if let Some((w, h)) = self.working_size {
            if w == 0 || h == 0 {
                return Err(SsimError::InvalidConfig("working size must be nonzero"));
            }
        }
        Ok(())
    }
}

/// The three comparison terms for one window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimTerms {
    pub luminance: f64,
    pub contrast: f64,
    pub structure: f64,
}

impl SsimTerms {
    /// Terms from window means, variances and covariance.
    pub fn from_moments(mx: f64, my: f64, vx: f64, vy: f64, cov: f64, c1: f64, c2: f64) -> Self {
        let (sx, sy) = (vx.max(0.0).sqrt(), vy.max(0.0).sqrt());
        let c3 = c2 / 2.0;
        SsimTerms {
            luminance: (2.0 * mx * my + c1) / (mx * mx + my * my + c1),
            contrast: (2.0 * sx * sy + c2) / (vx.max(0.0) + vy.max(0.0) + c2),
            structure: (cov + c3) / (sx * sy + c3),
        }
    }

    pub fn combine(&self, alpha: f64, beta: f64, gamma: f64) -> f64 {
        signed_pow(self.luminance, alpha) * signed_pow(self.contrast, beta) * signed_pow(self.structure, gamma)
    }
}

// The structure term may be negative; keep its sign under fractional exponents.
#[inline]
fn signed_pow(v: f64, e: f64) -> f64 {
    if e == 1.0 {
        v
    } else {
        v.signum() * v.abs().powf(e)
    }
}

/// An image reduced to the planes SSIM compares, with summed-area tables.
#[derive(Debug, Clone)]
pub struct PreparedImage {
    width: usize,
    height: usize,
    planes: Vec<Vec<f64>>,
    sums: Vec<Vec<f64>>,
    sq_sums: Vec<Vec<f64>>,
}

fn integral(plane: &[f64], w: usize, h: usize, f: impl Fn(f64) -> f64) -> Vec<f64> {
    let mut out = vec![0.0; (w + 1) * (h + 1)];
    for y in 0..h {
        let mut row = 0.0;
        for x in 0..w {
            row += f(plane[y * w + x]);
            out[(y + 1) * (w + 1) + x + 1] = out[y * (w + 1) + x + 1] + row;
        }
    }
    out
}

#[inline]
fn box_sum(table: &[f64], w: usize, x: usize, y: usize, k: usize) -> f64 {
    let s = w + 1;
    table[(y + k) * s + x + k] - table[y * s + x + k] - table[(y + k) * s + x] + table[y * s + x]
}

pub fn prepare(img: &RgbImage, cfg: &SsimConfig) -> Result<PreparedImage, SsimError> {
    let (w, h) = img.dimensions();
    if w == 0 || h == 0 {
        return Err(SsimError::EmptyImage);
    }
    let (tw, th) = cfg.working_size.unwrap_or((w, h));
    let raw: Vec<Vec<f32>> = if cfg.grayscale {
        vec![luminance(img)]
    } else {
        (0..3)
            .map(|c| img.pixels().map(|p| p[c] as f32).collect())
            .collect()
    };
    let planes: Vec<Vec<f64>> = raw
        .iter()
        .map(|p| {
            resize_bilinear_interleaved(p, 1, w as usize, h as usize, tw as usize, th as usize)
                .into_iter()
                .map(f64::from)
                .collect()
        })
        .collect();
    let (tw, th) = (tw as usize, th as usize);
    if cfg.window > tw || cfg.window > th {
        return Err(SsimError::WindowTooLarge {
            window: cfg.window,
            width: tw,
            height: th,
        });
    }
    let sums = planes.iter().map(|p| integral(p, tw, th, |v| v)).collect();
    let sq_sums = planes.iter().map(|p| integral(p, tw, th, |v| v * v)).collect();
    Ok(PreparedImage {
        width: tw,
        height: th,
        planes,
        sums,
        sq_sums,
    })
}

/// SSIM between two prepared images.
pub fn ssim_prepared(x: &PreparedImage, y: &PreparedImage, cfg: &SsimConfig) -> Result<f64, SsimError> {
    if (x.width, x.height) != (y.width, y.height) || x.planes.len() != y.planes.len() {
        return Err(SsimError::SizeMismatch(
            (x.width as u32, x.height as u32),
            (y.width as u32, y.height as u32),
        ));
    }
    let (w, h, k) = (x.width, x.height, cfg.window);
    let n = (k * k) as f64;
    let mut total = 0.0;
    for c in 0..x.planes.len() {
        let prod: Vec<f64> = x.planes[c].iter().zip(&y.planes[c]).map(|(a, b)| a * b).collect();
        let cross = integral(&prod, w, h, |v| v);
        let mut acc = 0.0;
        for wy in 0..=h - k {
            for wx in 0..=w - k {
                let mx = box_sum(&x.sums[c], w, wx, wy, k) / n;
                let my = box_sum(&y.sums[c], w, wx, wy, k) / n;
                let vx = box_sum(&x.sq_sums[c], w, wx, wy, k) / n - mx * mx;
                let vy = box_sum(&y.sq_sums[c], w, wx, wy, k) / n - my * my;
                let cov = box_sum(&cross, w, wx, wy, k) / n - mx * my;
                acc += SsimTerms::from_moments(mx, my, vx, vy, cov, cfg.c1, cfg.c2).combine(
                    cfg.alpha, cfg.beta, cfg.gamma,
                );
            }
        }
        total += acc / ((w - k + 1) * (h - k + 1)) as f64;
    }
    let v = total / x.planes.len() as f64;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(SsimError::NonFiniteResult)
    }
}

pub fn ssim(x: &RgbImage, y: &RgbImage, cfg: &SsimConfig) -> Result<f64, SsimError> {
    cfg.validate()?;
    if cfg.working_size.is_none() && x.dimensions() != y.dimensions() {
        return Err(SsimError::SizeMismatch(x.dimensions(), y.dimensions()));
    }
    ssim_prepared(&prepare(x, cfg)?, &prepare(y, cfg)?, cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsimMatrix {
    pub ids: Vec<String>,
    /// Row-major N×N values.
    pub values: Vec<f64>,
}

impl SsimMatrix {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.ids.len() + j]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("id");
        for id in &self.ids {
            let _ = write!(s, ",{id}");
        }
        s.push('\n');
        for (i, id) in self.ids.iter().enumerate() {
            s.push_str(id);
            for j in 0..self.len() {
                let _ = write!(s, ",{:.6}", self.get(i, j));
            }
            s.push('\n');
        }
        s
    }

    /// Mean similarity of each image to all others.
    pub fn row_means(&self) -> Vec<f64> {
        let n = self.len();
        (0..n)
            .map(|i| (0..n).filter(|&j| j != i).map(|j| self.get(i, j)).sum::<f64>() / (n - 1) as f64)
            .collect()
    }
}

/// All pairwise similarities. Each unordered pair is computed once; the diagonal is 1.
pub fn ssim_matrix(images: &[(String, RgbImage)], cfg: &SsimConfig) -> Result<SsimMatrix, SsimError> {
    cfg.validate()?;
    let n = images.len();
    if n < 2 {
        return Err(SsimError::TooFewImages(n));
    }
    if cfg.working_size.is_none() {
        let d0 = images[0].1.dimensions();
        if let Some((_, img)) = images.iter().find(|(_, img)| img.dimensions() != d0) {
            return Err(SsimError::SizeMismatch(d0, img.dimensions()));
        }
    }
    let prepared: Vec<PreparedImage> = images
        .par_iter()
        .map(|(_, img)| prepare(img, cfg))
        .collect::<Result<_, _>>()?;
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let results: Vec<Result<f64, SsimError>> = pairs
        .par_iter()
        .map(|&(i, j)| {
            ssim_prepared(&prepared[i], &prepared[j], cfg).map_err(|e| SsimError::Pair {
                a: images[i].0.clone(),
                b: images[j].0.clone(),
                source: Box::new(e),
            })
        })
        .collect();
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        values[i * n + i] = 1.0;
    }
    for (&(i, j), r) in pairs.iter().zip(results) {
        let v = r?;
        values[i * n + j] = v;
        values[j * n + i] = v;
    }
    Ok(SsimMatrix {
        ids: images.iter().map(|(id, _)| id.clone()).collect(),
        values,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Selection {
    /// Row 0 against every other image.
    VsFirst,
    /// Strict upper triangle.
    AllPairs,
    /// All pairs within a named id subset, e.g. train+val or test.
    Subset { name: String, ids: Vec<String> },
}

impl Selection {
    pub fn label(&self) -> String {
        match self {
            Selection::VsFirst => "vs_first".into(),
            Selection::AllPairs => "all_pairs".into(),
            Selection::Subset { name, .. } => name.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsimStats {
    pub mu: f64,
    /// Population standard deviation of the selected entries.
    pub sigma: f64,
    pub selection: String,
    pub n: usize,
}

pub fn selected_values(matrix: &SsimMatrix, selection: &Selection) -> Vec<f64> {
    let n = matrix.len();
    match selection {
        Selection::VsFirst => (1..n).map(|j| matrix.get(0, j)).collect(),
        Selection::AllPairs => (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .map(|(i, j)| matrix.get(i, j))
            .collect(),
        Selection::Subset { ids, .. } => {
            let idx: Vec<usize> = ids.iter().filter_map(|id| matrix.index_of(id)).collect();
            let mut out = Vec::new();
            for (a, &i) in idx.iter().enumerate() {
                for &j in &idx[a + 1..] {
                    out.push(matrix.get(i, j));
                }
            }
            out
        }
    }
}

pub fn dataset_stats(matrix: &SsimMatrix, selection: &Selection) -> Result<SsimStats, SsimError> {
    let vals = selected_values(matrix, selection);
    if vals.is_empty() {
        return Err(SsimError::EmptySelection);
    }
    Ok(SsimStats {
        mu: mean(&vals),
        sigma: std_population(&vals),
        selection: selection.label(),
        n: vals.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityPoint {
    pub id: String,
    /// Mean SSIM of the image against every other image in the matrix.
    pub ssim: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub dataset: String,
    pub points: Vec<QualityPoint>,
    pub ssim_box: BoxSummary,
    pub score_box: BoxSummary,
    /// Interquartile range of scores is smaller than that of SSIM.
    pub score_spread_below_ssim_spread: bool,
}

/// Pairs each image's mean SSIM with its segmentation score (e.g. mIoU).
pub fn ssim_quality_report(
    dataset: &str,
    matrix: &SsimMatrix,
    scores: &BTreeMap<String, f64>,
) -> Result<QualityReport, SsimError> {
    if matrix.len() < 2 {
        return Err(SsimError::TooFewImages(matrix.len()));
    }
    let means = matrix.row_means();
    let mut points = Vec::with_capacity(matrix.len());
    for (id, &s) in matrix.ids.iter().zip(&means) {
        let score = *scores.get(id).ok_or_else(|| SsimError::MissingScore(id.clone()))?;
        points.push(QualityPoint {
            id: id.clone(),
            ssim: s,
            score,
        });
    }
    let ssim_box = BoxSummary::from_values(&means).ok_or(SsimError::EmptySelection)?;
    let score_vals: Vec<f64> = points.iter().map(|p| p.score).collect();
    let score_box = BoxSummary::from_values(&score_vals).ok_or(SsimError::EmptySelection)?;
    Ok(QualityReport {
        dataset: dataset.to_string(),
        score_spread_below_ssim_spread: score_box.iqr() < ssim_box.iqr(),
        points,
        ssim_box,
        score_box,
    })
}
