//! Initial crack size from segmentation masks.
//!
//! The area-average estimate divides the erosion-notch plus fatigue-precrack pixel
//! count by the net thickness in pixels. Net thickness comes from the geometry and
//! scale when both are known, otherwise from the mask: the median, over lines across
//! the propagation axis that cut the precrack, of the number of notch, precrack,
//! ductile and brittle pixels on that line.
//!
//! Depths are measured from the outermost erosion-notch line. Without a scale all
//! results stay in pixels.

use serde::{Deserialize, Serialize};

use crate::mask::Mask;
use crate::stats;
use crate::taxonomy::{Class, NUM_CLASSES};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MeasureError {
    #[error("mask has no erosion-notch or fatigue-precrack pixels")]
    NoCrackPixels,
    #[error("net thickness resolves to zero pixels")]
    DegenerateWidth,
    #[error("no crack front at station {0}")]
    FrontNotFound(usize),
    #[error("no measurements")]
    EmptyInput,
    #[error("reference value {0} must be positive")]
    InvalidReference(f64),
    #[error("series lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
}

/// Direction in which the crack grows through the image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrackAxis {
    /// Crack depth runs along image rows (top to bottom or bottom to top).
    #[default]
    Rows,
    /// Crack depth runs along image columns.
    Cols,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct SpecimenGeometry {
    /// Specimen width W in mm.
    pub w: Option<f64>,
    /// Thickness B in mm.
    pub b: Option<f64>,
    /// Net thickness B_N in mm.
    pub b_n: Option<f64>,
    /// Starter notch length in mm.
    pub a_k: Option<f64>,
    #[serde(default)]
    pub orientation: CrackAxis,
    /// Manual crack-depth origin (row or column index) instead of the notch edge.
    #[serde(default)]
    pub origin: Option<u32>,
}

impl SpecimenGeometry {
    pub fn validate(&self) -> Result<(), MeasureError> {
        let pos = |v: Option<f64>| v.map_or(true, |v| v > 0.0 && v.is_finite());
        if !(pos(self.w) && pos(self.b) && pos(self.b_n) && pos(self.a_k)) {
            return Err(MeasureError::InvalidGeometry("dimensions must be positive".into()));
        }
        if let (Some(b), Some(bn)) = (self.b, self.b_n) {
            if bn > b {
                return Err(MeasureError::InvalidGeometry(format!("B_N {bn} exceeds B {b}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementResult {
    pub a0_px: f64,
    pub a0_mm: Option<f64>,
    pub a0_5pa_px: Option<f64>,
    pub a0_5pa_mm: Option<f64>,
    pub b_n_px: f64,
    /// mm per pixel.
    pub scale: Option<f64>,
    pub counts: [u64; NUM_CLASSES],
}

impl MeasurementResult {
    pub fn unit(&self) -> &'static str {
        if self.scale.is_some() {
            "mm"
        } else {
            "px"
        }
    }

    /// Area-average a₀ in mm when a scale is known, else in pixels.
    pub fn a0(&self) -> f64 {
        self.a0_mm.unwrap_or(self.a0_px)
    }
}

const FRACTURE_IDS: [u8; 4] = [2, 3, 4, 5];

/// Accessor that reads the mask in (depth, across) coordinates.
struct View<'a> {
    mask: &'a Mask,
    axis: CrackAxis,
}

impl View<'_> {
    fn depth_len(&self) -> u32 {
        match self.axis {
            CrackAxis::Rows => self.mask.height(),
            CrackAxis::Cols => self.mask.width(),
        }
    }

    fn across_len(&self) -> u32 {
        match self.axis {
            CrackAxis::Rows => self.mask.width(),
            CrackAxis::Cols => self.mask.height(),
        }
    }

    fn at(&self, depth: u32, across: u32) -> u8 {
        match self.axis {
            CrackAxis::Rows => self.mask.get(across, depth),
            CrackAxis::Cols => self.mask.get(depth, across),
        }
    }
}

/// Net thickness in pixels measured on the mask.
pub fn net_thickness_px(mask: &Mask, axis: CrackAxis) -> Result<f64, MeasureError> {
    let v = View { mask, axis };
    let mut widths = Vec::new();
    for d in 0..v.depth_len() {
        let mut has_pre = false;
        let mut n = 0u64;
        for a in 0..v.across_len() {
            let l = v.at(d, a);
            has_pre |= l == Class::FatiguePrecrack.id();
            n += FRACTURE_IDS.contains(&l) as u64;
        }
        if has_pre {
            widths.push(n as f64);
        }
    }
    if widths.is_empty() {
        return Err(MeasureError::DegenerateWidth);
    }
    widths.sort_by(f64::total_cmp);
    let w = stats::quantile(&widths, 0.5);
    if w <= 0.0 {
        return Err(MeasureError::DegenerateWidth);
    }
    Ok(w)
}

fn resolve_b_n_px(mask: &Mask, geom: &SpecimenGeometry, scale: Option<f64>) -> Result<f64, MeasureError> {
    match (geom.b_n, scale) {
        (Some(bn), Some(s)) => {
            let px = bn / s;
            if px > 0.0 && px.is_finite() {
                Ok(px)
            } else {
                Err(MeasureError::DegenerateWidth)
            }
        }
        _ => net_thickness_px(mask, geom.orientation),
    }
}

fn check_scale(scale: Option<f64>) -> Result<(), MeasureError> {
    match scale {
        Some(s) if !(s > 0.0 && s.is_finite()) => Err(MeasureError::InvalidGeometry(format!("scale {s}"))),
        _ => Ok(()),
    }
}

/// Area-average a₀, with the 5-point comparator attached when a front is found.
pub fn area_average_a0(mask: &Mask, geom: &SpecimenGeometry, scale: Option<f64>) -> Result<MeasurementResult, MeasureError> {
    geom.validate()?;
    check_scale(scale)?;
    let counts = mask.histogram();
    let crack = counts[Class::ErosionNotch.index()] + counts[Class::FatiguePrecrack.index()];
    if crack == 0 {
        return Err(MeasureError::NoCrackPixels);
    }
    let b_n_px = resolve_b_n_px(mask, geom, scale)?;
    let a0_px = crack as f64 / b_n_px;
    let five = five_point_px(mask, geom).ok();
    Ok(MeasurementResult {
        a0_px,
        a0_mm: scale.map(|s| a0_px * s),
        a0_5pa_px: five,
        a0_5pa_mm: five.zip(scale).map(|(f, s)| f * s),
        b_n_px,
        scale,
        counts,
    })
}

/// Crack depths at the five stations, in pixels.
pub fn five_point_depths(mask: &Mask, geom: &SpecimenGeometry) -> Result<[f64; 5], MeasureError> {
    let v = View {
        mask,
        axis: geom.orientation,
    };
    let (notch, pre) = (Class::ErosionNotch.id(), Class::FatiguePrecrack.id());
    // extent of the notch along the depth axis and of the fracture classes across it
    let (mut n_lo, mut n_hi) = (u32::MAX, 0u32);
    let (mut a_lo, mut a_hi) = (u32::MAX, 0u32);
    let (mut notch_sum, mut notch_n, mut pre_sum, mut pre_n) = (0f64, 0f64, 0f64, 0f64);
    for d in 0..v.depth_len() {
        for a in 0..v.across_len() {
            let l = v.at(d, a);
            if l == notch {
                n_lo = n_lo.min(d);
                n_hi = n_hi.max(d);
                notch_sum += d as f64;
                notch_n += 1.0;
            }
            if l == pre {
                pre_sum += d as f64;
                pre_n += 1.0;
            }
            if FRACTURE_IDS.contains(&l) {
                a_lo = a_lo.min(a);
                a_hi = a_hi.max(a);
            }
        }
    }
    if notch_n == 0.0 && pre_n == 0.0 {
        return Err(MeasureError::NoCrackPixels);
    }
    let forward = notch_n == 0.0 || pre_n == 0.0 || notch_sum / notch_n <= pre_sum / pre_n;
    let origin = match (geom.origin, notch_n > 0.0, forward) {
        (Some(o), _, true) => o as f64,
        (Some(o), _, false) => o as f64 + 1.0,
        (None, true, true) => n_lo as f64,
        (None, true, false) => n_hi as f64 + 1.0,
        (None, false, true) => 0.0,
        (None, false, false) => v.depth_len() as f64,
    };
    let span = (a_hi + 1 - a_lo) as f64;
    let mut depths = [0f64; 5];
    for (k, depth) in depths.iter_mut().enumerate() {
        let a = a_lo + ((k + 1) as f64 * span / 6.0).floor() as u32;
        let a = a.min(a_hi);
        let hits = (0..v.depth_len()).filter(|&d| {
            let l = v.at(d, a);
            l == notch || l == pre
        });
        let tip = if forward {
            hits.max().map(|d| d as f64 + 1.0 - origin)
        } else {
            hits.min().map(|d| origin - d as f64)
        };
        *depth = tip.ok_or(MeasureError::FrontNotFound(k))?;
    }
    Ok(depths)
}

fn five_point_px(mask: &Mask, geom: &SpecimenGeometry) -> Result<f64, MeasureError> {
    Ok(stats::mean(&five_point_depths(mask, geom)?))
}

/// Mean of the five station depths, in mm when a scale is given.
pub fn five_point_a0(mask: &Mask, geom: &SpecimenGeometry, scale: Option<f64>) -> Result<f64, MeasureError> {
    check_scale(scale)?;
    let px = five_point_px(mask, geom)?;
    Ok(scale.map_or(px, |s| px * s))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementPair {
    pub id: String,
    pub reference: f64,
    pub measured: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementStats {
    pub n: usize,
    /// Mean signed deviation `measured - reference`.
    pub mean_abs: f64,
    /// Mean signed relative deviation in %.
    pub mean_rel: f64,
    /// Mean of |relative deviation| in %.
    pub mean_abs_rel: f64,
    /// Sample standard deviation of the signed deviations.
    pub sigma_abs: f64,
    pub sigma_rel: f64,
    /// Ids whose relative deviation leaves the band.
    pub outliers: Vec<String>,
    pub band_pct: f64,
    pub deviations: Vec<f64>,
    pub pairs: Vec<MeasurementPair>,
}

impl MeasurementStats {
    /// Recomputes every aggregate without the listed ids.
    pub fn excluding(&self, ids: &[&str]) -> Result<MeasurementStats, MeasureError> {
        let kept: Vec<MeasurementPair> = self
            .pairs
            .iter()
            .filter(|p| !ids.contains(&p.id.as_str()))
            .cloned()
            .collect();
        measurement_stats_with_band(&kept, self.band_pct)
    }
}

pub const DEFAULT_BAND_PCT: f64 = 1.0;

pub fn measurement_stats(pairs: &[MeasurementPair]) -> Result<MeasurementStats, MeasureError> {
    measurement_stats_with_band(pairs, DEFAULT_BAND_PCT)
}

pub fn measurement_stats_with_band(pairs: &[MeasurementPair], band_pct: f64) -> Result<MeasurementStats, MeasureError> {
    if pairs.is_empty() {
        return Err(MeasureError::EmptyInput);
    }
    if let Some(p) = pairs.iter().find(|p| !(p.reference > 0.0)) {
        return Err(MeasureError::InvalidReference(p.reference));
    }
    let dev: Vec<f64> = pairs.iter().map(|p| p.measured - p.reference).collect();
    let rel: Vec<f64> = pairs.iter().zip(&dev).map(|(p, d)| 100.0 * d / p.reference).collect();
    let abs_rel: Vec<f64> = rel.iter().map(|r| r.abs()).collect();
    Ok(MeasurementStats {
        n: pairs.len(),
        mean_abs: stats::mean(&dev),
        mean_rel: stats::mean(&rel),
        mean_abs_rel: stats::mean(&abs_rel),
        sigma_abs: stats::std_sample(&dev),
        sigma_rel: stats::std_sample(&rel),
        outliers: pairs
            .iter()
            .zip(&abs_rel)
            .filter(|(_, r)| **r > band_pct + 1e-9)
            .map(|(p, _)| p.id.clone())
            .collect(),
        band_pct,
        deviations: dev,
        pairs: pairs.to_vec(),
    })
}

/// Paired comparison of two measurement series of the same specimens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodComparison {
    pub n: usize,
    /// Mean of `a - b`.
    pub mu_d: f64,
    pub sigma_d: f64,
}

pub fn compare_methods(a: &[f64], b: &[f64]) -> Result<MethodComparison, MeasureError> {
    if a.len() != b.len() {
        return Err(MeasureError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(MeasureError::EmptyInput);
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    Ok(MethodComparison {
        n: d.len(),
        mu_d: stats::mean(&d),
        sigma_d: stats::std_sample(&d),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bands(w: u32, h: u32, notch: u32, pre: u32) -> Mask {
        let mut m = Mask::new(w, h);
        for y in 0..h {
            for x in 0..w {
                let c = if y < notch {
                    Class::ErosionNotch
                } else if y < notch + pre {
                    Class::FatiguePrecrack
                } else {
                    Class::DuctileFracture
                };
                m.set(x, y, c);
            }
        }
        m
    }

    #[test]
    fn rectangle_bands() {
        let m = bands(100, 120, 50, 30);
        let g = SpecimenGeometry::default();
        let r = area_average_a0(&m, &g, Some(0.02)).unwrap();
        assert_eq!(r.b_n_px, 100.0);
        assert_eq!(r.a0_px, 80.0);
        assert!((r.a0_mm.unwrap() - 1.6).abs() < 1e-12);
        assert_eq!(r.a0_5pa_px, Some(80.0));
        assert_eq!(r.unit(), "mm");
        let notch_only = bands(100, 120, 50, 0);
        // no precrack line: width falls back to geometry
        let g2 = SpecimenGeometry {
            b_n: Some(2.0),
            ..Default::default()
        };
        let r = area_average_a0(&notch_only, &g2, Some(0.02)).unwrap();
        assert!((r.a0_px - 50.0).abs() < 1e-9);
        assert_eq!(
            area_average_a0(&Mask::new(10, 10), &g, None),
            Err(MeasureError::NoCrackPixels)
        );
    }

    #[test]
    fn columns_and_reversed_direction() {
        let m = bands(40, 60, 10, 15);
        // transpose to put depth on columns
        let mut t = Mask::new(60, 40);
        for y in 0..60 {
            for x in 0..40 {
                t.set(y, x, m.class_at(x, y));
            }
        }
        let g = SpecimenGeometry {
            orientation: CrackAxis::Cols,
            ..Default::default()
        };
        assert_eq!(area_average_a0(&t, &g, None).unwrap().a0_px, 25.0);
        assert_eq!(five_point_a0(&t, &g, None).unwrap(), 25.0);
        // flip vertically: crack grows upward
        let mut f = Mask::new(40, 60);
        for y in 0..60 {
            for x in 0..40 {
                f.set(x, 59 - y, m.class_at(x, y));
            }
        }
        assert_eq!(five_point_a0(&f, &SpecimenGeometry::default(), None).unwrap(), 25.0);
    }

    #[test]
    fn stats_single_pair() {
        let s = measurement_stats(&[MeasurementPair {
            id: "a".into(),
            reference: 20.0,
            measured: 19.8,
        }])
        .unwrap();
        assert!((s.mean_abs + 0.2).abs() < 1e-12);
        assert!((s.mean_rel + 1.0).abs() < 1e-9);
        assert!(s.outliers.is_empty());
        assert_eq!(s.sigma_abs, 0.0);
    }

    #[test]
    fn exclusion_recomputes() {
        let pairs: Vec<MeasurementPair> = [(10.0, 10.05), (12.0, 11.9), (8.0, 8.4)]
            .iter()
            .enumerate()
            .map(|(i, &(r, m))| MeasurementPair {
                id: format!("s{i}"),
                reference: r,
                measured: m,
            })
            .collect();
        let s = measurement_stats(&pairs).unwrap();
        assert_eq!(s.outliers, vec!["s2".to_string()]);
        let e = s.excluding(&["s2"]).unwrap();
        assert_eq!(e, measurement_stats(&pairs[..2]).unwrap());
        let ss: f64 = s.deviations.iter().map(|d| (d - s.mean_abs).powi(2)).sum();
        assert!((s.sigma_abs.powi(2) * 2.0 - ss).abs() < 1e-9);
        let c = compare_methods(&[1.0, 2.0], &[0.5, 2.5]).unwrap();
        assert_eq!(c.mu_d, 0.0);
        assert!(compare_methods(&[1.0], &[]).is_err());
    }

    #[test]
    fn geometry_validation() {
        let g = SpecimenGeometry {
            b: Some(10.0),
            b_n: Some(12.0),
            ..Default::default()
        };
        assert!(g.validate().is_err());
    }
}
