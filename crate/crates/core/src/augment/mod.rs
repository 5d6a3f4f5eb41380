//! Weak and strong augmentation pipelines.
//!
//! A [`StrategyConfig`] names an ordered weak pipeline (geometric transforms shared by
//! image and mask) and an ordered strong pipeline (photometric transforms applied to the
//! image only, on top of the weak view). The built-in strategies reproduce the
//! REF/HET0–HET8 grid.
//!
//! Gaussian noise is parameterized by a variance limit on the [0, 1] intensity scale:
//! the variance is drawn from U(0, limit) and noise is added per pixel and channel.

pub mod transforms;

use image::Rgb32FImage;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::mask::Mask;
use crate::rng::rng_from;
use transforms::{AffineParams, GridParams};

#[derive(Debug, thiserror::Error)]
pub enum AugmentError {
    #[error("mask {mask:?} does not match image {image:?}")]
    ShapeMismatch { image: (u32, u32), mask: (u32, u32) },
    #[error("strategy {strategy:?}: spatial transform {kind:?} in the strong pipeline")]
    SpatialSpecInStrong { strategy: String, kind: AugKind },
    #[error("unknown strategy {0:?}")]
    UnknownStrategy(String),
    #[error("invalid {kind:?} parameters: {reason}")]
    InvalidParams { kind: AugKind, reason: String },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugKind {
    Affine,
    Rot90Flip,
    GridDistortion,
    Sharpen,
    Blur,
    ChannelShuffle,
    GaussianNoise,
    BrightnessContrast,
}

impl AugKind {
    /// Spatial transforms move pixels and therefore also apply to the mask.
    pub fn is_spatial(self) -> bool {
        matches!(self, AugKind::Affine | AugKind::Rot90Flip | AugKind::GridDistortion)
    }
}

/// One transform with its parameter limits and application probability `p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AugmentationSpec {
    /// Shift (fraction of size), scale (relative) and rotation (degrees) limits.
    Affine {
        shift_limit: f64,
        scale_limit: f64,
        rotate_limit: f64,
        p: f64,
    },
    /// Random quarter turn plus random flip.
    Rot90Flip { p: f64 },
    GridDistortion {
        num_steps: u32,
        distort_limit: f64,
        p: f64,
    },
    /// Alpha and lightness sampling ranges.
    Sharpen {
        alpha: (f64, f64),
        lightness: (f64, f64),
        p: f64,
    },
    /// Largest odd box-kernel side; sizes are drawn from the odd values in 3..=limit.
    Blur { blur_limit: u32, p: f64 },
    ChannelShuffle { p: f64 },
    GaussianNoise { var_limit: f64, p: f64 },
    BrightnessContrast {
        brightness_limit: f64,
        contrast_limit: f64,
        p: f64,
    },
}

impl AugmentationSpec {
    pub fn kind(&self) -> AugKind {
        match self {
            AugmentationSpec::Affine { .. } => AugKind::Affine,
            AugmentationSpec::Rot90Flip { .. } => AugKind::Rot90Flip,
            AugmentationSpec::GridDistortion { .. } => AugKind::GridDistortion,
            AugmentationSpec::Sharpen { .. } => AugKind::Sharpen,
            AugmentationSpec::Blur { .. } => AugKind::Blur,
            AugmentationSpec::ChannelShuffle { .. } => AugKind::ChannelShuffle,
            AugmentationSpec::GaussianNoise { .. } => AugKind::GaussianNoise,
            AugmentationSpec::BrightnessContrast { .. } => AugKind::BrightnessContrast,
        }
    }

    pub fn p(&self) -> f64 {
        match *self {
            AugmentationSpec::Affine { p, .. }
            | AugmentationSpec::Rot90Flip { p }
            | AugmentationSpec::GridDistortion { p, .. }
            | AugmentationSpec::Sharpen { p, .. }
            | AugmentationSpec::Blur { p, .. }
            | AugmentationSpec::ChannelShuffle { p }
            | AugmentationSpec::GaussianNoise { p, .. }
            | AugmentationSpec::BrightnessContrast { p, .. } => p,
        }
    }

    pub fn with_p(mut self, new_p: f64) -> Self {
        match &mut self {
            AugmentationSpec::Affine { p, .. }
            | AugmentationSpec::Rot90Flip { p }
            | AugmentationSpec::GridDistortion { p, .. }
            | AugmentationSpec::Sharpen { p, .. }
            | AugmentationSpec::Blur { p, .. }
            | AugmentationSpec::ChannelShuffle { p }
            | AugmentationSpec::GaussianNoise { p, .. }
            | AugmentationSpec::BrightnessContrast { p, .. } => *p = new_p,
        }
        self
    }

    pub fn is_spatial(&self) -> bool {
        self.kind().is_spatial()
    }

    /// Default limits and probabilities for each transform kind.
    pub fn default_for(kind: AugKind) -> Self {
        match kind {
            AugKind::Affine => AugmentationSpec::Affine {
                shift_limit: 0.0625,
                scale_limit: 0.1,
                rotate_limit: 45.0,
                p: 0.25,
            },
            AugKind::Rot90Flip => AugmentationSpec::Rot90Flip { p: 1.0 },
            AugKind::GridDistortion => AugmentationSpec::GridDistortion {
                num_steps: 5,
                distort_limit: 0.3,
                p: 0.5,
            },
            AugKind::Sharpen => AugmentationSpec::Sharpen {
                alpha: (0.2, 0.5),
                lightness: (0.5, 1.0),
                p: 0.25,
            },
            AugKind::Blur => AugmentationSpec::Blur { blur_limit: 7, p: 0.2 },
            AugKind::ChannelShuffle => AugmentationSpec::ChannelShuffle { p: 1.0 },
            AugKind::GaussianNoise => AugmentationSpec::GaussianNoise { var_limit: 0.05, p: 0.1 },
            AugKind::BrightnessContrast => AugmentationSpec::BrightnessContrast {
                brightness_limit: 0.2,
                contrast_limit: 0.2,
                p: 1.0,
            },
        }
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        let kind = self.kind();
        let bad = |reason: &str| {
            Err(AugmentError::InvalidParams {
                kind,
                reason: reason.to_string(),
            })
        };
        let p = self.p();
        if !(0.0..=1.0).contains(&p) {
            return bad("p must lie in [0, 1]");
        }
        match *self {
            AugmentationSpec::Affine {
                shift_limit,
                scale_limit,
                rotate_limit,
                ..
            } => {
                if !(shift_limit >= 0.0 && (0.0..1.0).contains(&scale_limit) && rotate_limit >= 0.0) {
                    return bad("limits must be non-negative and scale_limit < 1");
                }
            }
            AugmentationSpec::GridDistortion {
                num_steps,
                distort_limit,
                ..
            } => {
                if num_steps == 0 || !(0.0..1.0).contains(&distort_limit) {
                    return bad("need num_steps >= 1 and distort_limit in [0, 1)");
                }
            }
            AugmentationSpec::Sharpen { alpha, lightness, .. } => {
                if !(0.0 <= alpha.0 && alpha.0 <= alpha.1 && alpha.1 <= 1.0 && 0.0 <= lightness.0 && lightness.0 <= lightness.1)
                {
                    return bad("ranges must be ordered, alpha within [0, 1]");
                }
            }
            AugmentationSpec::Blur { blur_limit, .. } => {
                if blur_limit < 3 || blur_limit % 2 == 0 {
                    return bad("blur_limit must be odd and >= 3");
                }
            }
            AugmentationSpec::GaussianNoise { var_limit, .. } => {
                if !(var_limit >= 0.0 && var_limit.is_finite()) {
                    return bad("var_limit must be non-negative");
                }
            }
            AugmentationSpec::BrightnessContrast {
                brightness_limit,
                contrast_limit,
                ..
            } => {
                if !(brightness_limit >= 0.0 && contrast_limit >= 0.0) {
                    return bad("limits must be non-negative");
                }
            }
            AugmentationSpec::Rot90Flip { .. } | AugmentationSpec::ChannelShuffle { .. } => {}
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategyConfig {
    pub name: String,
    pub weak: Vec<AugmentationSpec>,
    pub strong: Vec<AugmentationSpec>,
}

impl StrategyConfig {
    pub fn validate(&self) -> Result<(), AugmentError> {
        for s in self.weak.iter().chain(&self.strong) {
            s.validate()?;
        }
        if let Some(s) = self.strong.iter().find(|s| s.is_spatial()) {
            return Err(AugmentError::SpatialSpecInStrong {
                strategy: self.name.clone(),
                kind: s.kind(),
            });
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, AugmentError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, AugmentError> {
        let s: StrategyConfig = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }
}

pub const BUILTIN_STRATEGIES: [&str; 10] = [
    "REF", "HET0", "HET1", "HET2", "HET3", "HET4", "HET5", "HET6", "HET7", "HET8",
];

/// The named strategies. REF shares HET0's pipelines and is meant for fully
/// supervised runs.
pub fn builtin_strategy(name: &str) -> Result<StrategyConfig, AugmentError> {
    use AugKind::*;
    // weak: affine, grid (rot90_flip is always on); strong extras beyond brightness/contrast
    let (rich_weak, noise, shuffle, sharpen_blur) = match name {
        "REF" | "HET0" => (false, false, false, false),
        "HET1" => (true, false, false, false),
        "HET2" => (true, true, false, false),
        "HET3" => (true, true, true, false),
        "HET4" => (true, true, true, true),
        "HET5" => (true, false, true, true),
        "HET6" => (true, false, false, true),
        "HET7" => (true, true, false, true),
        "HET8" => (true, false, true, false),
        other => return Err(AugmentError::UnknownStrategy(other.to_string())),
    };
    let mut weak = Vec::new();
    if rich_weak {
        weak.push(AugmentationSpec::default_for(Affine));
    }
    weak.push(AugmentationSpec::default_for(Rot90Flip));
    if rich_weak {
        weak.push(AugmentationSpec::default_for(GridDistortion));
    }
    let mut strong = vec![AugmentationSpec::default_for(BrightnessContrast)];
    if noise {
        strong.push(AugmentationSpec::default_for(GaussianNoise));
    }
    if shuffle {
        strong.push(AugmentationSpec::default_for(ChannelShuffle));
    }
    if sharpen_blur {
        strong.push(AugmentationSpec::default_for(Sharpen));
        strong.push(AugmentationSpec::default_for(Blur));
    }
    Ok(StrategyConfig {
        name: name.to_string(),
        weak,
        strong,
    })
}

/// A transform that fired, with the parameters it drew.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppliedTransform {
    pub kind: AugKind,
    pub params: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedSample {
    pub image: Rgb32FImage,
    pub mask: Option<Mask>,
    pub applied: Vec<AppliedTransform>,
}

fn applied(kind: AugKind, params: &[(&str, f64)]) -> AppliedTransform {
    AppliedTransform {
        kind,
        params: params.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
    }
}

fn sym<R: Rng>(rng: &mut R, limit: f64) -> f64 {
    if limit == 0.0 {
        0.0
    } else {
        rng.gen_range(-limit..=limit)
    }
}

fn range<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..=hi)
    }
}

/// Applies one spec. Spatial kinds transform the mask too.
fn apply_spec<R: Rng>(
    spec: &AugmentationSpec,
    image: &mut Rgb32FImage,
    mask: &mut Option<Mask>,
    rng: &mut R,
) -> Option<AppliedTransform> {
    if rng.gen::<f64>() >= spec.p() {
        return None;
    }
    use transforms as t;
    let record = match *spec {
        AugmentationSpec::Affine {
            shift_limit,
            scale_limit,
            rotate_limit,
            ..
        } => {
            let p = AffineParams {
                shift_x: sym(rng, shift_limit),
                shift_y: sym(rng, shift_limit),
                scale: 1.0 + sym(rng, scale_limit),
                angle_deg: sym(rng, rotate_limit),
            };
            *image = t::affine_image(image, &p);
            if let Some(m) = mask.as_mut() {
                *m = t::affine_mask(m, &p);
            }
            applied(
                AugKind::Affine,
                &[("shift_x", p.shift_x), ("shift_y", p.shift_y), ("scale", p.scale), ("angle", p.angle_deg)],
            )
        }
        AugmentationSpec::Rot90Flip { .. } => {
            let k: u8 = rng.gen_range(0..4);
            let flip: u8 = rng.gen_range(0..4);
            let (hf, vf) = (flip & 1 == 1, flip & 2 == 2);
            *image = t::flip_image(&t::rot90_image(image, k), hf, vf);
            if let Some(m) = mask.as_mut() {
                *m = t::flip_mask(&t::rot90_mask(m, k), hf, vf);
            }
            applied(AugKind::Rot90Flip, &[("k", k as f64), ("hflip", hf as u8 as f64), ("vflip", vf as u8 as f64)])
        }
        AugmentationSpec::GridDistortion {
            num_steps,
            distort_limit,
            ..
        } => {
            let g = GridParams {
                x_steps: (0..num_steps).map(|_| 1.0 + sym(rng, distort_limit)).collect(),
                y_steps: (0..num_steps).map(|_| 1.0 + sym(rng, distort_limit)).collect(),
            };
            *image = t::grid_image(image, &g);
            if let Some(m) = mask.as_mut() {
                *m = t::grid_mask(m, &g);
            }
            let mut params: Vec<(&str, f64)> = Vec::new();
            params.extend(g.x_steps.iter().map(|&v| ("x_step", v)));
            params.extend(g.y_steps.iter().map(|&v| ("y_step", v)));
            applied(AugKind::GridDistortion, &params)
        }
        AugmentationSpec::Sharpen { alpha, lightness, .. } => {
            let a = range(rng, alpha);
            let l = range(rng, lightness);
            *image = t::sharpen(image, a as f32, l as f32);
            applied(AugKind::Sharpen, &[("alpha", a), ("lightness", l)])
        }
        AugmentationSpec::Blur { blur_limit, .. } => {
            let sizes: Vec<u32> = (3..=blur_limit).step_by(2).collect();
            let k = *sizes.choose(rng).expect("blur_limit >= 3");
            *image = t::box_blur(image, k as usize);
            applied(AugKind::Blur, &[("ksize", k as f64)])
        }
        AugmentationSpec::ChannelShuffle { .. } => {
            let mut perm = [0usize, 1, 2];
            perm.shuffle(rng);
            *image = t::permute_channels(image, perm);
            applied(
                AugKind::ChannelShuffle,
                &[("c0", perm[0] as f64), ("c1", perm[1] as f64), ("c2", perm[2] as f64)],
            )
        }
        AugmentationSpec::GaussianNoise { var_limit, .. } => {
            let var = if var_limit == 0.0 { 0.0 } else { rng.gen_range(0.0..=var_limit) };
            let normal = Normal::new(0.0f32, var.sqrt() as f32).expect("finite std");
            let noise: Vec<f32> = (0..image.as_raw().len()).map(|_| normal.sample(rng)).collect();
            *image = t::add_noise(image, &noise);
            applied(AugKind::GaussianNoise, &[("var", var)])
        }
        AugmentationSpec::BrightnessContrast {
            brightness_limit,
            contrast_limit,
            ..
        } => {
            let alpha = 1.0 + sym(rng, contrast_limit);
            let beta = sym(rng, brightness_limit);
            *image = t::brightness_contrast(image, alpha as f32, beta as f32);
            applied(AugKind::BrightnessContrast, &[("alpha", alpha), ("beta", beta)])
        }
    };
    Some(record)
}

/// Runs the weak pipeline. Every spec fires independently with its own `p`.
pub fn apply_weak(
    image: &Rgb32FImage,
    mask: Option<&Mask>,
    strategy: &StrategyConfig,
    seed: u64,
) -> Result<AugmentedSample, AugmentError> {
    if let Some(m) = mask {
        if m.dimensions() != image.dimensions() {
            return Err(AugmentError::ShapeMismatch {
                image: image.dimensions(),
                mask: m.dimensions(),
            });
        }
    }
    let mut rng = rng_from(seed);
    let mut img = image.clone();
    let mut m = mask.cloned();
    let mut log = Vec::new();
    for spec in &strategy.weak {
        if let Some(a) = apply_spec(spec, &mut img, &mut m, &mut rng) {
            log.push(a);
        }
    }
    Ok(AugmentedSample {
        image: img,
        mask: m,
        applied: log,
    })
}

/// Runs the strong pipeline on top of a weak view. The mask is carried over untouched.
pub fn apply_strong(
    weak: &AugmentedSample,
    strategy: &StrategyConfig,
    seed: u64,
) -> Result<AugmentedSample, AugmentError> {
    if let Some(s) = strategy.strong.iter().find(|s| s.is_spatial()) {
        return Err(AugmentError::SpatialSpecInStrong {
            strategy: strategy.name.clone(),
            kind: s.kind(),
        });
    }
    let mut rng = rng_from(seed);
    let mut img = weak.image.clone();
    let mut no_mask = None;
    let mut log = weak.applied.clone();
    for spec in &strategy.strong {
        if let Some(a) = apply_spec(spec, &mut img, &mut no_mask, &mut rng) {
            log.push(a);
        }
    }
    Ok(AugmentedSample {
        image: img,
        mask: weak.mask.clone(),
        applied: log,
    })
}
