//! Procedural fracture-surface images with exact ground-truth masks.
//!
//! The crack grows downward. A specimen rectangle sits on a background; side grooves
//! are vertical strips at both edges of the specimen. Between them, from the top: the
//! erosion notch band, the fatigue precrack (whose lower edge is the crack front), a
//! ductile band following the front, brittle fracture, and for compact-tension kinds
//! a bottom band of "other". Textures, illumination, backgrounds and artifacts only
//! change pixel colors, never labels.
//!
//! The true initial crack size is the notch depth plus the mean precrack depth over
//! the net section, evaluated on the continuous front.

use std::path::{Path, PathBuf};

use image::RgbImage;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetManifest, ImageRecord, RecordEntry};
use crate::io;
use crate::mask::Mask;
use crate::measure::{CrackAxis, SpecimenGeometry};
use crate::rng::{derive_seed, rng_from};
use crate::taxonomy::{Class, NUM_CLASSES};
use crate::DataError;

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("invalid profile {0:?}")]
    InvalidProfile(String),
    #[error("need at least 4 images, got {0}")]
    TooFew(usize),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpecimenKind {
    Seb,
    Ct,
    MiniCt,
    Chevron,
}

impl SpecimenKind {
    pub const ALL: [SpecimenKind; 4] = [SpecimenKind::Seb, SpecimenKind::Ct, SpecimenKind::MiniCt, SpecimenKind::Chevron];

    pub fn tag(self) -> &'static str {
        match self {
            SpecimenKind::Seb => "seb",
            SpecimenKind::Ct => "ct",
            SpecimenKind::MiniCt => "mini_ct",
            SpecimenKind::Chevron => "chevron",
        }
    }
}

/// Shape of the precrack's lower edge across the net section (u in [0, 1]).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum FrontShape {
    Flat,
    /// Deepest at mid-thickness: `amp · (1 - (2u - 1)²)`.
    Thumbnail { amp: f64 },
    /// `amp · sin(2π · periods · u)`.
    Sine { amp: f64, periods: f64 },
    /// Triangular peak at mid-thickness: `amp · (1 - |2u - 1|)`.
    Chevron { amp: f64 },
}

impl FrontShape {
    pub fn offset(&self, u: f64) -> f64 {
        match *self {
            FrontShape::Flat => 0.0,
            FrontShape::Thumbnail { amp } => amp * (1.0 - (2.0 * u - 1.0).powi(2)),
            FrontShape::Sine { amp, periods } => amp * (std::f64::consts::TAU * periods * u).sin(),
            FrontShape::Chevron { amp } => amp * (1.0 - (2.0 * u - 1.0).abs()),
        }
    }

    /// Mean offset over u in [0, 1].
    pub fn mean_offset(&self) -> f64 {
        match *self {
            FrontShape::Flat => 0.0,
            FrontShape::Thumbnail { amp } => amp * 2.0 / 3.0,
            FrontShape::Sine { amp, periods } => {
                let w = std::f64::consts::TAU * periods;
                amp * (1.0 - w.cos()) / w
            }
            FrontShape::Chevron { amp } => amp / 2.0,
        }
    }

    fn min_offset(&self) -> f64 {
        match *self {
            FrontShape::Sine { amp, .. } => -amp.abs(),
            _ => 0.0,
        }
    }

    fn max_offset(&self) -> f64 {
        match *self {
            FrontShape::Flat => 0.0,
            FrontShape::Thumbnail { amp } | FrontShape::Chevron { amp } => amp.max(0.0),
            FrontShape::Sine { amp, .. } => amp.abs(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "style", rename_all = "snake_case")]
pub enum Background {
    Flat { color: [f32; 3] },
    Gradient { from: [f32; 3], to: [f32; 3] },
    /// Random rectangles over a base color.
    Cluttered { base: [f32; 3] },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifacts {
    pub stain: bool,
    pub engraving: bool,
    pub scratch: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub kind: SpecimenKind,
    pub width: u32,
    pub height: u32,
    /// Specimen rectangle: left, top, width, height in pixels.
    pub specimen: [u32; 4],
    pub side_groove: u32,
    pub notch: u32,
    pub precrack: f64,
    pub front: FrontShape,
    pub ductile: f64,
    /// Bottom band of class "other".
    pub other: u32,
    pub background: Background,
    /// Base color per class id (index 0 unused).
    pub palette: [[f32; 3]; NUM_CLASSES],
    /// Multiplier on every class texture amplitude.
    pub texture: f32,
    /// Strength of a left-to-right illumination ramp.
    pub illumination: f32,
    /// Per-pixel Gaussian sensor noise (std on [0, 1]).
    pub sensor_noise: f32,
    pub artifacts: Artifacts,
    /// Millimetres per pixel.
    pub scale: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn net_width(&self) -> u32 {
        self.specimen[2].saturating_sub(2 * self.side_groove)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |s: String| Err(SynthError::InvalidSpec(s));
        let [x0, y0, sw, sh] = self.specimen;
        if self.width < 8 || self.height < 8 {
            return bad(format!("image {}x{} too small", self.width, self.height));
        }
        if x0 + sw > self.width || y0 + sh > self.height || sw == 0 || sh == 0 {
            return bad("specimen rectangle leaves the image".into());
        }
        if self.kind == SpecimenKind::Chevron && self.side_groove > 0 {
            return bad("chevron specimens have no side grooves".into());
        }
        if self.net_width() < 4 {
            return bad("net section narrower than 4 px".into());
        }
        if self.notch == 0 {
            return bad("notch depth must be positive".into());
        }
        if self.precrack + self.front.min_offset() < 1.0 {
            return bad("precrack must be at least 1 px deep everywhere".into());
        }
        if !(self.ductile >= 0.0) {
            return bad("ductile depth must be non-negative".into());
        }
        let deepest = self.notch as f64 + self.precrack + self.front.max_offset() + self.ductile;
        if deepest + self.other as f64 > sh as f64 {
            return bad(format!("band depths {deepest} + {} exceed specimen height {sh}", self.other));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return bad(format!("scale {}", self.scale));
        }
        Ok(())
    }

    /// Class at a pixel, from the continuous layout evaluated at the pixel center.
    pub fn class_at(&self, x: u32, y: u32) -> Class {
        let [x0, y0, sw, sh] = self.specimen;
        if x < x0 || y < y0 || x >= x0 + sw || y >= y0 + sh {
            return Class::Background;
        }
        let (lx, ly) = (x - x0, y - y0);
        let g = self.side_groove;
        if lx < g || lx >= sw - g {
            return Class::SideGroove;
        }
        if ly < self.notch {
            return Class::ErosionNotch;
        }
        if ly >= sh - self.other {
            return Class::Other;
        }
        let u = ((lx - g) as f64 + 0.5) / self.net_width() as f64;
        let front = self.notch as f64 + self.precrack + self.front.offset(u);
        let d = ly as f64 + 0.5;
        if d < front {
            Class::FatiguePrecrack
        } else if d < front + self.ductile {
            Class::DuctileFracture
        } else {
            Class::BrittleFracture
        }
    }

    pub fn true_a0_px(&self) -> f64 {
        self.notch as f64 + self.precrack + self.front.mean_offset()
    }

    pub fn geometry(&self) -> SpecimenGeometry {
        SpecimenGeometry {
            w: Some(self.specimen[3] as f64 * self.scale),
            b: Some(self.specimen[2] as f64 * self.scale),
            b_n: Some(self.net_width() as f64 * self.scale),
            a_k: Some(self.notch as f64 * self.scale),
            orientation: CrackAxis::Rows,
            origin: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub id: String,
    pub domain_tag: String,
    pub geometry: SpecimenGeometry,
    pub scale: f64,
    pub true_a0_px: f64,
    pub true_a0_mm: f64,
    pub spec: SynthSpec,
}

#[derive(Debug, Clone)]
pub struct SynthSample {
    pub meta: SampleMeta,
    pub image: RgbImage,
    pub mask: Mask,
}

impl SynthSample {
    pub fn record(&self, labeled: bool) -> Result<ImageRecord, DataError> {
        ImageRecord::new(
            self.meta.id.clone(),
            self.image.clone(),
            Some(self.meta.scale),
            self.meta.domain_tag.clone(),
            labeled,
        )
    }
}

pub fn render_mask(spec: &SynthSpec) -> Mask {
    let mut m = Mask::new(spec.width, spec.height);
    for y in 0..spec.height {
        for x in 0..spec.width {
            m.set(x, y, spec.class_at(x, y));
        }
    }
    m
}

/// Smooth value noise in [-1, 1] with the given cell size in pixels.
fn value_noise<R: Rng>(w: u32, h: u32, cell: f32, rng: &mut R) -> Vec<f32> {
    let gw = (w as f32 / cell).ceil() as usize + 2;
    let gh = (h as f32 / cell).ceil() as usize + 2;
    let grid: Vec<f32> = (0..gw * gh).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut out = Vec::with_capacity((w * h) as usize);
    for y in 0..h {
        let fy = y as f32 / cell;
        let (iy, ty) = (fy as usize, fy.fract());
        let sy = ty * ty * (3.0 - 2.0 * ty);
        for x in 0..w {
            let fx = x as f32 / cell;
            let (ix, tx) = (fx as usize, fx.fract());
            let sx = tx * tx * (3.0 - 2.0 * tx);
            let g = |i: usize, j: usize| grid[j * gw + i];
            let top = g(ix, iy) * (1.0 - sx) + g(ix + 1, iy) * sx;
            let bot = g(ix, iy + 1) * (1.0 - sx) + g(ix + 1, iy + 1) * sx;
            out.push(top * (1.0 - sy) + bot * sy);
        }
    }
    out
}

fn mix(a: [f32; 3], b: [f32; 3], t: f32) -> [f32; 3] {
    [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t]
}

pub fn generate(spec: &SynthSpec, id: &str, domain_tag: &str) -> Result<SynthSample, SynthError> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let mut rng = rng_from(spec.seed);
    let mask = render_mask(spec);
    let fine = value_noise(w, h, 1.5, &mut rng);
    let medium = value_noise(w, h, 3.0, &mut rng);
    let coarse = value_noise(w, h, 8.0, &mut rng);
    let [x0, y0, sw, _] = spec.specimen;

    let mut clutter: Vec<([u32; 4], [f32; 3])> = Vec::new();
    if let Background::Cluttered { .. } = spec.background {
        for _ in 0..rng.gen_range(3..8) {
            let (cw, ch) = (rng.gen_range(4..w / 2), rng.gen_range(4..h / 2));
            let (cx, cy) = (rng.gen_range(0..w - cw), rng.gen_range(0..h - ch));
            clutter.push(([cx, cy, cw, ch], [rng.gen(), rng.gen(), rng.gen()]));
        }
    }

    let t = spec.texture;
    let mut px = vec![[0f32; 3]; (w * h) as usize];
    for y in 0..h {
        for x in 0..w {
            let i = (y * w + x) as usize;
            let class = mask.labels()[i];
            let c = if class == 0 {
                match spec.background {
                    Background::Flat { color } => color,
                    Background::Gradient { from, to } => mix(from, to, y as f32 / h as f32),
                    Background::Cluttered { base } => clutter
                        .iter()
                        .rev()
                        .find(|(r, _)| x >= r[0] && y >= r[1] && x < r[0] + r[2] && y < r[1] + r[3])
                        .map_or(base, |(_, col)| *col),
                }
            } else {
                let base = spec.palette[class as usize];
                let ly = (y - y0) as f32;
                let k = match class {
                    // side groove: shading toward the outer edge
                    1 => {
                        let lx = (x - x0) as f32;
                        let edge = lx.min(sw as f32 - 1.0 - lx) / spec.side_groove.max(1) as f32;
                        0.75 + 0.25 * edge + 0.15 * t * coarse[i]
                    }
                    // notch: machining striations
                    2 => 1.0 + t * (0.12 * (ly * 1.7).sin() + 0.08 * fine[i]),
                    // precrack: smooth with beach marks
                    3 => 1.0 + t * (0.1 * (ly * 0.9 + 0.6 * coarse[i]).sin() + 0.06 * fine[i]),
                    // ductile: dimpled
                    4 => 1.0 + t * 0.35 * fine[i],
                    // brittle: facets with sparkle
                    5 => {
                        let sparkle = if fine[i] > 0.75 { 0.35 } else { 0.0 };
                        1.0 + t * (0.3 * medium[i] + sparkle)
                    }
                    _ => 1.0 + t * 0.2 * coarse[i],
                };
                [base[0] * k, base[1] * k, base[2] * k]
            };
            px[i] = c;
        }
    }

    if spec.artifacts.stain {
        let (cx, cy) = (rng.gen_range(0.0..w as f32), rng.gen_range(0.0..h as f32));
        let r = rng.gen_range(0.1..0.25) * w.min(h) as f32;
        let tint = [rng.gen_range(0.3..0.9), rng.gen_range(0.2..0.7), rng.gen_range(0.1..0.5)];
        for y in 0..h {
            for x in 0..w {
                let d = ((x as f32 - cx).powi(2) + (y as f32 - cy).powi(2)).sqrt() / r;
                if d < 1.0 {
                    let i = (y * w + x) as usize;
                    px[i] = mix(px[i], tint, 0.45 * (1.0 - d));
                }
            }
        }
    }
    if spec.artifacts.engraving {
        // short dark strokes near the top of the specimen
        let n = rng.gen_range(2..5);
        for _ in 0..n {
            let sx = x0 + rng.gen_range(0..sw.max(2) - 1);
            let sy = y0 + rng.gen_range(0..spec.notch.max(2));
            let len = rng.gen_range(3..8u32);
            let vertical = rng.gen_bool(0.5);
            for s in 0..len {
                let (x, y) = if vertical { (sx, sy + s) } else { (sx + s, sy) };
                if x < w && y < h {
                    let i = (y * w + x) as usize;
                    px[i] = [px[i][0] * 0.35, px[i][1] * 0.35, px[i][2] * 0.35];
                }
            }
        }
    }
    if spec.artifacts.scratch {
        let (ax, ay) = (rng.gen_range(0.0..w as f32), rng.gen_range(0.0..h as f32));
        let (bx, by) = (rng.gen_range(0.0..w as f32), rng.gen_range(0.0..h as f32));
        let steps = (bx - ax).abs().max((by - ay).abs()).max(1.0) as u32;
        for s in 0..=steps {
            let f = s as f32 / steps as f32;
            let (x, y) = ((ax + f * (bx - ax)) as u32, (ay + f * (by - ay)) as u32);
            if x < w && y < h {
                let i = (y * w + x) as usize;
                px[i] = mix(px[i], [0.95, 0.95, 0.95], 0.6);
            }
        }
    }

    let noise = Normal::new(0.0f32, spec.sensor_noise.max(0.0)).expect("finite std");
    let mut image = RgbImage::new(w, h);
    for (i, p) in image.pixels_mut().enumerate() {
        let (x, _) = ((i as u32 % w) as f32, i as u32 / w);
        let light = 1.0 + spec.illumination * (x / w as f32 - 0.5);
        for c in 0..3 {
            let v = px[i][c] * light + noise.sample(&mut rng);
            p.0[c] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        }
    }

    let a0_px = spec.true_a0_px();
    Ok(SynthSample {
        meta: SampleMeta {
            id: id.to_string(),
            domain_tag: domain_tag.to_string(),
            geometry: spec.geometry(),
            scale: spec.scale,
            true_a0_px: a0_px,
            true_a0_mm: a0_px * spec.scale,
            spec: spec.clone(),
        },
        image,
        mask,
    })
}

/// Dataset diversity profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// One specimen kind on a flat blue background with a fixed palette.
    Hom,
    /// All kinds, backgrounds, artifacts and a wide palette spread.
    Het,
    /// Two kinds, plain backgrounds, moderate palette spread.
    Har,
}

impl std::str::FromStr for Profile {
    type Err = SynthError;
    fn from_str(s: &str) -> Result<Self, SynthError> {
        match s.to_ascii_lowercase().trim_end_matches("-like") {
            "hom" => Ok(Profile::Hom),
            "het" => Ok(Profile::Het),
            "har" => Ok(Profile::Har),
            other => Err(SynthError::InvalidProfile(other.to_string())),
        }
    }
}

/// Reference grey-metal palette by class id.
const BASE_PALETTE: [[f32; 3]; NUM_CLASSES] = [
    [0.0, 0.0, 0.0],
    [0.30, 0.30, 0.32],
    [0.55, 0.55, 0.57],
    [0.38, 0.33, 0.28],
    [0.62, 0.60, 0.58],
    [0.78, 0.78, 0.80],
    [0.45, 0.48, 0.52],
];

/// Image size and size jitter for [`sample_spec`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizeRange {
    pub min: u32,
    pub max: u32,
}

impl Default for SizeRange {
    fn default() -> Self {
        SizeRange { min: 64, max: 96 }
    }
}

/// Draws one spec from a profile.
pub fn sample_spec<R: Rng>(profile: Profile, size: SizeRange, rng: &mut R) -> SynthSpec {
    let het = profile == Profile::Het;
    let kind = match profile {
        Profile::Hom => SpecimenKind::Seb,
        Profile::Har => [SpecimenKind::Seb, SpecimenKind::Ct][rng.gen_range(0..2)],
        Profile::Het => SpecimenKind::ALL[rng.gen_range(0..4)],
    };
    let (width, height) = match profile {
        Profile::Hom => (size.min, size.min),
        _ => (rng.gen_range(size.min..=size.max), rng.gen_range(size.min..=size.max)),
    };
    let frac = |rng: &mut R, lo: f64, hi: f64| if profile == Profile::Hom { (lo + hi) / 2.0 } else { rng.gen_range(lo..hi) };
    let mx = (frac(rng, 0.06, 0.16) * width as f64) as u32;
    let mt = (frac(rng, 0.04, 0.12) * height as f64) as u32;
    let mb = (frac(rng, 0.04, 0.12) * height as f64) as u32;
    let sw = width - 2 * mx;
    let sh = height - mt - mb;
    let side_groove = if kind == SpecimenKind::Chevron {
        0
    } else {
        ((frac(rng, 0.07, 0.13) * sw as f64) as u32).max(2)
    };
    let notch = ((frac(rng, 0.14, 0.24) * sh as f64) as u32).max(2);
    let precrack = (frac(rng, 0.10, 0.20) * sh as f64).max(3.0);
    let front = match (kind, profile) {
        (SpecimenKind::Chevron, _) => FrontShape::Chevron { amp: 0.4 * precrack },
        (_, Profile::Hom) => FrontShape::Thumbnail { amp: 0.2 * precrack },
        _ => match rng.gen_range(0..3) {
            0 => FrontShape::Flat,
            1 => FrontShape::Thumbnail { amp: rng.gen_range(0.1..0.4) * precrack },
            _ => FrontShape::Sine {
                amp: rng.gen_range(0.05..0.2) * precrack,
                periods: rng.gen_range(1..3) as f64,
            },
        },
    };
    let ductile = if kind == SpecimenKind::Chevron && het && rng.gen_bool(0.5) {
        0.0
    } else {
        frac(rng, 0.06, 0.16) * sh as f64
    };
    let other = match kind {
        SpecimenKind::Ct | SpecimenKind::MiniCt => (frac(rng, 0.08, 0.15) * sh as f64) as u32,
        _ => 0,
    };

    let spread = match profile {
        Profile::Hom => 0.03,
        Profile::Har => 0.10,
        Profile::Het => 0.22,
    };
    let brightness: f32 = 1.0 + rng.gen_range(-1.0..1.0) * spread * 1.5;
    let cast: [f32; 3] = std::array::from_fn(|_| 1.0 + rng.gen_range(-1.0..1.0) * spread);
    let mut palette = BASE_PALETTE;
    for col in palette.iter_mut().skip(1) {
        let tint = rng.gen_range(-1.0..1.0) * spread * 0.5;
        for c in 0..3 {
            col[c] = (col[c] * brightness * cast[c] * (1.0 + tint)).clamp(0.02, 0.98);
        }
    }

    let background = match profile {
        Profile::Hom => Background::Flat {
            color: [0.12, 0.25, 0.65],
        },
        Profile::Har => {
            let c = [rng.gen_range(0.0..0.3), rng.gen_range(0.1..0.4), rng.gen_range(0.4..0.8)];
            if rng.gen_bool(0.5) {
                Background::Flat { color: c }
            } else {
                Background::Gradient {
                    from: c,
                    to: [c[0] * 0.5, c[1] * 0.5, c[2] * 0.5],
                }
            }
        }
        Profile::Het => {
            let c: [f32; 3] = [rng.gen(), rng.gen(), rng.gen()];
            match rng.gen_range(0..3) {
                0 => Background::Flat { color: c },
                1 => Background::Gradient {
                    from: c,
                    to: [rng.gen(), rng.gen(), rng.gen()],
                },
                _ => Background::Cluttered { base: c },
            }
        }
    };
    let p_art = match profile {
        Profile::Hom => 0.0,
        Profile::Har => 0.15,
        Profile::Het => 0.3,
    };
    let artifacts = Artifacts {
        stain: rng.gen_bool(p_art),
        engraving: rng.gen_bool(p_art),
        scratch: rng.gen_bool(p_art),
    };
    let net_mm = rng.gen_range(4.0..20.0);
    let net_px = (sw - 2 * side_groove) as f64;
    SynthSpec {
        kind,
        width,
        height,
        specimen: [mx, mt, sw, sh],
        side_groove,
        notch,
        precrack,
        front,
        ductile,
        other,
        background,
        palette,
        texture: if het { rng.gen_range(0.6..1.4) } else { 1.0 },
        illumination: if het { rng.gen_range(0.0..0.4) } else { 0.05 },
        sensor_noise: if het { rng.gen_range(0.0..0.04) } else { 0.01 },
        artifacts,
        scale: net_mm / net_px,
        seed: rng.gen(),
    }
}

/// Number of labeled images for a total `n` at unlabeled-to-labeled ratio `mu`.
pub fn labeled_count(n: usize, mu: f64) -> usize {
    ((n as f64 / (1.0 + mu)).round() as usize).clamp(1, n)
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub name: String,
    pub samples: Vec<SynthSample>,
    /// Parallel to `samples`.
    pub labeled: Vec<bool>,
}

impl SynthDataset {
    pub fn ids(&self) -> Vec<String> {
        self.samples.iter().map(|s| s.meta.id.clone()).collect()
    }

    /// Manifest with paths relative to the dataset directory.
    pub fn manifest(&self) -> Result<DatasetManifest, DataError> {
        let records = self
            .samples
            .iter()
            .zip(&self.labeled)
            .map(|(s, &labeled)| RecordEntry {
                id: s.meta.id.clone(),
                domain_tag: s.meta.domain_tag.clone(),
                labeled,
                image: Some(PathBuf::from(format!("images/{}.png", s.meta.id))),
                mask: labeled.then(|| PathBuf::from(format!("masks/{}.png", s.meta.id))),
                meta: Some(PathBuf::from(format!("meta/{}.json", s.meta.id))),
                scale: Some(s.meta.scale),
            })
            .collect();
        DatasetManifest::new(self.name.clone(), records)
    }

    /// Writes images, labeled masks, per-sample metadata and `manifest.json`.
    pub fn write(&self, dir: &Path) -> Result<DatasetManifest, SynthError> {
        for sub in ["images", "masks", "meta"] {
            std::fs::create_dir_all(dir.join(sub))?;
        }
        let manifest = self.manifest()?;
        for (s, &labeled) in self.samples.iter().zip(&self.labeled) {
            io::write_rgb(&dir.join(format!("images/{}.png", s.meta.id)), &s.image)?;
            if labeled {
                io::write_mask(&dir.join(format!("masks/{}.png", s.meta.id)), &s.mask)?;
            }
            std::fs::write(
                dir.join(format!("meta/{}.json", s.meta.id)),
                serde_json::to_string_pretty(&s.meta)?,
            )?;
        }
        manifest.save(&dir.join("manifest.json"))?;
        Ok(manifest)
    }
}

/// Draws `n` images from `profile`. The first `labeled_count(n, mu)` are labeled.
pub fn generate_dataset(profile: Profile, n: usize, seed: u64, mu: f64, size: SizeRange) -> Result<SynthDataset, SynthError> {
    if n < 4 {
        return Err(SynthError::TooFew(n));
    }
    if !(mu >= 0.0 && mu.is_finite()) {
        return Err(SynthError::InvalidSpec(format!("ratio {mu}")));
    }
    let n_labeled = labeled_count(n, mu);
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = rng_from(derive_seed(seed, &[i as u64]));
        let spec = sample_spec(profile, size, &mut rng);
        let tag = spec.kind.tag();
        samples.push(generate(&spec, &format!("img{i:04}"), tag)?);
    }
    let name = format!("{profile:?}-{seed}").to_lowercase();
    Ok(SynthDataset {
        name,
        samples,
        labeled: (0..n).map(|i| i < n_labeled).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::{area_average_a0, five_point_a0};

    fn flat_spec() -> SynthSpec {
        let mut rng = rng_from(1);
        let mut s = sample_spec(Profile::Hom, SizeRange::default(), &mut rng);
        s.front = FrontShape::Flat;
        s.precrack = 9.0;
        s.ductile = 6.0;
        s.artifacts = Artifacts::default();
        s
    }

    #[test]
    fn flat_bands_have_exact_areas() {
        let s = flat_spec();
        let m = render_mask(&s);
        let h = m.histogram();
        let net = s.net_width() as u64;
        assert_eq!(h[Class::ErosionNotch.index()], net * s.notch as u64);
        assert_eq!(h[Class::FatiguePrecrack.index()], net * 9);
        assert_eq!(h[Class::DuctileFracture.index()], net * 6);
        assert_eq!(h[Class::SideGroove.index()], 2 * s.side_groove as u64 * s.specimen[3] as u64);
        let r = area_average_a0(&m, &s.geometry(), None).unwrap();
        assert_eq!(r.a0_px, s.true_a0_px());
        assert_eq!(five_point_a0(&m, &s.geometry(), None).unwrap(), s.true_a0_px());
        // mm path through the geometry's B_N
        let r = area_average_a0(&m, &s.geometry(), Some(s.scale)).unwrap();
        assert!((r.a0_mm.unwrap() - s.true_a0_px() * s.scale).abs() < 1e-9);
    }

    #[test]
    fn curved_fronts_within_half_pixel() {
        for seed in 0..30 {
            let mut rng = rng_from(seed);
            let s = sample_spec(Profile::Het, SizeRange::default(), &mut rng);
            let m = render_mask(&s);
            let r = area_average_a0(&m, &s.geometry(), None).unwrap();
            assert!((r.a0_px - s.true_a0_px()).abs() < 0.5, "seed {seed}: {} vs {}", r.a0_px, s.true_a0_px());
        }
    }

    #[test]
    fn chevron_has_no_grooves() {
        let mut rng = rng_from(3);
        for _ in 0..40 {
            let s = sample_spec(Profile::Het, SizeRange::default(), &mut rng);
            if s.kind == SpecimenKind::Chevron {
                let m = render_mask(&s);
                assert_eq!(m.count(Class::SideGroove), 0);
                assert!(m.classes_present().len() <= 6);
            }
        }
    }

    #[test]
    fn mean_offsets_match_numeric_integration() {
        for f in [
            FrontShape::Thumbnail { amp: 3.0 },
            FrontShape::Sine { amp: 2.0, periods: 1.5 },
            FrontShape::Chevron { amp: 4.0 },
        ] {
            let n = 100_000;
            let num: f64 = (0..n).map(|i| f.offset((i as f64 + 0.5) / n as f64)).sum::<f64>() / n as f64;
            assert!((num - f.mean_offset()).abs() < 1e-6);
        }
    }

    #[test]
    fn dataset_counts_and_determinism() {
        assert_eq!(labeled_count(25, 5.25), 4);
        let a = generate_dataset(Profile::Hom, 6, 9, 2.0, SizeRange::default()).unwrap();
        let b = generate_dataset(Profile::Hom, 6, 9, 2.0, SizeRange::default()).unwrap();
        assert_eq!(a.labeled.iter().filter(|&&l| l).count(), 2);
        for (x, y) in a.samples.iter().zip(&b.samples) {
            assert_eq!(x.image, y.image);
            assert_eq!(x.mask, y.mask);
            assert_eq!(x.meta.spec.kind, SpecimenKind::Seb);
        }
        assert!(generate_dataset(Profile::Het, 3, 0, 1.0, SizeRange::default()).is_err());
        assert!("het-like".parse::<Profile>().is_ok());
        assert!("xyz".parse::<Profile>().is_err());
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut s = flat_spec();
        s.precrack = 500.0;
        assert!(matches!(s.validate(), Err(SynthError::InvalidSpec(_))));
        let mut s = flat_spec();
        s.kind = SpecimenKind::Chevron;
        assert!(s.validate().is_err());
    }

    #[test]
    fn write_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = generate_dataset(Profile::Har, 5, 2, 1.5, SizeRange::default()).unwrap();
        let manifest = ds.write(dir.path()).unwrap();
        let loaded = DatasetManifest::load(&dir.path().join("manifest.json")).unwrap();
        assert_eq!(loaded, manifest);
        let m = io::read_mask(&dir.path().join("masks/img0000.png")).unwrap();
        assert_eq!(m, ds.samples[0].mask);
        assert!(!dir.path().join("masks/img0004.png").exists());
    }
}
