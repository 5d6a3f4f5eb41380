//! PNG storage for images and masks.
//!
//! Masks are single-channel 8-bit PNGs whose pixel values are class ids. The
//! colorized rendering uses the fixed palette in [`PALETTE`].

use std::path::Path;

use image::{GrayImage, RgbImage};

use crate::mask::Mask;
use crate::taxonomy::NUM_CLASSES;
use crate::DataError;

/// Display colors by class id: background, side groove, erosion notch, fatigue
/// precrack, ductile fracture, brittle fracture, other.
pub const PALETTE: [[u8; 3]; NUM_CLASSES] = [
    [0, 0, 0],
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
];

pub fn read_rgb(path: &Path) -> Result<RgbImage, DataError> {
    Ok(image::open(path)?.to_rgb8())
}

pub fn write_rgb(path: &Path, img: &RgbImage) -> Result<(), DataError> {
    img.save(path)?;
    Ok(())
}

pub fn read_mask(path: &Path) -> Result<Mask, DataError> {
    let img = image::open(path)?.to_luma8();
    let (w, h) = img.dimensions();
    Mask::from_vec(w, h, img.into_raw())
}

pub fn write_mask(path: &Path, mask: &Mask) -> Result<(), DataError> {
    let img = GrayImage::from_raw(mask.width(), mask.height(), mask.labels().to_vec())
        .expect("mask buffer matches dimensions");
    img.save(path)?;
    Ok(())
}

pub fn colorize(mask: &Mask) -> RgbImage {
    let mut out = RgbImage::new(mask.width(), mask.height());
    for (p, &l) in out.pixels_mut().zip(mask.labels()) {
        p.0 = PALETTE[l as usize];
    }
    out
}
