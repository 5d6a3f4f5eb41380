//! 2×2 slicing into fixed-size patches and stitching predictions back.
//!
//! The first row/column of the grid takes the ceiling half, the second the floor, so a
//! 421-wide image splits into 211 + 210 columns.

use image::Rgb32FImage;
use serde::{Deserialize, Serialize};

use crate::imageops::{resize_bilinear_interleaved, resize_bilinear_planar, resize_nearest_u8};
use crate::mask::Mask;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PatchError {
    #[error("image {width}x{height} too small to split 2x2")]
    TooSmall { width: u32, height: u32 },
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
}

/// Source rectangle in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchGrid {
    pub width: u32,
    pub height: u32,
    /// Side of each square output patch.
    pub patch_size: u32,
    /// Row-major: top-left, top-right, bottom-left, bottom-right.
    pub rects: [Rect; 4],
}

impl PatchGrid {
    pub fn new(width: u32, height: u32, patch_size: u32) -> Result<Self, PatchError> {
        if width < 2 || height < 2 || patch_size == 0 {
            return Err(PatchError::TooSmall { width, height });
        }
        let (w0, h0) = (width.div_ceil(2), height.div_ceil(2));
        let (w1, h1) = (width - w0, height - h0);
        let r = |x, y, w, h| Rect { x, y, w, h };
        Ok(PatchGrid {
            width,
            height,
            patch_size,
            rects: [r(0, 0, w0, h0), r(w0, 0, w1, h0), r(0, h0, w0, h1), r(w0, h0, w1, h1)],
        })
    }

    fn check(&self, n: usize) -> Result<(), PatchError> {
        if n != 4 {
            return Err(PatchError::GridMismatch(format!("expected 4 patches, got {n}")));
        }
        Ok(())
    }
}

fn crop_interleaved(src: &[f32], w: usize, c: usize, r: Rect) -> Vec<f32> {
    let mut out = Vec::with_capacity(r.w as usize * r.h as usize * c);
    for y in r.y as usize..(r.y + r.h) as usize {
        let start = (y * w + r.x as usize) * c;
        out.extend_from_slice(&src[start..start + r.w as usize * c]);
    }
    out
}

pub fn slice_image(img: &Rgb32FImage, patch_size: u32) -> Result<(PatchGrid, Vec<Rgb32FImage>), PatchError> {
    let grid = PatchGrid::new(img.width(), img.height(), patch_size)?;
    let p = patch_size as usize;
    let patches = grid
        .rects
        .iter()
        .map(|&r| {
            let crop = crop_interleaved(img.as_raw(), img.width() as usize, 3, r);
            let data = resize_bilinear_interleaved(&crop, 3, r.w as usize, r.h as usize, p, p);
            Rgb32FImage::from_raw(patch_size, patch_size, data).expect("patch buffer")
        })
        .collect();
    Ok((grid, patches))
}

pub fn slice_mask(mask: &Mask, patch_size: u32) -> Result<(PatchGrid, Vec<Mask>), PatchError> {
    let grid = PatchGrid::new(mask.width(), mask.height(), patch_size)?;
    let patches = grid
        .rects
        .iter()
        .map(|&r| mask.crop(r.x, r.y, r.w, r.h).resize_nearest(patch_size, patch_size))
        .collect();
    Ok((grid, patches))
}

/// Resizes planar `c × patch × patch` logits back to their rectangles and assembles a
/// planar `c × H × W` buffer.
pub fn stitch_logits(grid: &PatchGrid, patches: &[Vec<f32>], c: usize) -> Result<Vec<f32>, PatchError> {
    grid.check(patches.len())?;
    let p = grid.patch_size as usize;
    let (w, h) = (grid.width as usize, grid.height as usize);
    let mut out = vec![0f32; c * w * h];
    for (patch, r) in patches.iter().zip(&grid.rects) {
        if patch.len() != c * p * p {
            return Err(PatchError::GridMismatch(format!(
                "patch has {} values, expected {}",
                patch.len(),
                c * p * p
            )));
        }
        let (rw, rh) = (r.w as usize, r.h as usize);
        let local = resize_bilinear_planar(patch, c, p, p, rw, rh);
        for ch in 0..c {
            for y in 0..rh {
                let src = &local[ch * rw * rh + y * rw..ch * rw * rh + (y + 1) * rw];
                let dst = ch * w * h + (r.y as usize + y) * w + r.x as usize;
                out[dst..dst + rw].copy_from_slice(src);
            }
        }
    }
    Ok(out)
}

pub fn stitch_labels(grid: &PatchGrid, patches: &[Mask]) -> Result<Mask, PatchError> {
    grid.check(patches.len())?;
    let mut out = Mask::new(grid.width, grid.height);
    for (patch, r) in patches.iter().zip(&grid.rects) {
        if patch.dimensions() != (grid.patch_size, grid.patch_size) {
            return Err(PatchError::GridMismatch(format!(
                "patch is {:?}, expected {}",
                patch.dimensions(),
                grid.patch_size
            )));
        }
        let data = resize_nearest_u8(
            patch.labels(),
            grid.patch_size as usize,
            grid.patch_size as usize,
            r.w as usize,
            r.h as usize,
        );
        let local = Mask::from_vec(r.w, r.h, data).expect("valid labels");
        out.paste(&local, r.x, r.y);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imageops::argmax_planar;
    use image::Rgb;
    use proptest::prelude::*;

    #[test]
    fn odd_split_arithmetic() {
        let g = PatchGrid::new(421, 169, 64).unwrap();
        assert_eq!((g.rects[0].w, g.rects[1].w), (211, 210));
        assert_eq!((g.rects[0].h, g.rects[2].h), (85, 84));
        let g = PatchGrid::new(6000, 4000, 512).unwrap();
        assert!(g.rects.iter().all(|r| (r.w, r.h) == (3000, 2000)));
        assert!(matches!(PatchGrid::new(1, 10, 4), Err(PatchError::TooSmall { .. })));
    }

    #[test]
    fn exact_divisor_is_lossless() {
        let img = Rgb32FImage::from_fn(16, 16, |x, y| Rgb([x as f32 / 16.0, y as f32 / 16.0, 0.5]));
        let (_, patches) = slice_image(&img, 8).unwrap();
        assert_eq!(patches[3].get_pixel(0, 0), img.get_pixel(8, 8));
        let mut m = Mask::new(16, 16);
        for i in 0..16 {
            m.set(i, (i * 3) % 16, crate::Class::DuctileFracture);
        }
        let (grid, mp) = slice_mask(&m, 8).unwrap();
        assert_eq!(stitch_labels(&grid, &mp).unwrap(), m);
    }

    #[test]
    fn logits_round_trip_exact_at_native_size() {
        let (w, h, c) = (10usize, 6usize, 2usize);
        let grid = PatchGrid::new(w as u32, h as u32, 5).unwrap();
        // patches match their 5x3 rectangles only after resizing; use patch=rect via smooth field
        let full: Vec<f32> = (0..c * w * h).map(|i| (i % 7) as f32).collect();
        let patches: Vec<Vec<f32>> = grid
            .rects
            .iter()
            .map(|r| {
                let mut p = Vec::new();
                for ch in 0..c {
                    let mut plane = Vec::new();
                    for y in r.y..r.y + r.h {
                        for x in r.x..r.x + r.w {
                            plane.push(full[ch * w * h + y as usize * w + x as usize]);
                        }
                    }
                    p.extend(resize_bilinear_planar(&plane, 1, r.w as usize, r.h as usize, 5, 5));
                }
                p
            })
            .collect();
        let out = stitch_logits(&grid, &patches, c).unwrap();
        assert_eq!(out.len(), full.len());
        assert_eq!(argmax_planar(&out, c, w * h).len(), w * h);
        assert!(stitch_logits(&grid, &patches[..3], c).is_err());
    }

    proptest! {
        #[test]
        fn rects_tile_the_frame(w in 2u32..300, h in 2u32..300) {
            let g = PatchGrid::new(w, h, 8).unwrap();
            let mut cover = vec![0u8; (w * h) as usize];
            for r in &g.rects {
                for y in r.y..r.y + r.h {
                    for x in r.x..r.x + r.w {
                        cover[(y * w + x) as usize] += 1;
                    }
                }
            }
            prop_assert!(cover.iter().all(|&c| c == 1));
        }
    }
}
