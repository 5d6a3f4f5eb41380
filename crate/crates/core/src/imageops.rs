//! Resampling and color helpers shared by SSIM, augmentation and patching.
//!
//! All resamplers use half-pixel centers: destination pixel `d` maps to source
//! coordinate `(d + 0.5) * src / dst - 0.5`. Equal sizes are an exact identity.

use image::{Rgb32FImage, RgbImage};

/// Nearest-neighbour resize of a single-channel u8 raster.
pub fn resize_nearest_u8(src: &[u8], w: usize, h: usize, nw: usize, nh: usize) -> Vec<u8> {
    if (w, h) == (nw, nh) {
        return src.to_vec();
    }
    let xs: Vec<usize> = (0..nw).map(|x| nearest_index(x, w, nw)).collect();
    let mut out = Vec::with_capacity(nw * nh);
    for y in 0..nh {
        let sy = nearest_index(y, h, nh);
        let row = &src[sy * w..(sy + 1) * w];
        out.extend(xs.iter().map(|&sx| row[sx]));
    }
    out
}

#[inline]
fn nearest_index(d: usize, src: usize, dst: usize) -> usize {
    let s = ((d as f64 + 0.5) * src as f64 / dst as f64).floor() as usize;
    s.min(src - 1)
}

/// Precomputed bilinear taps along one axis.
struct Taps {
    i0: Vec<usize>,
    i1: Vec<usize>,
    t: Vec<f32>,
}

fn bilinear_taps(src: usize, dst: usize) -> Taps {
    let mut taps = Taps {
        i0: Vec::with_capacity(dst),
        i1: Vec::with_capacity(dst),
        t: Vec::with_capacity(dst),
    };
    let scale = src as f64 / dst as f64;
    for d in 0..dst {
        let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(src - 1);
        taps.i0.push(i0);
        taps.i1.push(i1);
        taps.t.push((s - i0 as f64) as f32);
    }
    taps
}

/// Bilinear resize of an interleaved raster with `c` channels.
pub fn resize_bilinear_interleaved(
    src: &[f32],
    c: usize,
    w: usize,
    h: usize,
    nw: usize,
    nh: usize,
) -> Vec<f32> {
    if (w, h) == (nw, nh) {
        return src.to_vec();
    }
    let tx = bilinear_taps(w, nw);
    let ty = bilinear_taps(h, nh);
    let mut out = vec![0f32; nw * nh * c];
    for y in 0..nh {
        let (r0, r1, fy) = (ty.i0[y], ty.i1[y], ty.t[y]);
        for x in 0..nw {
            let (c0, c1, fx) = (tx.i0[x], tx.i1[x], tx.t[x]);
            for ch in 0..c {
                let p00 = src[(r0 * w + c0) * c + ch];
                let p01 = src[(r0 * w + c1) * c + ch];
                let p10 = src[(r1 * w + c0) * c + ch];
                let p11 = src[(r1 * w + c1) * c + ch];
                let top = p00 + (p01 - p00) * fx;
                let bot = p10 + (p11 - p10) * fx;
                out[(y * nw + x) * c + ch] = top + (bot - top) * fy;
            }
        }
    }
    out
}

/// Bilinear resize of a planar (channel-major) raster, e.g. per-class logits.
pub fn resize_bilinear_planar(
    src: &[f32],
    c: usize,
    w: usize,
    h: usize,
    nw: usize,
    nh: usize,
) -> Vec<f32> {
    let mut out = Vec::with_capacity(c * nw * nh);
    for ch in 0..c {
        let plane = &src[ch * w * h..(ch + 1) * w * h];
        out.extend(resize_bilinear_interleaved(plane, 1, w, h, nw, nh));
    }
    out
}

pub fn resize_rgb_f32(img: &Rgb32FImage, nw: u32, nh: u32) -> Rgb32FImage {
    let (w, h) = img.dimensions();
    let data = resize_bilinear_interleaved(img.as_raw(), 3, w as usize, h as usize, nw as usize, nh as usize);
    Rgb32FImage::from_raw(nw, nh, data).expect("buffer size matches dimensions")
}

pub fn to_f32(img: &RgbImage) -> Rgb32FImage {
    let data = img.as_raw().iter().map(|&v| v as f32 / 255.0).collect();
    Rgb32FImage::from_raw(img.width(), img.height(), data).expect("buffer size matches dimensions")
}

pub fn to_u8(img: &Rgb32FImage) -> RgbImage {
    let data = img
        .as_raw()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    RgbImage::from_raw(img.width(), img.height(), data).expect("buffer size matches dimensions")
}

/// ITU-R BT.601 luma on the 0..=255 scale.
pub fn luminance(img: &RgbImage) -> Vec<f32> {
    img.pixels()
        .map(|p| 0.299 * p[0] as f32 + 0.587 * p[1] as f32 + 0.114 * p[2] as f32)
        .collect()
}

/// Row-major argmax over a planar `c`×`n` score field.
pub fn argmax_planar(scores: &[f32], c: usize, n: usize) -> Vec<u8> {
    (0..n)
        .map(|i| {
            let mut best = 0;
            let mut best_v = scores[i];
            for k in 1..c {
                let v = scores[k * n + i];
                if v > best_v {
                    best_v = v;
                    best = k;
                }
            }
            best as u8
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_when_sizes_match() {
        let src: Vec<f32> = (0..30).map(|v| v as f32 * 0.37).collect();
        assert_eq!(resize_bilinear_interleaved(&src, 3, 5, 2, 5, 2), src);
        let m: Vec<u8> = (0..20).map(|v| (v % 7) as u8).collect();
        assert_eq!(resize_nearest_u8(&m, 5, 4, 5, 4), m);
    }

    #[test]
    fn nearest_upsample_then_downsample_is_identity_for_integer_factors() {
        let m: Vec<u8> = (0..12).map(|v| (v % 7) as u8).collect();
        let up = resize_nearest_u8(&m, 4, 3, 12, 6);
        assert_eq!(resize_nearest_u8(&up, 12, 6, 4, 3), m);
    }

    #[test]
    fn bilinear_preserves_constants_and_linear_ramps() {
        let c = vec![0.25f32; 7 * 5];
        assert!(resize_bilinear_interleaved(&c, 1, 7, 5, 13, 9)
            .iter()
            .all(|&v| (v - 0.25).abs() < 1e-7));
        // 2x downsample of a ramp averages neighbours
        let ramp: Vec<f32> = (0..8).map(|v| v as f32).collect();
        let d = resize_bilinear_interleaved(&ramp, 1, 8, 1, 4, 1);
        assert_eq!(d, vec![0.5, 2.5, 4.5, 6.5]);
    }
}
