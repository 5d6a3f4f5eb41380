//! Deterministic transform kernels. Randomness lives in the caller; everything here
//! takes explicit parameters.
//!
//! Images are `Rgb32FImage` in [0, 1]. Geometric resampling maps each output pixel
//! center back into the source; images are sampled bilinearly and masks by nearest
//! neighbour. Source positions outside the frame read black (images) or background
//! (masks).

use image::Rgb32FImage;

use crate::mask::Mask;

/// Exact 90° rotation (counter-clockwise, `k` quarter turns) of an interleaved buffer.
pub fn rot90_buf<T: Copy>(data: &[T], w: usize, h: usize, c: usize, k: u8) -> (Vec<T>, usize, usize) {
    let k = k % 4;
    let (nw, nh) = if k % 2 == 1 { (h, w) } else { (w, h) };
    let mut out = Vec::with_capacity(data.len());
    for y in 0..nh {
        for x in 0..nw {
            let (sx, sy) = match k {
                0 => (x, y),
                1 => (w - 1 - y, x),
                2 => (w - 1 - x, h - 1 - y),
                _ => (y, h - 1 - x),
            };
            let base = (sy * w + sx) * c;
            out.extend_from_slice(&data[base..base + c]);
        }
    }
    (out, nw, nh)
}

pub fn flip_buf<T: Copy>(data: &[T], w: usize, h: usize, c: usize, horizontal: bool, vertical: bool) -> Vec<T> {
    let mut out = Vec::with_capacity(data.len());
    for y in 0..h {
        let sy = if vertical { h - 1 - y } else { y };
        for x in 0..w {
            let sx = if horizontal { w - 1 - x } else { x };
            let base = (sy * w + sx) * c;
            out.extend_from_slice(&data[base..base + c]);
        }
    }
    out
}

pub fn rot90_image(img: &Rgb32FImage, k: u8) -> Rgb32FImage {
    let (d, w, h) = rot90_buf(img.as_raw(), img.width() as usize, img.height() as usize, 3, k);
    Rgb32FImage::from_raw(w as u32, h as u32, d).expect("rotated buffer")
}

pub fn rot90_mask(mask: &Mask, k: u8) -> Mask {
    let (d, w, h) = rot90_buf(mask.labels(), mask.width() as usize, mask.height() as usize, 1, k);
    Mask::from_vec(w as u32, h as u32, d).expect("rotated mask")
}

pub fn flip_image(img: &Rgb32FImage, horizontal: bool, vertical: bool) -> Rgb32FImage {
    let d = flip_buf(img.as_raw(), img.width() as usize, img.height() as usize, 3, horizontal, vertical);
    Rgb32FImage::from_raw(img.width(), img.height(), d).expect("flipped buffer")
}

pub fn flip_mask(mask: &Mask, horizontal: bool, vertical: bool) -> Mask {
    let d = flip_buf(mask.labels(), mask.width() as usize, mask.height() as usize, 1, horizontal, vertical);
    Mask::from_vec(mask.width(), mask.height(), d).expect("flipped mask")
}

/// Resamples `img` through `map`, which sends an output pixel center to a continuous
/// source position (pixel (i, j) covers [i, i+1) × [j, j+1)). Borders reflect (101).
pub fn remap_image(img: &Rgb32FImage, map: impl Fn(f64, f64) -> (f64, f64)) -> Rgb32FImage {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let src = img.as_raw();
    let mut out = vec![0f32; w * h * 3];
    let fetch = |x: i64, y: i64, c: usize| -> f32 { src[(reflect101(y, h as i64) * w + reflect101(x, w as i64)) * 3 + c] };
    for y in 0..h {
        for x in 0..w {
            let (u, v) = map(x as f64 + 0.5, y as f64 + 0.5);
            let (sx, sy) = (u - 0.5, v - 0.5);
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = ((sx - x0) as f32, (sy - y0) as f32);
            let (x0, y0) = (x0 as i64, y0 as i64);
            for c in 0..3 {
                let top = fetch(x0, y0, c) * (1.0 - fx) + fetch(x0 + 1, y0, c) * fx;
                let bot = fetch(x0, y0 + 1, c) * (1.0 - fx) + fetch(x0 + 1, y0 + 1, c) * fx;
                out[(y * w + x) * 3 + c] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    Rgb32FImage::from_raw(w as u32, h as u32, out).expect("remapped buffer")
}

pub fn remap_mask(mask: &Mask, map: impl Fn(f64, f64) -> (f64, f64)) -> Mask {
    let (w, h) = (mask.width() as usize, mask.height() as usize);
    let src = mask.labels();
    let mut out = vec![0u8; w * h];
    for y in 0..h {
        for x in 0..w {
            let (u, v) = map(x as f64 + 0.5, y as f64 + 0.5);
            let (sx, sy) = (reflect101(u.floor() as i64, w as i64), reflect101(v.floor() as i64, h as i64));
            out[y * w + x] = src[sy * w + sx];
        }
    }
    Mask::from_vec(w as u32, h as u32, out).expect("remapped mask")
}

/// Shift/scale/rotate about the image center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineParams {
    /// Shift as a fraction of width / height.
    pub shift_x: f64,
    pub shift_y: f64,
    pub scale: f64,
    pub angle_deg: f64,
}

impl AffineParams {
    /// Destination position of a source point.
    pub fn forward_point(&self, x: f64, y: f64, w: f64, h: f64) -> (f64, f64) {
        let (cx, cy) = (w / 2.0, h / 2.0);
        let (s, c) = self.angle_deg.to_radians().sin_cos();
        let (dx, dy) = (x - cx, y - cy);
        (
            self.scale * (c * dx - s * dy) + cx + self.shift_x * w,
            self.scale * (s * dx + c * dy) + cy + self.shift_y * h,
        )
    }

    /// Source position of a destination point.
    pub fn inverse_point(&self, x: f64, y: f64, w: f64, h: f64) -> (f64, f64) {
        let (cx, cy) = (w / 2.0, h / 2.0);
        let (s, c) = self.angle_deg.to_radians().sin_cos();
        let (dx, dy) = (x - cx - self.shift_x * w, y - cy - self.shift_y * h);
        (
            (c * dx + s * dy) / self.scale + cx,
            (-s * dx + c * dy) / self.scale + cy,
        )
    }
}

pub fn affine_image(img: &Rgb32FImage, p: &AffineParams) -> Rgb32FImage {
    let (w, h) = (img.width() as f64, img.height() as f64);
    remap_image(img, |x, y| p.inverse_point(x, y, w, h))
}

pub fn affine_mask(mask: &Mask, p: &AffineParams) -> Mask {
    let (w, h) = (mask.width() as f64, mask.height() as f64);
    remap_mask(mask, |x, y| p.inverse_point(x, y, w, h))
}

/// Per-axis cell stretch factors for grid distortion (each `1 + d`, d within the limit).
#[derive(Debug, Clone, PartialEq)]
pub struct GridParams {
    pub x_steps: Vec<f64>,
    pub y_steps: Vec<f64>,
}

/// Maps an output coordinate through the piecewise-linear cell stretch of one axis.
fn grid_axis(coord: f64, len: f64, steps: &[f64]) -> f64 {
    let n = steps.len();
    let cell = len / n as f64;
    let i = ((coord / cell).floor() as usize).min(n - 1);
    let start: f64 = steps[..i].iter().map(|s| s * cell).sum();
    start + (coord - i as f64 * cell) * steps[i]
}

pub fn grid_image(img: &Rgb32FImage, g: &GridParams) -> Rgb32FImage {
    let (w, h) = (img.width() as f64, img.height() as f64);
    remap_image(img, |x, y| (grid_axis(x, w, &g.x_steps), grid_axis(y, h, &g.y_steps)))
}

pub fn grid_mask(mask: &Mask, g: &GridParams) -> Mask {
    let (w, h) = (mask.width() as f64, mask.height() as f64);
    remap_mask(mask, |x, y| (grid_axis(x, w, &g.x_steps), grid_axis(y, h, &g.y_steps)))
}

/// `clamp(alpha · v + beta)` per channel value.
pub fn brightness_contrast(img: &Rgb32FImage, alpha: f32, beta: f32) -> Rgb32FImage {
    map_values(img, |v| (alpha * v + beta).clamp(0.0, 1.0))
}

pub fn map_values(img: &Rgb32FImage, f: impl Fn(f32) -> f32) -> Rgb32FImage {
    let data = img.as_raw().iter().map(|&v| f(v)).collect();
    Rgb32FImage::from_raw(img.width(), img.height(), data).expect("same size")
}

pub fn permute_channels(img: &Rgb32FImage, perm: [usize; 3]) -> Rgb32FImage {
    let mut out = img.clone();
    for (o, i) in out.pixels_mut().zip(img.pixels()) {
        o.0 = [i.0[perm[0]], i.0[perm[1]], i.0[perm[2]]];
    }
    out
}

#[inline]
fn reflect101(i: i64, n: i64) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - m;
    }
    m as usize
}

/// Square-kernel convolution with reflect-101 borders, clamped to [0, 1].
pub fn convolve(img: &Rgb32FImage, kernel: &[f32], k: usize) -> Rgb32FImage {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let src = img.as_raw();
    let r = (k / 2) as i64;
    let mut out = vec![0f32; src.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0f32; 3];
            for ky in 0..k as i64 {
                let sy = reflect101(y + ky - r, h);
                for kx in 0..k as i64 {
                    let sx = reflect101(x + kx - r, w);
                    let wgt = kernel[(ky * k as i64 + kx) as usize];
                    let base = (sy * w as usize + sx) * 3;
                    for c in 0..3 {
                        acc[c] += wgt * src[base + c];
                    }
                }
            }
            let base = (y * w + x) as usize * 3;
            for c in 0..3 {
                out[base + c] = acc[c].clamp(0.0, 1.0);
            }
        }
    }
    Rgb32FImage::from_raw(img.width(), img.height(), out).expect("same size")
}

pub fn sharpen(img: &Rgb32FImage, alpha: f32, lightness: f32) -> Rgb32FImage {
    let mut kernel = [-alpha; 9];
    kernel[4] = (1.0 - alpha) + alpha * (8.0 + lightness);
    convolve(img, &kernel, 3)
}

pub fn box_blur(img: &Rgb32FImage, ksize: usize) -> Rgb32FImage {
    let kernel = vec![1.0 / (ksize * ksize) as f32; ksize * ksize];
    convolve(img, &kernel, ksize)
}

/// Adds precomputed per-value noise and clamps.
pub fn add_noise(img: &Rgb32FImage, noise: &[f32]) -> Rgb32FImage {
    let data = img
        .as_raw()
        .iter()
        .zip(noise)
        .map(|(&v, &n)| (v + n).clamp(0.0, 1.0))
        .collect();
    Rgb32FImage::from_raw(img.width(), img.height(), data).expect("same size")
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    fn ramp(w: u32, h: u32) -> Rgb32FImage {
        Rgb32FImage::from_fn(w, h, |x, y| {
            Rgb([x as f32 / w as f32, y as f32 / h as f32, ((x + y) % 5) as f32 / 5.0])
        })
    }

    #[test]
    fn four_quarter_turns_are_identity() {
        let img = ramp(7, 5);
        let mut r = img.clone();
        for _ in 0..4 {
            r = rot90_image(&r, 1);
        }
        assert_eq!(r, img);
        assert_eq!(rot90_image(&img, 1).dimensions(), (5, 7));
        assert_eq!(flip_image(&flip_image(&img, true, true), true, true), img);
    }

    #[test]
    fn identity_affine_and_flat_grid_are_exact() {
        let img = ramp(9, 6);
        let id = AffineParams {
            shift_x: 0.0,
            shift_y: 0.0,
            scale: 1.0,
            angle_deg: 0.0,
        };
        assert_eq!(affine_image(&img, &id), img);
        let flat = GridParams {
            x_steps: vec![1.0; 5],
            y_steps: vec![1.0; 5],
        };
        let g = grid_image(&img, &flat);
        for (a, b) in g.as_raw().iter().zip(img.as_raw()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn affine_inverse_round_trip() {
        let p = AffineParams {
            shift_x: 0.05,
            shift_y: -0.03,
            scale: 1.07,
            angle_deg: 31.0,
        };
        let (x, y) = p.forward_point(3.2, 7.9, 20.0, 16.0);
        let (bx, by) = p.inverse_point(x, y, 20.0, 16.0);
        assert!((bx - 3.2).abs() < 1e-12 && (by - 7.9).abs() < 1e-12);
    }

    #[test]
    fn brightness_on_constant_image() {
        let img = Rgb32FImage::from_pixel(4, 4, Rgb([0.5, 0.5, 0.5]));
        let out = brightness_contrast(&img, 1.0, 0.2);
        assert!(out.as_raw().iter().all(|&v| (v - 0.7).abs() < 1e-6));
        let out = brightness_contrast(&out, 1.0, 0.5);
        assert!(out.as_raw().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn channel_permutation_inverse() {
        let img = ramp(6, 4);
        let p = [2, 0, 1];
        let inv = [1, 2, 0];
        assert_eq!(permute_channels(&permute_channels(&img, p), inv), img);
    }

    #[test]
    fn blur_and_sharpen_keep_constants() {
        let img = Rgb32FImage::from_pixel(6, 6, Rgb([0.3, 0.6, 0.9]));
        for (a, b) in box_blur(&img, 5).as_raw().iter().zip(img.as_raw()) {
            assert!((a - b).abs() < 1e-6);
        }
        // lightness 1 keeps the kernel sum at 1
        for (a, b) in sharpen(&img, 0.4, 1.0).as_raw().iter().zip(img.as_raw()) {
            assert!((a - b).abs() < 1e-5);
        }
        assert_eq!(reflect101(-1, 5), 1);
        assert_eq!(reflect101(5, 5), 3);
    }
}
