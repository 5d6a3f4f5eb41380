//! Minimal raster plots written as PNG files: heatmaps, scatter plots and box plots.
//! There are no text labels; axis ranges go to the accompanying CSV/JSON reports.

use image::{Rgb, RgbImage};

use crate::stats::BoxSummary;

const WHITE: Rgb<u8> = Rgb([255, 255, 255]);
const GREY: Rgb<u8> = Rgb([170, 170, 170]);
const BLACK: Rgb<u8> = Rgb([0, 0, 0]);

/// Blue-white-red ramp for t in [0, 1].
pub fn diverging(t: f64) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0);
    if t < 0.5 {
        let u = t * 2.0;
        [(255.0 * u) as u8, (255.0 * u) as u8, 255]
    } else {
        let u = (1.0 - t) * 2.0;
        [255, (255.0 * u) as u8, (255.0 * u) as u8]
    }
}

/// Square matrix heatmap, values mapped linearly from `[lo, hi]`.
pub fn heatmap(values: &[f64], n: usize, cell: u32, lo: f64, hi: f64) -> RgbImage {
    let side = n as u32 * cell;
    RgbImage::from_fn(side.max(1), side.max(1), |x, y| {
        let (i, j) = ((y / cell) as usize, (x / cell) as usize);
        if i >= n || j >= n {
            return WHITE;
        }
        Rgb(diverging((values[i * n + j] - lo) / (hi - lo)))
    })
}

/// A linear or log10 axis over `[min, max]`.
#[derive(Debug, Clone, Copy)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
    pub log: bool,
}

impl Axis {
    pub fn linear(min: f64, max: f64) -> Axis {
        Axis { min, max, log: false }
    }

    pub fn log(min: f64, max: f64) -> Axis {
        Axis { min, max, log: true }
    }

    fn frac(&self, v: f64) -> f64 {
        if self.log {
            (v.max(1e-300).log10() - self.min.log10()) / (self.max.log10() - self.min.log10())
        } else {
            (v - self.min) / (self.max - self.min)
        }
    }
}

pub struct Canvas {
    pub img: RgbImage,
    margin: u32,
    x: Axis,
    y: Axis,
}

impl Canvas {
    pub fn new(width: u32, height: u32, x: Axis, y: Axis) -> Canvas {
        let mut c = Canvas {
            img: RgbImage::from_pixel(width, height, WHITE),
            margin: 20,
            x,
            y,
        };
        let (w, h, m) = (width as i64, height as i64, c.margin as i64);
        c.segment((m, h - m), (w - m, h - m), BLACK);
        c.segment((m, m), (m, h - m), BLACK);
        c
    }

    fn to_px(&self, x: f64, y: f64) -> (i64, i64) {
        let (w, h, m) = (self.img.width() as f64, self.img.height() as f64, self.margin as f64);
        let px = m + self.x.frac(x) * (w - 2.0 * m);
        let py = h - m - self.y.frac(y) * (h - 2.0 * m);
        (px.round() as i64, py.round() as i64)
    }

    fn put(&mut self, x: i64, y: i64, c: Rgb<u8>) {
        if x >= 0 && y >= 0 && (x as u32) < self.img.width() && (y as u32) < self.img.height() {
            self.img.put_pixel(x as u32, y as u32, c);
        }
    }

    fn segment(&mut self, a: (i64, i64), b: (i64, i64), c: Rgb<u8>) {
        let steps = (b.0 - a.0).abs().max((b.1 - a.1).abs()).max(1);
        for s in 0..=steps {
            let t = s as f64 / steps as f64;
            let x = a.0 as f64 + t * (b.0 - a.0) as f64;
            let y = a.1 as f64 + t * (b.1 - a.1) as f64;
            self.put(x.round() as i64, y.round() as i64, c);
        }
    }

    /// Line between two data points.
    pub fn line(&mut self, a: (f64, f64), b: (f64, f64), color: [u8; 3]) {
        let (pa, pb) = (self.to_px(a.0, a.1), self.to_px(b.0, b.1));
        self.segment(pa, pb, Rgb(color));
    }

    pub fn point(&mut self, x: f64, y: f64, color: [u8; 3]) {
        let (px, py) = self.to_px(x, y);
        for dy in -2..=2 {
            for dx in -2..=2 {
                if dx * dx + dy * dy <= 5 {
                    self.put(px + dx, py + dy, Rgb(color));
                }
            }
        }
    }

    pub fn hline(&mut self, y: f64) {
        let (a, b) = ((self.x.min, y), (self.x.max, y));
        let (pa, pb) = (self.to_px(a.0, a.1), self.to_px(b.0, b.1));
        self.segment(pa, pb, GREY);
    }
}

/// Scatter plot of several colored series.
pub fn scatter(series: &[(&[(f64, f64)], [u8; 3])], x: Axis, y: Axis) -> RgbImage {
    let mut c = Canvas::new(480, 360, x, y);
    for (points, color) in series {
        for &(px, py) in points.iter() {
            c.point(px, py, *color);
        }
    }
    c.img
}

/// Measured-versus-reference scatter with the identity line and a ±`band_pct` band.
pub fn agreement_plot(points: &[(f64, f64)], band_pct: f64) -> RgbImage {
    let lo = points.iter().flat_map(|p| [p.0, p.1]).fold(f64::INFINITY, f64::min);
    let hi = points.iter().flat_map(|p| [p.0, p.1]).fold(f64::NEG_INFINITY, f64::max);
    let pad = ((hi - lo) * 0.05).max(1e-6);
    let axis = Axis::linear(lo - pad, hi + pad);
    let mut c = Canvas::new(400, 400, axis, axis);
    let (a, b) = (axis.min, axis.max);
    c.line((a, a), (b, b), [0, 0, 0]);
    let f = band_pct / 100.0;
    c.line((a, a * (1.0 + f)), (b, b * (1.0 + f)), [170, 170, 170]);
    c.line((a, a * (1.0 - f)), (b, b * (1.0 - f)), [170, 170, 170]);
    for &(x, y) in points {
        c.point(x, y, [0, 90, 200]);
    }
    c.img
}

/// Vertical box plots, one per summary.
pub fn box_plot(groups: &[BoxSummary], y: Axis) -> RgbImage {
    let n = groups.len().max(1) as f64;
    let mut c = Canvas::new(80 * groups.len().max(1) as u32 + 40, 360, Axis::linear(0.0, n), y);
    for (i, g) in groups.iter().enumerate() {
        let x = i as f64 + 0.5;
        let (l, r) = (x - 0.3, x + 0.3);
        let color = [0, 90, 200];
        c.line((x, g.min), (x, g.q1), color);
        c.line((x, g.q3), (x, g.max), color);
        c.line((l, g.q1), (r, g.q1), color);
        c.line((l, g.q3), (r, g.q3), color);
        c.line((l, g.q1), (l, g.q3), color);
        c.line((r, g.q1), (r, g.q3), color);
        c.line((l, g.median), (r, g.median), [200, 30, 30]);
        c.point(x, g.mean, [0, 0, 0]);
    }
    c.img
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plots_have_expected_sizes() {
        let h = heatmap(&[1.0, 0.5, 0.5, 1.0], 2, 10, -1.0, 1.0);
        assert_eq!(h.dimensions(), (20, 20));
        assert_eq!(h.get_pixel(0, 0).0, diverging(1.0));
        let s = scatter(&[(&[(1.0, 0.5), (100.0, 0.9)], [255, 0, 0])], Axis::log(1.0, 1e3), Axis::linear(0.0, 1.0));
        assert_eq!(s.dimensions(), (480, 360));
        assert!(s.pixels().any(|p| p.0 == [255, 0, 0]));
        let a = agreement_plot(&[(10.0, 10.1), (20.0, 19.9)], 1.0);
        assert_eq!(a.width(), 400);
        let b = BoxSummary::from_values(&[0.1, 0.5, 0.9]).unwrap();
        assert_eq!(box_plot(&[b, b], Axis::linear(0.0, 1.0)).width(), 200);
    }
}
