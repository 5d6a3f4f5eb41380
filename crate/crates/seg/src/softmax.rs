//! Class probabilities and confidence-gated pseudo-labels.

use fractoseg_nn::Tensor;

use crate::SegError;

/// Channel-wise softmax of NCHW logits, stabilized by subtracting the per-pixel max.
pub fn softmax(z: &Tensor) -> Result<Tensor, SegError> {
    let (n, c, h, w) = z.dims4();
    let hw = h * w;
    let mut out = vec![0f32; z.len()];
    let mut buf = vec![0f64; c];
    for s in 0..n {
        let base = s * c * hw;
        for i in 0..hw {
            let at = |k: usize| base + k * hw + i;
            let mut m = f64::NEG_INFINITY;
            for k in 0..c {
                let v = z.data[at(k)] as f64;
                if !v.is_finite() {
                    return Err(SegError::NonFinite);
                }
                m = m.max(v);
            }
            let mut sum = 0.0;
            for (k, b) in buf.iter_mut().enumerate() {
                *b = (z.data[at(k)] as f64 - m).exp();
                sum += *b;
            }
            for (k, b) in buf.iter().enumerate() {
                out[at(k)] = (b / sum) as f32;
            }
        }
    }
    Ok(Tensor::new(z.shape.clone(), out))
}

/// Per-image pseudo-labels derived from one view's logits.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabel {
    pub width: usize,
    pub height: usize,
    /// Argmax class per pixel.
    pub labels: Vec<u8>,
    /// Max softmax probability per pixel.
    pub confidence: Vec<f32>,
    /// `confidence >= tau`.
    pub valid: Vec<bool>,
    /// Argmin class per pixel, the target of the negative-learning term.
    pub least_likely: Vec<u8>,
}

impl PseudoLabel {
    pub fn n_valid(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

/// Splits a batch of logits into per-image pseudo-labels gated at `tau`.
pub fn pseudo_label(z: &Tensor, tau: f64) -> Result<Vec<PseudoLabel>, SegError> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(SegError::InvalidThreshold(tau));
    }
    let p = softmax(z)?;
    let (n, c, h, w) = z.dims4();
    let hw = h * w;
    Ok((0..n)
        .map(|s| {
            let base = s * c * hw;
            let mut pl = PseudoLabel {
                width: w,
                height: h,
                labels: vec![0; hw],
                confidence: vec![0.0; hw],
                valid: vec![false; hw],
                least_likely: vec![0; hw],
            };
            for i in 0..hw {
                let (mut best, mut worst) = (0, 0);
                for k in 1..c {
                    let v = z.data[base + k * hw + i];
                    if v > z.data[base + best * hw + i] {
                        best = k;
                    }
                    if v < z.data[base + worst * hw + i] {
                        worst = k;
                    }
                }
                let conf = p.data[base + best * hw + i];
                pl.labels[i] = best as u8;
                pl.least_likely[i] = worst as u8;
                pl.confidence[i] = conf;
                pl.valid[i] = conf as f64 >= tau;
            }
            pl
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pixel(z: &[f32]) -> Tensor {
        Tensor::new(vec![1, z.len(), 1, 1], z.to_vec())
    }

    #[test]
    fn uniform_logits() {
        let p = softmax(&pixel(&[0.3; 7])).unwrap();
        for v in &p.data {
            assert!((*v as f64 - 1.0 / 7.0).abs() < 1e-7);
        }
        let pl = pseudo_label(&pixel(&[0.0; 7]), 0.8).unwrap();
        assert_eq!(pl[0].n_valid(), 0);
    }

    #[test]
    fn single_gap_matches_f64_oracle() {
        let p = softmax(&pixel(&[2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0])).unwrap();
        let e2 = 2f64.exp();
        let oracle = e2 / (e2 + 6.0);
        assert!((p.data[0] as f64 - oracle).abs() < 1e-7, "{} vs {oracle}", p.data[0]);
        assert!((p.data[0] - 0.551_872_816).abs() < 1e-6);
    }

    #[test]
    fn threshold_edges() {
        // p0 = q with the rest shared equally: z0 = ln(6q/(1-q)), others 0
        let logits_for = |q: f64| {
            let mut z = [0f32; 7];
            z[0] = (6.0 * q / (1.0 - q)).ln() as f32;
            z
        };
        let below = pseudo_label(&pixel(&logits_for(0.79)), 0.8).unwrap();
        assert!(!below[0].valid[0]);
        assert!((below[0].confidence[0] - 0.79).abs() < 1e-6);
        let above = pseudo_label(&pixel(&logits_for(0.81)), 0.8).unwrap();
        assert!(above[0].valid[0]);
        assert_eq!(above[0].labels[0], 0);
    }

    #[test]
    fn confident_logits_all_valid() {
        let mut data = vec![0f32; 7 * 4];
        for i in 0..4 {
            data[(i % 7) * 4 + i] = 30.0;
        }
        let pl = pseudo_label(&Tensor::new(vec![1, 7, 2, 2], data), 0.8).unwrap();
        assert_eq!(pl[0].n_valid(), 4);
        assert_eq!(pl[0].labels, vec![0, 1, 2, 3]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(softmax(&pixel(&[f32::NAN; 7])), Err(SegError::NonFinite)));
        assert!(matches!(pseudo_label(&pixel(&[0.0; 7]), 1.5), Err(SegError::InvalidThreshold(_))));
    }

    proptest! {
        #[test]
        fn softmax_properties(z in prop::collection::vec(-20f32..20.0, 7), shift in -50f32..50.0) {
            let p = softmax(&pixel(&z)).unwrap();
            let sum: f64 = p.data.iter().map(|&v| v as f64).sum();
            prop_assert!((sum - 1.0).abs() < 1e-6);
            prop_assert!(p.data.iter().all(|&v| v >= 0.0));
            let shifted: Vec<f32> = z.iter().map(|v| v + shift).collect();
            let q = softmax(&pixel(&shifted)).unwrap();
            for (a, b) in p.data.iter().zip(&q.data) {
                prop_assert!((a - b).abs() < 1e-5);
            }
            let pl = pseudo_label(&pixel(&z), 0.5).unwrap();
            let amax = (0..7).fold(0, |b, k| if p.data[k] > p.data[b] { k } else { b });
            prop_assert_eq!(p.data[pl[0].labels[0] as usize], p.data[amax]);
        }

        #[test]
        fn valid_set_shrinks_with_tau(z in prop::collection::vec(-4f32..4.0, 7 * 9), t1 in 0f64..1.0, t2 in 0f64..1.0) {
            let t = Tensor::new(vec![1, 7, 3, 3], z);
            let all = pseudo_label(&t, 0.0).unwrap();
            prop_assert_eq!(all[0].n_valid(), 9);
            let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
            let a = pseudo_label(&t, lo).unwrap();
            let b = pseudo_label(&t, hi).unwrap();
            for i in 0..9 {
                prop_assert!(!b[0].valid[i] || a[0].valid[i]);
                prop_assert!(!a[0].valid[i] || a[0].confidence[i] as f64 >= lo);
            }
        }
    }
}
