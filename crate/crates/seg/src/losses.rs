//! Supervised and consistency losses with analytic logit gradients.
//!
//! Per-image functions take planar logits `z[k * n + i]` (class `k`, pixel `i`)
//! in f64. Batch functions take NCHW f32 tensors and return gradients of the same
//! layout, ready for `Graph::backward`.

use fractoseg_core::Mask;
use fractoseg_nn::Tensor;
use serde::{Deserialize, Serialize};

use crate::softmax::PseudoLabel;
use crate::SegError;

/// Smoothing added to the Dice numerator and denominator.
pub const DICE_EPS: f64 = 1e-6;

/// A scalar loss with its gradient with respect to the logits.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub value: f64,
    pub grad: Vec<f64>,
}

fn check(z: &[f64], c: usize, n: usize) -> Result<(), SegError> {
    if c == 0 || z.len() != c * n {
        return Err(SegError::Shape(format!("{} logits for {c} classes × {n} pixels", z.len())));
    }
    Ok(())
}

fn labels_len(labels: &[u8], n: usize, c: usize) -> Result<(), SegError> {
    if labels.len() != n {
        return Err(SegError::Shape(format!("{} labels for {n} pixels", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= c) {
        return Err(SegError::Shape(format!("label {bad} outside {c} classes")));
    }
    Ok(())
}

/// Planar softmax in f64.
pub fn softmax_planar(z: &[f64], c: usize) -> Vec<f64> {
    let n = z.len() / c;
    let mut p = vec![0.0; z.len()];
    for i in 0..n {
        let m = (0..c).map(|k| z[k * n + i]).fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for k in 0..c {
            let e = (z[k * n + i] - m).exp();
            p[k * n + i] = e;
            s += e;
        }
        for k in 0..c {
            p[k * n + i] /= s;
        }
    }
    p
}

/// Pulls a gradient with respect to probabilities back through the softmax.
fn softmax_backward(p: &[f64], gp: &[f64], c: usize) -> Vec<f64> {
    let n = p.len() / c;
    let mut gz = vec![0.0; p.len()];
    for i in 0..n {
        let dot: f64 = (0..c).map(|k| p[k * n + i] * gp[k * n + i]).sum();
        for k in 0..c {
            gz[k * n + i] = p[k * n + i] * (gp[k * n + i] - dot);
        }
    }
    gz
}

/// Sum of −log softmax at `target` over selected pixels, its logit gradient, and
/// the number of selected pixels.
fn ce_sum(z: &[f64], p: &[f64], c: usize, target: &[u8], sel: Option<&[bool]>) -> (f64, Vec<f64>, usize) {
    let n = target.len();
    let mut sum = 0.0;
    let mut g = vec![0.0; z.len()];
    let mut count = 0;
    for i in 0..n {
        if sel.is_some_and(|s| !s[i]) {
            continue;
        }
        count += 1;
        let t = target[i] as usize;
        let m = (0..c).map(|k| z[k * n + i]).fold(f64::NEG_INFINITY, f64::max);
        let lse = m + (0..c).map(|k| (z[k * n + i] - m).exp()).sum::<f64>().ln();
        sum += lse - z[t * n + i];
        for k in 0..c {
            g[k * n + i] = p[k * n + i] - if k == t { 1.0 } else { 0.0 };
        }
    }
    (sum, g, count)
}

/// Mean over pixels of −log softmax(z) at the true class.
pub fn cross_entropy(z: &[f64], c: usize, labels: &[u8]) -> Result<LossGrad, SegError> {
    let n = labels.len();
    check(z, c, n)?;
    labels_len(labels, n, c)?;
    let p = softmax_planar(z, c);
    let (sum, mut grad, count) = ce_sum(z, &p, c, labels, None);
    let scale = 1.0 / count.max(1) as f64;
    grad.iter_mut().for_each(|g| *g *= scale);
    Ok(LossGrad {
        value: sum * scale,
        grad,
    })
}

/// `1 − mean_k D_k` with `D_k = (2Σ p·t + ε) / (Σ t² + Σ p² + ε)` over the
/// selected pixels, averaged over all `c` classes. Returns the loss and its
/// gradient with respect to `pred`.
pub fn dice_loss_with_grad(pred: &[f64], truth: &[f64], c: usize, eps: f64, sel: Option<&[bool]>) -> (f64, Vec<f64>) {
    let n = pred.len() / c;
    let mut grad = vec![0.0; pred.len()];
    let mut mean_d = 0.0;
    for k in 0..c {
        let (mut inter, mut denom) = (0.0, 0.0);
        for i in 0..n {
            if sel.is_some_and(|s| !s[i]) {
                continue;
            }
            let (p, t) = (pred[k * n + i], truth[k * n + i]);
            inter += p * t;
            denom += t * t + p * p;
        }
        let num = 2.0 * inter + eps;
        let den = denom + eps;
        mean_d += num / den;
        for i in 0..n {
            if sel.is_some_and(|s| !s[i]) {
                continue;
            }
            let (p, t) = (pred[k * n + i], truth[k * n + i]);
            let d = (2.0 * t * den - num * 2.0 * p) / (den * den);
            grad[k * n + i] = -d / c as f64;
        }
    }
    (1.0 - mean_d / c as f64, grad)
}

/// Dice loss between a probability field and a (one-hot) truth field, both planar.
pub fn dice_loss(pred: &[f64], truth: &[f64], c: usize, eps: f64) -> Result<f64, SegError> {
    if pred.len() != truth.len() || c == 0 || pred.len() % c != 0 {
        return Err(SegError::Shape(format!("{} predictions vs {} truths", pred.len(), truth.len())));
    }
    Ok(dice_loss_with_grad(pred, truth, c, eps, None).0)
}

pub fn one_hot(labels: &[u8], c: usize) -> Vec<f64> {
    let n = labels.len();
    let mut t = vec![0.0; c * n];
    for (i, &l) in labels.iter().enumerate() {
        t[l as usize * n + i] = 1.0;
    }
    t
}

/// Dice loss on softmax(z) against labels, with the gradient taken to the logits.
pub fn dice_loss_logits(z: &[f64], c: usize, labels: &[u8], sel: Option<&[bool]>) -> Result<LossGrad, SegError> {
    let n = labels.len();
    check(z, c, n)?;
    labels_len(labels, n, c)?;
    let p = softmax_planar(z, c);
    let (value, gp) = dice_loss_with_grad(&p, &one_hot(labels, c), c, DICE_EPS, sel);
    Ok(LossGrad {
        value,
        grad: softmax_backward(&p, &gp, c),
    })
}

/// Mean over selected pixels of −log(1 − softmax(z)_k) where `k = least[i]`.
///
/// Evaluated as `lse(z) − lse(z without k)`, so it stays finite as p_k → 1 only
/// as long as the other logits are finite.
pub fn negative_learning(z: &[f64], c: usize, least: &[u8], sel: Option<&[bool]>) -> Result<LossGrad, SegError> {
    let n = least.len();
    check(z, c, n)?;
    labels_len(least, n, c)?;
    if c < 2 {
        return Err(SegError::Shape("negative learning needs two classes".into()));
    }
    let (sum, mut grad, count) = nl_sum(z, c, least, sel);
    let scale = 1.0 / count.max(1) as f64;
    grad.iter_mut().for_each(|g| *g *= scale);
    Ok(LossGrad {
        value: sum * scale,
        grad,
    })
}

fn nl_sum(z: &[f64], c: usize, least: &[u8], sel: Option<&[bool]>) -> (f64, Vec<f64>, usize) {
    let n = least.len();
    let mut grad = vec![0.0; z.len()];
    let mut sum = 0.0;
    let mut count = 0;
    let mut all = vec![0.0; c];
    for i in 0..n {
        if sel.is_some_and(|s| !s[i]) {
            continue;
        }
        count += 1;
        let k = least[i] as usize;
        let m = (0..c).map(|j| z[j * n + i]).fold(f64::NEG_INFINITY, f64::max);
        let mut s_all = 0.0;
        for (j, a) in all.iter_mut().enumerate() {
            *a = (z[j * n + i] - m).exp();
            s_all += *a;
        }
        let s_rest = s_all - all[k];
        // recompute the rest directly when cancellation would lose precision
        let s_rest = if s_rest < 1e-3 * s_all {
            let m2 = (0..c).filter(|&j| j != k).map(|j| z[j * n + i]).fold(f64::NEG_INFINITY, f64::max);
            let r: f64 = (0..c).filter(|&j| j != k).map(|j| (z[j * n + i] - m2).exp()).sum();
            r * (m2 - m).exp()
        } else {
            s_rest
        };
        sum += s_all.ln() - s_rest.ln();
        for j in 0..c {
            let p = all[j] / s_all;
            let q = if j == k { 0.0 } else { all[j] / s_rest };
            grad[j * n + i] = p - q;
        }
    }
    (sum, grad, count)
}

fn to_f64(t: &[f32]) -> Vec<f64> {
    t.iter().map(|&v| v as f64).collect()
}

/// Components of the supervised loss, averaged over the batch.
#[derive(Debug, Clone, PartialEq)]
pub struct SupervisedLoss {
    pub ce: f64,
    pub dice: f64,
    pub total: f64,
    /// d total / d logits, NCHW.
    pub grad: Vec<f32>,
}

/// CE + Dice loss per image, averaged over the batch.
pub fn supervised_loss(z: &Tensor, masks: &[&Mask]) -> Result<SupervisedLoss, SegError> {
    let (b, c, h, w) = z.dims4();
    if masks.len() != b {
        return Err(SegError::Shape(format!("{b} logit maps vs {} masks", masks.len())));
    }
    let per = c * h * w;
    let (mut ce, mut dice) = (0.0, 0.0);
    let mut grad = vec![0f32; z.len()];
    for (s, m) in masks.iter().enumerate() {
        if m.dimensions() != (w as u32, h as u32) {
            return Err(SegError::Shape(format!("mask {:?} vs logits {w}x{h}", m.dimensions())));
        }
        let zi = to_f64(&z.data[s * per..(s + 1) * per]);
        let a = cross_entropy(&zi, c, m.labels())?;
        let d = dice_loss_logits(&zi, c, m.labels(), None)?;
        ce += a.value;
        dice += d.value;
        for (j, g) in grad[s * per..(s + 1) * per].iter_mut().enumerate() {
            *g = ((a.grad[j] + d.grad[j]) / b as f64) as f32;
        }
    }
    let (ce, dice) = (ce / b as f64, dice / b as f64);
    Ok(SupervisedLoss {
        ce,
        dice,
        total: ce + dice,
        grad,
    })
}

/// Relative weights of the three unsupervised terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UnsupervisedWeights {
    pub ce: f64,
    pub dice: f64,
    pub negative: f64,
}

impl Default for UnsupervisedWeights {
    fn default() -> Self {
        UnsupervisedWeights {
            ce: 1.0,
            dice: 1.0,
            negative: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyLoss {
    pub ce: f64,
    pub dice: f64,
    pub negative: f64,
    /// Weighted sum of the three terms.
    pub total: f64,
    pub n_valid: usize,
    pub n_pixels: usize,
    /// d total / d z_strong, NCHW.
    pub grad: Vec<f32>,
}

impl ConsistencyLoss {
    pub fn valid_fraction(&self) -> f64 {
        if self.n_pixels == 0 {
            0.0
        } else {
            self.n_valid as f64 / self.n_pixels as f64
        }
    }
}

/// Weak-to-strong consistency on strong-view logits against pseudo-labels from
/// the weak view. CE and negative-learning terms are means over every valid pixel
/// in the batch; the Dice term is computed per image on its valid pixels and
/// averaged over images that have any. No valid pixel gives exactly zero.
pub fn consistency_loss(
    pseudo: &[PseudoLabel],
    z_strong: &Tensor,
    weights: UnsupervisedWeights,
) -> Result<ConsistencyLoss, SegError> {
    let (b, c, h, w) = z_strong.dims4();
    if pseudo.len() != b {
        return Err(SegError::Shape(format!("{} pseudo-labels for batch {b}", pseudo.len())));
    }
    let per = c * h * w;
    let mut out = ConsistencyLoss {
        ce: 0.0,
        dice: 0.0,
        negative: 0.0,
        total: 0.0,
        n_valid: 0,
        n_pixels: b * h * w,
        grad: vec![0.0; z_strong.len()],
    };
    for pl in pseudo {
        if (pl.width, pl.height) != (w, h) {
            return Err(SegError::Shape(format!("pseudo-label {}x{} vs logits {w}x{h}", pl.width, pl.height)));
        }
        out.n_valid += pl.n_valid();
    }
    if out.n_valid == 0 {
        return Ok(out);
    }
    let images_with_valid = pseudo.iter().filter(|p| p.n_valid() > 0).count() as f64;
    let nv = out.n_valid as f64;
    let mut g = vec![0.0f64; z_strong.len()];
    for (s, pl) in pseudo.iter().enumerate() {
        if pl.n_valid() == 0 {
            continue;
        }
        let zi = to_f64(&z_strong.data[s * per..(s + 1) * per]);
        let p = softmax_planar(&zi, c);
        let sel = Some(pl.valid.as_slice());
        let gs = &mut g[s * per..(s + 1) * per];

        let (ce, ce_g, _) = ce_sum(&zi, &p, c, &pl.labels, sel);
        out.ce += ce / nv;
        let (nl, nl_g, _) = nl_sum(&zi, c, &pl.least_likely, sel);
        out.negative += nl / nv;
        let (d, dp) = dice_loss_with_grad(&p, &one_hot(&pl.labels, c), c, DICE_EPS, sel);
        out.dice += d / images_with_valid;
        let d_g = softmax_backward(&p, &dp, c);

        for j in 0..per {
            gs[j] = weights.ce * ce_g[j] / nv + weights.negative * nl_g[j] / nv + weights.dice * d_g[j] / images_with_valid;
        }
    }
    out.total = weights.ce * out.ce + weights.dice * out.dice + weights.negative * out.negative;
    out.grad = g.into_iter().map(|v| v as f32).collect();
    Ok(out)
}

/// Gaussian ramp-up of the consistency weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RampSchedule {
    pub lambda_max: f64,
    pub ramp_epochs: f64,
}

impl Default for RampSchedule {
    fn default() -> Self {
        RampSchedule {
            lambda_max: 1.0,
            ramp_epochs: 200.0,
        }
    }
}

/// `λ_max · exp(−5 (1 − min(epoch / ramp_epochs, 1))²)`.
pub fn lambda_at(epoch: f64, schedule: &RampSchedule) -> f64 {
    if schedule.ramp_epochs <= 0.0 {
        return schedule.lambda_max;
    }
    let t = (epoch.max(0.0) / schedule.ramp_epochs).min(1.0);
    schedule.lambda_max * (-5.0 * (1.0 - t) * (1.0 - t)).exp()
}

/// Loss components reported per step and epoch.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBundle {
    pub total: f64,
    pub supervised: f64,
    pub unsupervised: f64,
    pub lambda: f64,
    pub valid_fraction: f64,
}

impl LossBundle {
    pub fn new(supervised: f64, unsupervised: f64, lambda: f64, valid_fraction: f64) -> Self {
        LossBundle {
            total: supervised + lambda * unsupervised,
            supervised,
            unsupervised,
            lambda,
            valid_fraction,
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.total, self.supervised, self.unsupervised, self.lambda, self.valid_fraction]
            .iter()
            .all(|v| v.is_finite())
    }
}
