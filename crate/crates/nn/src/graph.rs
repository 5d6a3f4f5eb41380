//! Forward recording and reverse-mode differentiation.

use crate::gemm::gemm;
use crate::params::{GradStore, ParamId, ParamStore};
use crate::tensor::Tensor;

/// Handle to a node of one [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2d {
    pub stride: usize,
    pub pad: usize,
    pub dilation: usize,
    pub groups: usize,
}

impl Conv2d {
    pub fn same(k: usize) -> Conv2d {
        Conv2d {
            stride: 1,
            pad: k / 2,
            dilation: 1,
            groups: 1,
        }
    }

    pub fn stride(mut self, s: usize) -> Self {
        self.stride = s;
        self
    }

    pub fn pad(mut self, p: usize) -> Self {
        self.pad = p;
        self
    }

    /// Dilated kernel with "same" padding for odd size `k`.
    pub fn dilated(k: usize, d: usize) -> Conv2d {
        Conv2d {
            stride: 1,
            pad: d * (k / 2),
            dilation: d,
            groups: 1,
        }
    }

    fn out_size(&self, n: usize, k: usize) -> usize {
        (n + 2 * self.pad - self.dilation * (k - 1) - 1) / self.stride + 1
    }
}

enum Op {
    Input,
    Conv {
        x: Var,
        w: ParamId,
        b: Option<ParamId>,
        cfg: Conv2d,
    },
    BatchNorm {
        x: Var,
        gamma: ParamId,
        beta: ParamId,
        mean: Vec<f32>,
        invstd: Vec<f32>,
        batch_stats: bool,
    },
    Relu(Var),
    Add(Var, Var),
    Concat(Vec<Var>),
    MaxPool {
        x: Var,
        argmax: Vec<u32>,
    },
    GlobalAvgPool(Var),
    Upsample(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// One forward pass. `train` selects batch statistics in batch norm and records
/// running-statistic updates, to be applied with [`Graph::bn_updates`].
pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    train: bool,
    bn_updates: Vec<(ParamId, Vec<f32>)>,
}

/// Precomputed 1-D bilinear taps, half-pixel centers, clamped at borders.
fn taps(src: usize, dst: usize) -> Vec<(usize, usize, f32)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|d| {
            let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let i0 = s.floor() as usize;
            (i0, (i0 + 1).min(src - 1), (s - i0 as f64) as f32)
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn im2col(x: &[f32], h: usize, w: usize, cin: usize, kh: usize, kw: usize, cfg: Conv2d, ho: usize, wo: usize, cols: &mut [f32]) {
    let (s, p, d) = (cfg.stride as isize, cfg.pad as isize, cfg.dilation as isize);
    for c in 0..cin {
        let plane = &x[c * h * w..(c + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = ((c * kh + ky) * kw + kx) * ho * wo;
                let off_x = kx as isize * d - p;
                // valid ox: 0 <= ox*s + off_x < w
                let lo = if off_x < 0 { ((-off_x + s - 1) / s) as usize } else { 0 };
                let hi = if (w as isize) > off_x {
                    (((w as isize - off_x + s - 1) / s) as usize).min(wo)
                } else {
                    0
                };
                for oy in 0..ho {
                    let dst = &mut cols[row + oy * wo..row + (oy + 1) * wo];
                    let iy = oy as isize * s + ky as isize * d - p;
                    if iy < 0 || iy >= h as isize || lo >= hi {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    dst[..lo].fill(0.0);
                    dst[hi..].fill(0.0);
                    if s == 1 {
                        let start = (lo as isize + off_x) as usize;
                        dst[lo..hi].copy_from_slice(&src[start..start + hi - lo]);
                    } else {
                        for ox in lo..hi {
                            dst[ox] = src[(ox as isize * s + off_x) as usize];
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn col2im(cols: &[f32], h: usize, w: usize, cin: usize, kh: usize, kw: usize, cfg: Conv2d, ho: usize, wo: usize, dx: &mut [f32]) {
    let (s, p, d) = (cfg.stride as isize, cfg.pad as isize, cfg.dilation as isize);
    for c in 0..cin {
        let plane = &mut dx[c * h * w..(c + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = ((c * kh + ky) * kw + kx) * ho * wo;
                let off_x = kx as isize * d - p;
                let lo = if off_x < 0 { ((-off_x + s - 1) / s) as usize } else { 0 };
                let hi = if (w as isize) > off_x {
                    (((w as isize - off_x + s - 1) / s) as usize).min(wo)
                } else {
                    0
                };
                for oy in 0..ho {
                    let iy = oy as isize * s + ky as isize * d - p;
                    if iy < 0 || iy >= h as isize || lo >= hi {
                        continue;
                    }
                    let src = &cols[row + oy * wo..row + (oy + 1) * wo];
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in lo..hi {
                        dst[(ox as isize * s + off_x) as usize] += src[ox];
                    }
                }
            }
        }
    }
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore, train: bool) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
            train,
            bn_updates: Vec::new(),
        }
    }

    pub fn is_train(&self) -> bool {
        self.train
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Running-statistic replacements recorded by training-mode batch norm.
    pub fn bn_updates(self) -> Vec<(ParamId, Vec<f32>)> {
        self.bn_updates
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        assert_eq!(t.shape.len(), 4, "inputs are NCHW");
        self.push(t, Op::Input, false)
    }

    pub fn conv2d(&mut self, x: Var, w: ParamId, b: Option<ParamId>, cfg: Conv2d) -> Var {
        let (n, cin, h, wd) = self.value(x).dims4();
        let wt = self.params.get(w);
        let (cout, cin_g, kh, kw) = (wt.shape[0], wt.shape[1], wt.shape[2], wt.shape[3]);
        let g = cfg.groups;
        assert_eq!(cin_g * g, cin, "conv input channels");
        assert_eq!(cout % g, 0, "conv output channels vs groups");
        let (ho, wo) = (cfg.out_size(h, kh), cfg.out_size(wd, kw));
        let cout_g = cout / g;
        let k = cin_g * kh * kw;
        let hw = ho * wo;
        let pointwise = kh == 1 && kw == 1 && cfg.stride == 1 && cfg.pad == 0;
        let mut out = vec![0f32; n * cout * hw];
        let mut cols = if pointwise { Vec::new() } else { vec![0f32; k * hw] };
        let xv = &self.nodes[x.0].value.data;
        for s in 0..n {
            for gi in 0..g {
                let xs = &xv[(s * cin + gi * cin_g) * h * wd..(s * cin + (gi + 1) * cin_g) * h * wd];
                let colref: &[f32] = if pointwise {
                    xs
                } else {
                    im2col(xs, h, wd, cin_g, kh, kw, cfg, ho, wo, &mut cols);
                    &cols
                };
                let wg = &wt.data[gi * cout_g * k..(gi + 1) * cout_g * k];
                let ys = &mut out[(s * cout + gi * cout_g) * hw..(s * cout + (gi + 1) * cout_g) * hw];
                gemm(cout_g, k, hw, wg, false, colref, false, ys, 0.0);
            }
            if let Some(b) = b {
                let bias = &self.params.get(b).data;
                for (c, &bv) in bias.iter().enumerate() {
                    out[(s * cout + c) * hw..(s * cout + c + 1) * hw].iter_mut().for_each(|v| *v += bv);
                }
            }
        }
        self.push(Tensor::new(vec![n, cout, ho, wo], out), Op::Conv { x, w, b, cfg }, true)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: ParamId,
        beta: ParamId,
        running_mean: ParamId,
        running_var: ParamId,
        eps: f32,
        momentum: f32,
    ) -> Var {
        let (n, c, h, w) = self.value(x).dims4();
        let hw = h * w;
        let m = (n * hw) as f64;
        let xv = &self.nodes[x.0].value.data;
        let batch_stats = self.train && n * hw > 1;
        let (mean, var): (Vec<f32>, Vec<f32>) = if batch_stats {
            let mut mean = vec![0f32; c];
            let mut var = vec![0f32; c];
            for ch in 0..c {
                let (mut s1, mut s2) = (0f64, 0f64);
                for s in 0..n {
                    for &v in &xv[(s * c + ch) * hw..(s * c + ch + 1) * hw] {
                        s1 += v as f64;
                        s2 += (v as f64) * (v as f64);
                    }
                }
                let mu = s1 / m;
                mean[ch] = mu as f32;
                var[ch] = (s2 / m - mu * mu).max(0.0) as f32;
            }
            let rm = &self.params.get(running_mean).data;
            let rv = &self.params.get(running_var).data;
            let unbias = (m / (m - 1.0)) as f32;
            let new_m = (0..c).map(|i| (1.0 - momentum) * rm[i] + momentum * mean[i]).collect();
            let new_v = (0..c).map(|i| (1.0 - momentum) * rv[i] + momentum * var[i] * unbias).collect();
            self.bn_updates.push((running_mean, new_m));
            self.bn_updates.push((running_var, new_v));
            (mean, var)
        } else {
            (
                self.params.get(running_mean).data.clone(),
                self.params.get(running_var).data.clone(),
            )
        };
        let invstd: Vec<f32> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let gv = &self.params.get(gamma).data;
        let bv = &self.params.get(beta).data;
        let xv = &self.nodes[x.0].value.data;
        let mut out = vec![0f32; xv.len()];
        for s in 0..n {
            for ch in 0..c {
                let (scale, shift) = (gv[ch] * invstd[ch], bv[ch] - gv[ch] * invstd[ch] * mean[ch]);
                let r = (s * c + ch) * hw..(s * c + ch + 1) * hw;
                for (o, &v) in out[r.clone()].iter_mut().zip(&xv[r]) {
                    *o = v * scale + shift;
                }
            }
        }
        let op = Op::BatchNorm {
            x,
            gamma,
            beta,
            mean,
            invstd,
            batch_stats,
        };
        self.push(Tensor::new(vec![n, c, h, w], out), op, true)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let out = Tensor::new(t.shape.clone(), t.data.iter().map(|v| v.max(0.0)).collect());
        let rg = self.rg(x);
        self.push(out, Op::Relu(x), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape, tb.shape, "add shapes");
        let out = Tensor::new(ta.shape.clone(), ta.data.iter().zip(&tb.data).map(|(x, y)| x + y).collect());
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Add(a, b), rg)
    }

    /// Concatenation along channels.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let (n, _, h, w) = self.value(parts[0]).dims4();
        let cs: Vec<usize> = parts
            .iter()
            .map(|&p| {
                let (pn, pc, ph, pw) = self.value(p).dims4();
                assert_eq!((pn, ph, pw), (n, h, w), "concat shapes");
                pc
            })
            .collect();
        let ctot: usize = cs.iter().sum();
        let hw = h * w;
        let mut out = Vec::with_capacity(n * ctot * hw);
        for s in 0..n {
            for (&p, &c) in parts.iter().zip(&cs) {
                out.extend_from_slice(&self.value(p).data[s * c * hw..(s + 1) * c * hw]);
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(Tensor::new(vec![n, ctot, h, w], out), Op::Concat(parts.to_vec()), rg)
    }

    pub fn max_pool(&mut self, x: Var, k: usize, stride: usize, pad: usize) -> Var {
        let (n, c, h, w) = self.value(x).dims4();
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (w + 2 * pad - k) / stride + 1;
        let xv = &self.value(x).data;
        let mut out = vec![f32::NEG_INFINITY; n * c * ho * wo];
        let mut argmax = vec![0u32; out.len()];
        for plane in 0..n * c {
            let src = &xv[plane * h * w..(plane + 1) * h * w];
            for oy in 0..ho {
                for ox in 0..wo {
                    let o = plane * ho * wo + oy * wo + ox;
                    for ky in 0..k {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let i = iy as usize * w + ix as usize;
                            if src[i] > out[o] {
                                out[o] = src[i];
                                argmax[o] = i as u32;
                            }
                        }
                    }
                }
            }
        }
        let rg = self.rg(x);
        self.push(Tensor::new(vec![n, c, ho, wo], out), Op::MaxPool { x, argmax }, rg)
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let (n, c, h, w) = self.value(x).dims4();
        let hw = h * w;
        let xv = &self.value(x).data;
        let out = (0..n * c)
            .map(|p| xv[p * hw..(p + 1) * hw].iter().sum::<f32>() / hw as f32)
            .collect();
        let rg = self.rg(x);
        self.push(Tensor::new(vec![n, c, 1, 1], out), Op::GlobalAvgPool(x), rg)
    }

    /// Bilinear resize with half-pixel centers.
    pub fn upsample(&mut self, x: Var, oh: usize, ow: usize) -> Var {
        let (n, c, h, w) = self.value(x).dims4();
        if (h, w) == (oh, ow) {
            return x;
        }
        let (ty, tx) = (taps(h, oh), taps(w, ow));
        let xv = &self.value(x).data;
        let mut out = vec![0f32; n * c * oh * ow];
        for p in 0..n * c {
            let src = &xv[p * h * w..(p + 1) * h * w];
            let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
            for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                    let top = src[y0 * w + x0] + (src[y0 * w + x1] - src[y0 * w + x0]) * fx;
                    let bot = src[y1 * w + x0] + (src[y1 * w + x1] - src[y1 * w + x0]) * fx;
                    dst[oy * ow + ox] = top + (bot - top) * fy;
                }
            }
        }
        let rg = self.rg(x);
        self.push(Tensor::new(vec![n, c, oh, ow], out), Op::Upsample(x), rg)
    }

    /// Back-propagates the given output gradients and accumulates parameter
    /// gradients into `grads`.
    pub fn backward(&self, roots: &[(Var, &[f32])], grads: &mut GradStore) {
        let mut g: Vec<Option<Vec<f32>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut top = 0;
        for &(v, dv) in roots {
            assert_eq!(dv.len(), self.value(v).len(), "root gradient size");
            add_into(&mut g[v.0], dv);
            top = top.max(v.0);
        }
        for i in (0..=top).rev() {
            let Some(dy) = g[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Input => {}
                Op::Relu(x) => {
                    if self.rg(*x) {
                        let y = &node.value.data;
                        let dx: Vec<f32> = dy.iter().zip(y).map(|(d, &v)| if v > 0.0 { *d } else { 0.0 }).collect();
                        add_owned(&mut g[x.0], dx);
                    }
                }
                Op::Add(a, b) => {
                    if self.rg(*a) {
                        add_into(&mut g[a.0], &dy);
                    }
                    if self.rg(*b) {
                        add_into(&mut g[b.0], &dy);
                    }
                }
                Op::Concat(parts) => {
                    let (n, ctot, h, w) = node.value.dims4();
                    let hw = h * w;
                    let mut off = 0;
                    for &p in parts {
                        let c = self.value(p).shape[1];
                        if self.rg(p) {
                            let mut dp = Vec::with_capacity(n * c * hw);
                            for s in 0..n {
                                dp.extend_from_slice(&dy[(s * ctot + off) * hw..(s * ctot + off + c) * hw]);
                            }
                            add_owned(&mut g[p.0], dp);
                        }
                        off += c;
                    }
                }
                Op::MaxPool { x, argmax } => {
                    if self.rg(*x) {
                        let (n, c, h, w) = self.value(*x).dims4();
                        let (_, _, ho, wo) = node.value.dims4();
                        let mut dx = vec![0f32; n * c * h * w];
                        for p in 0..n * c {
                            for o in 0..ho * wo {
                                let j = p * ho * wo + o;
                                dx[p * h * w + argmax[j] as usize] += dy[j];
                            }
                        }
                        add_owned(&mut g[x.0], dx);
                    }
                }
                Op::GlobalAvgPool(x) => {
                    if self.rg(*x) {
                        let (n, c, h, w) = self.value(*x).dims4();
                        let hw = h * w;
                        let mut dx = vec![0f32; n * c * hw];
                        for p in 0..n * c {
                            let v = dy[p] / hw as f32;
                            dx[p * hw..(p + 1) * hw].fill(v);
                        }
                        add_owned(&mut g[x.0], dx);
                    }
                }
                Op::Upsample(x) => {
                    if self.rg(*x) {
                        let (n, c, h, w) = self.value(*x).dims4();
                        let (_, _, oh, ow) = node.value.dims4();
                        let (ty, tx) = (taps(h, oh), taps(w, ow));
                        let mut dx = vec![0f32; n * c * h * w];
                        for p in 0..n * c {
                            let src = &dy[p * oh * ow..(p + 1) * oh * ow];
                            let dst = &mut dx[p * h * w..(p + 1) * h * w];
                            for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                                for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                                    let d = src[oy * ow + ox];
                                    dst[y0 * w + x0] += d * (1.0 - fx) * (1.0 - fy);
                                    dst[y0 * w + x1] += d * fx * (1.0 - fy);
                                    dst[y1 * w + x0] += d * (1.0 - fx) * fy;
                                    dst[y1 * w + x1] += d * fx * fy;
                                }
                            }
                        }
                        add_owned(&mut g[x.0], dx);
                    }
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    mean,
                    invstd,
                    batch_stats,
                } => {
                    let (n, c, h, w) = node.value.dims4();
                    let hw = h * w;
                    let xv = &self.value(*x).data;
                    let gv = &self.params.get(*gamma).data;
                    let mut dgamma = vec![0f32; c];
                    let mut dbeta = vec![0f32; c];
                    for ch in 0..c {
                        let (mut sg, mut sb) = (0f64, 0f64);
                        for s in 0..n {
                            let r = (s * c + ch) * hw..(s * c + ch + 1) * hw;
                            for (&d, &v) in dy[r.clone()].iter().zip(&xv[r]) {
                                sb += d as f64;
                                sg += (d * (v - mean[ch]) * invstd[ch]) as f64;
                            }
                        }
                        dgamma[ch] = sg as f32;
                        dbeta[ch] = sb as f32;
                    }
                    if self.rg(*x) {
                        let m = (n * hw) as f32;
                        let mut dx = vec![0f32; xv.len()];
                        for ch in 0..c {
                            let k = gv[ch] * invstd[ch];
                            let (mdb, mdg) = (dbeta[ch] / m, dgamma[ch] / m);
                            for s in 0..n {
                                let r = (s * c + ch) * hw..(s * c + ch + 1) * hw;
                                for ((o, &d), &v) in dx[r.clone()].iter_mut().zip(&dy[r.clone()]).zip(&xv[r]) {
                                    *o = if *batch_stats {
                                        let xh = (v - mean[ch]) * invstd[ch];
                                        k * (d - mdb - xh * mdg)
                                    } else {
                                        k * d
                                    };
                                }
                            }
                        }
                        add_owned(&mut g[x.0], dx);
                    }
                    grads.accumulate(*gamma, &dgamma);
                    grads.accumulate(*beta, &dbeta);
                }
                Op::Conv { x, w, b, cfg } => {
                    let (n, cin, h, wd) = self.value(*x).dims4();
                    let wt = self.params.get(*w);
                    let (cout, cin_g, kh, kw) = (wt.shape[0], wt.shape[1], wt.shape[2], wt.shape[3]);
                    let (_, _, ho, wo) = node.value.dims4();
                    let gr = cfg.groups;
                    let cout_g = cout / gr;
                    let k = cin_g * kh * kw;
                    let hw = ho * wo;
                    let pointwise = kh == 1 && kw == 1 && cfg.stride == 1 && cfg.pad == 0;
                    let need_dx = self.rg(*x);
                    let xv = &self.value(*x).data;
                    let mut cols = if pointwise { Vec::new() } else { vec![0f32; k * hw] };
                    let mut dcols = if pointwise || !need_dx { Vec::new() } else { vec![0f32; k * hw] };
                    let mut dx = if need_dx { vec![0f32; xv.len()] } else { Vec::new() };
                    let dw = grads.slot(*w, wt.len());
                    for s in 0..n {
                        for gi in 0..gr {
                            let xr = (s * cin + gi * cin_g) * h * wd..(s * cin + (gi + 1) * cin_g) * h * wd;
                            let xs = &xv[xr.clone()];
                            let colref: &[f32] = if pointwise {
                                xs
                            } else {
                                im2col(xs, h, wd, cin_g, kh, kw, *cfg, ho, wo, &mut cols);
                                &cols
                            };
                            let dys = &dy[(s * cout + gi * cout_g) * hw..(s * cout + (gi + 1) * cout_g) * hw];
                            let dwg = &mut dw[gi * cout_g * k..(gi + 1) * cout_g * k];
                            gemm(cout_g, hw, k, dys, false, colref, true, dwg, 1.0);
                            if need_dx {
                                let wg = &wt.data[gi * cout_g * k..(gi + 1) * cout_g * k];
                                if pointwise {
                                    gemm(k, cout_g, hw, wg, true, dys, false, &mut dx[xr], 1.0);
                                } else {
                                    gemm(k, cout_g, hw, wg, true, dys, false, &mut dcols, 0.0);
                                    col2im(&dcols, h, wd, cin_g, kh, kw, *cfg, ho, wo, &mut dx[xr]);
                                }
                            }
                        }
                    }
                    if let Some(b) = b {
                        let mut db = vec![0f32; cout];
                        for s in 0..n {
                            for (c, acc) in db.iter_mut().enumerate() {
                                *acc += dy[(s * cout + c) * hw..(s * cout + c + 1) * hw].iter().sum::<f32>();
                            }
                        }
                        grads.accumulate(*b, &db);
                    }
                    if need_dx {
                        add_owned(&mut g[x.0], dx);
                    }
                }
            }
        }
    }
}

fn add_into(slot: &mut Option<Vec<f32>>, d: &[f32]) {
    match slot {
        Some(acc) => acc.iter_mut().zip(d).for_each(|(a, b)| *a += b),
        None => *slot = Some(d.to_vec()),
    }
}

fn add_owned(slot: &mut Option<Vec<f32>>, d: Vec<f32>) {
    match slot {
        Some(acc) => acc.iter_mut().zip(&d).for_each(|(a, b)| *a += b),
        None => *slot = Some(d),
    }
}

impl ParamStore {
    /// Applies running-statistic updates collected from a training graph.
    pub fn apply_updates(&mut self, updates: Vec<(ParamId, Vec<f32>)>) {
        for (id, v) in updates {
            self.get_mut(id).data = v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamKind;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    /// Direct nested-loop convolution.
    fn naive_conv(x: &Tensor, w: &Tensor, b: Option<&[f32]>, cfg: Conv2d) -> Tensor {
        let (n, cin, h, wd) = x.dims4();
        let (cout, cin_g, kh, kw) = (w.shape[0], w.shape[1], w.shape[2], w.shape[3]);
        let ho = (h + 2 * cfg.pad - cfg.dilation * (kh - 1) - 1) / cfg.stride + 1;
        let wo = (wd + 2 * cfg.pad - cfg.dilation * (kw - 1) - 1) / cfg.stride + 1;
        let cout_g = cout / cfg.groups;
        let mut out = vec![0f32; n * cout * ho * wo];
        for s in 0..n {
            for co in 0..cout {
                let gi = co / cout_g;
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = b.map_or(0.0, |b| b[co]);
                        for ci in 0..cin_g {
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let iy = (oy * cfg.stride + ky * cfg.dilation) as isize - cfg.pad as isize;
                                    let ix = (ox * cfg.stride + kx * cfg.dilation) as isize - cfg.pad as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                        continue;
                                    }
                                    let xv = x.data[((s * cin + gi * cin_g + ci) * h + iy as usize) * wd + ix as usize];
                                    acc += xv * w.data[((co * cin_g + ci) * kh + ky) * kw + kx];
                                }
                            }
                        }
                        out[((s * cout + co) * ho + oy) * wo + ox] = acc;
                    }
                }
            }
        }
        Tensor::new(vec![n, cout, ho, wo], out)
    }

    #[test]
    fn conv_matches_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cases = [
            (Conv2d::same(3), 4, 6, 3),
            (Conv2d::same(3).stride(2), 4, 6, 3),
            (Conv2d::dilated(3, 2), 4, 6, 3),
            (Conv2d::same(1), 4, 6, 1),
            (Conv2d::same(1).stride(2), 4, 6, 1),
            (
                Conv2d {
                    stride: 2,
                    pad: 3,
                    dilation: 1,
                    groups: 1,
                },
                3,
                5,
                7,
            ),
            (
                Conv2d {
                    groups: 2,
                    ..Conv2d::same(3)
                },
                4,
                6,
                3,
            ),
        ];
        for (cfg, cin, cout, k) in cases {
            let x = rand_tensor(vec![2, cin, 9, 7], &mut rng);
            let mut p = ParamStore::new();
            let wt = rand_tensor(vec![cout, cin / cfg.groups, k, k], &mut rng);
            let bt = rand_tensor(vec![cout], &mut rng);
            let w = p.add("w", ParamKind::Weight, wt.clone());
            let b = p.add("b", ParamKind::Weight, bt.clone());
            let mut gph = Graph::new(&p, true);
            let xi = gph.input(x.clone());
            let y = gph.conv2d(xi, w, Some(b), cfg);
            let expected = naive_conv(&x, &wt, Some(&bt.data), cfg);
            assert_eq!(gph.value(y).shape, expected.shape, "{cfg:?}");
            for (a, e) in gph.value(y).data.iter().zip(&expected.data) {
                assert!((a - e).abs() < 1e-4, "{cfg:?}");
            }
        }
    }

    /// Builds `sum(r * f(x))` for a fixed random `r` and compares analytic
    /// gradients of the input and every weight against central differences.
    fn check_grads(build: impl Fn(&mut Graph, Var) -> Var, params: &mut ParamStore, xshape: Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let x = rand_tensor(xshape, &mut rng);
        let out_len = {
            let mut g = Graph::new(params, true);
            let xi = g.input(x.clone());
            let y = build(&mut g, xi);
            g.value(y).len()
        };
        let r: Vec<f32> = (0..out_len).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let loss = |params: &ParamStore, x: &Tensor| -> f64 {
            let mut g = Graph::new(params, true);
            let xi = g.input(x.clone());
            let y = build(&mut g, xi);
            g.value(y).data.iter().zip(&r).map(|(a, b)| (*a as f64) * (*b as f64)).sum()
        };
        // inputs carry no gradient; callers route them through an identity conv
        let mut grads = GradStore::new();
        {
            let mut g = Graph::new(params, true);
            let xi = g.input(x.clone());
            let y = build(&mut g, xi);
            g.backward(&[(y, &r)], &mut grads);
        }
        let eps = 1e-2f32;
        let ids: Vec<ParamId> = params.ids().filter(|&id| params.kind(id) == ParamKind::Weight).collect();
        for id in ids {
            let analytic = grads.get(id).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; params.get(id).len()]);
            for i in 0..params.get(id).len() {
                let orig = params.get(id).data[i];
                params.get_mut(id).data[i] = orig + eps;
                let lp = loss(params, &x);
                params.get_mut(id).data[i] = orig - eps;
                let lm = loss(params, &x);
                params.get_mut(id).data[i] = orig;
                let num = (lp - lm) / (2.0 * eps as f64);
                let a = analytic[i] as f64;
                let tol = 2e-2 * (1.0 + num.abs().max(a.abs()));
                assert!((a - num).abs() < tol, "{} [{i}]: analytic {a} numeric {num}", params.name(id));
            }
        }
    }

    /// Identity 1x1 conv in front of the op so input gradients flow into a weight.
    fn front(p: &mut ParamStore, c: usize) -> ParamId {
        let mut eye = vec![0f32; c * c];
        for i in 0..c {
            eye[i * c + i] = 1.0;
        }
        p.add("front", ParamKind::Weight, Tensor::new(vec![c, c, 1, 1], eye))
    }

    #[test]
    fn conv_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for cfg in [
            Conv2d::same(3),
            Conv2d::same(3).stride(2),
            Conv2d::dilated(3, 2),
            Conv2d {
                groups: 2,
                ..Conv2d::same(3)
            },
        ] {
            let mut p = ParamStore::new();
            let f = front(&mut p, 4);
            let w = p.add("w", ParamKind::Weight, rand_tensor(vec![4, 4 / cfg.groups, 3, 3], &mut rng));
            let b = p.add("b", ParamKind::Weight, rand_tensor(vec![4], &mut rng));
            check_grads(
                move |g, x| {
                    let x = g.conv2d(x, f, None, Conv2d::same(1));
                    g.conv2d(x, w, Some(b), cfg)
                },
                &mut p,
                vec![2, 4, 6, 5],
            );
        }
    }

    #[test]
    fn batch_norm_gradients_train_and_eval() {
        for train_stats in [true, false] {
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            let mut p = ParamStore::new();
            let f = front(&mut p, 3);
            let gm = p.add("gamma", ParamKind::Weight, rand_tensor(vec![3], &mut rng));
            let bt = p.add("beta", ParamKind::Weight, rand_tensor(vec![3], &mut rng));
            let rm = p.add("rm", ParamKind::Buffer, Tensor::full(vec![3], 0.1));
            let rv = p.add("rv", ParamKind::Buffer, Tensor::full(vec![3], 0.8));
            let mut rng2 = ChaCha8Rng::seed_from_u64(9);
            let post = p.add("post", ParamKind::Weight, rand_tensor(vec![3, 3, 3, 3], &mut rng2));
            let mut store = p;
            let build = move |g: &mut Graph, x: Var| {
                let x = g.conv2d(x, f, None, Conv2d::same(1));
                let y = g.batch_norm(x, gm, bt, rm, rv, 1e-5, 0.1);
                let y = g.relu(y);
                g.conv2d(y, post, None, Conv2d::same(3))
            };
            if train_stats {
                check_grads(build, &mut store, vec![3, 3, 4, 4]);
            } else {
                // eval mode: wrap in a non-training graph
                let mut rng = ChaCha8Rng::seed_from_u64(5);
                let x = rand_tensor(vec![2, 3, 4, 4], &mut rng);
                let mut grads = GradStore::new();
                let mut g = Graph::new(&store, false);
                let xi = g.input(x.clone());
                let y = build(&mut g, xi);
                let ones = vec![1f32; g.value(y).len()];
                g.backward(&[(y, &ones)], &mut grads);
                assert!(g.bn_updates().is_empty());
                let eps = 1e-2;
                let loss = |s: &ParamStore| -> f64 {
                    let mut g = Graph::new(s, false);
                    let xi = g.input(x.clone());
                    let y = build(&mut g, xi);
                    g.value(y).data.iter().map(|&v| v as f64).sum()
                };
                let orig = store.get(gm).data[1];
                store.get_mut(gm).data[1] = orig + eps;
                let lp = loss(&store);
                store.get_mut(gm).data[1] = orig - eps;
                let lm = loss(&store);
                store.get_mut(gm).data[1] = orig;
                let num = (lp - lm) / (2.0 * eps as f64);
                let a = grads.get(gm).unwrap()[1] as f64;
                assert!((a - num).abs() < 2e-2 * (1.0 + num.abs()));
            }
        }
    }

    #[test]
    fn pooling_upsample_concat_add_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = ParamStore::new();
        let f = front(&mut p, 2);
        let w = p.add("w", ParamKind::Weight, rand_tensor(vec![2, 4, 3, 3], &mut rng));
        check_grads(
            move |g, x| {
                let x = g.conv2d(x, f, None, Conv2d::same(1));
                let a = g.max_pool(x, 3, 2, 1);
                let a = g.upsample(a, 7, 6);
                let s = g.global_avg_pool(x);
                let s = g.upsample(s, 7, 6);
                let s = g.add(s, x);
                let c = g.concat(&[a, s]);
                let c = g.relu(c);
                g.conv2d(c, w, None, Conv2d::same(3))
            },
            &mut p,
            vec![2, 2, 7, 6],
        );
    }

    #[test]
    fn running_stats_update() {
        let mut p = ParamStore::new();
        let gm = p.add("g", ParamKind::Weight, Tensor::full(vec![1], 1.0));
        let bt = p.add("b", ParamKind::Weight, Tensor::full(vec![1], 0.0));
        let rm = p.add("rm", ParamKind::Buffer, Tensor::full(vec![1], 0.0));
        let rv = p.add("rv", ParamKind::Buffer, Tensor::full(vec![1], 1.0));
        let mut g = Graph::new(&p, true);
        let x = g.input(Tensor::new(vec![1, 1, 1, 4], vec![1.0, 2.0, 3.0, 4.0]));
        let y = g.batch_norm(x, gm, bt, rm, rv, 0.0, 0.1);
        let m: f32 = g.value(y).data.iter().sum();
        assert!(m.abs() < 1e-5);
        let updates = g.bn_updates();
        p.apply_updates(updates);
        assert!((p.get(rm).data[0] - 0.25).abs() < 1e-6);
        // unbiased batch var 5/3
        assert!((p.get(rv).data[0] - (0.9 + 0.1 * 5.0 / 3.0)).abs() < 1e-6);
    }
}
