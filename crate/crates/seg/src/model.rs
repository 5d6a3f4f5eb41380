//! Segmentation networks.
//!
//! `deeplabv3plus` follows the encoder-decoder layout with atrous spatial pyramid
//! pooling (rates 6, 12, 18 at output stride 16, image pooling branch) over a
//! bottleneck ResNet encoder, and a decoder that fuses stride-4 features reduced to
//! 48 channels. `small_unet` is a three-level U-Net without normalization layers,
//! sized for CPU experiments.

use fractoseg_core::rng::{derive_seed, rng_from, stream};
use fractoseg_core::NUM_CLASSES;
use fractoseg_nn::graph::Conv2d;
use fractoseg_nn::{Graph, ParamId, ParamKind, ParamStore, Tensor, Var};
use image::Rgb32FImage;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::SegError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    #[serde(rename = "deeplabv3plus")]
    DeepLabV3Plus,
    SmallUnet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Encoder {
    Resnet50,
    Tiny,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub architecture: Architecture,
    pub encoder: Encoder,
    pub n_classes: usize,
    /// Load encoder weights from the weight cache before training.
    pub pretrained_encoder: bool,
    /// Side of the square input patches.
    pub input_size: u32,
    /// Width of the first U-Net level.
    pub base_channels: usize,
    /// Per-channel input normalization on the [0, 1] scale.
    pub norm_mean: [f32; 3],
    pub norm_std: [f32; 3],
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            architecture: Architecture::DeepLabV3Plus,
            encoder: Encoder::Resnet50,
            n_classes: NUM_CLASSES,
            pretrained_encoder: false,
            input_size: 512,
            base_channels: 16,
            norm_mean: [0.485, 0.456, 0.406],
            norm_std: [0.229, 0.224, 0.225],
        }
    }
}

impl ModelConfig {
    pub fn small_unet(input_size: u32, base_channels: usize) -> Self {
        ModelConfig {
            architecture: Architecture::SmallUnet,
            encoder: Encoder::Tiny,
            input_size,
            base_channels,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), SegError> {
        if self.n_classes != NUM_CLASSES {
            return Err(SegError::Config(format!("n_classes must be {NUM_CLASSES}, got {}", self.n_classes)));
        }
        let div = match self.architecture {
            Architecture::DeepLabV3Plus => 16,
            Architecture::SmallUnet => 8,
        };
        if self.input_size == 0 || self.input_size % div != 0 {
            return Err(SegError::Config(format!(
                "input_size {} must be a positive multiple of {div}",
                self.input_size
            )));
        }
        if self.base_channels == 0 {
            return Err(SegError::Config("base_channels must be positive".into()));
        }
        if self.norm_std.iter().any(|&s| !(s > 0.0)) {
            return Err(SegError::Config("norm_std must be positive".into()));
        }
        Ok(())
    }
}

/// Convolution with optional bias and batch norm.
#[derive(Debug, Clone)]
struct ConvBn {
    w: ParamId,
    b: Option<ParamId>,
    bn: Option<[ParamId; 4]>,
    cfg: Conv2d,
}

struct Builder<'a, R: Rng> {
    params: &'a mut ParamStore,
    rng: &'a mut R,
}

impl<R: Rng> Builder<'_, R> {
    fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize, cfg: Conv2d, bias: bool, bn: bool) -> ConvBn {
        let w = self.params.kaiming(format!("{name}.weight"), vec![cout, cin, k, k], self.rng);
        let b = bias.then(|| self.params.zeros(format!("{name}.bias"), vec![cout]));
        let bn = bn.then(|| {
            [
                self.params.add(format!("{name}.bn.gamma"), ParamKind::Weight, Tensor::full(vec![cout], 1.0)),
                self.params.add(format!("{name}.bn.beta"), ParamKind::Weight, Tensor::zeros(vec![cout])),
                self.params.add(format!("{name}.bn.running_mean"), ParamKind::Buffer, Tensor::zeros(vec![cout])),
                self.params.add(format!("{name}.bn.running_var"), ParamKind::Buffer, Tensor::full(vec![cout], 1.0)),
            ]
        });
        ConvBn { w, b, bn, cfg }
    }
}

impl ConvBn {
    fn apply(&self, g: &mut Graph, x: Var, relu: bool) -> Var {
        let mut y = g.conv2d(x, self.w, self.b, self.cfg);
        if let Some([gm, bt, rm, rv]) = self.bn {
            y = g.batch_norm(y, gm, bt, rm, rv, 1e-5, 0.1);
        }
        if relu {
            g.relu(y)
        } else {
            y
        }
    }
}

#[derive(Debug, Clone)]
struct Bottleneck {
    c1: ConvBn,
    c2: ConvBn,
    c3: ConvBn,
    down: Option<ConvBn>,
}

impl Bottleneck {
    fn apply(&self, g: &mut Graph, x: Var) -> Var {
        let y = self.c1.apply(g, x, true);
        let y = self.c2.apply(g, y, true);
        let y = self.c3.apply(g, y, false);
        let skip = match &self.down {
            Some(d) => d.apply(g, x, false),
            None => x,
        };
        let s = g.add(y, skip);
        g.relu(s)
    }
}

#[derive(Debug, Clone)]
struct ResNet {
    stem: ConvBn,
    layers: [Vec<Bottleneck>; 4],
    out_channels: usize,
    low_channels: usize,
}

impl ResNet {
    fn build<R: Rng>(b: &mut Builder<R>, encoder: Encoder) -> ResNet {
        let (stem_c, widths, blocks): (usize, [usize; 4], [usize; 4]) = match encoder {
            Encoder::Resnet50 => (64, [64, 128, 256, 512], [3, 4, 6, 3]),
            Encoder::Tiny => (16, [8, 16, 32, 64], [1, 1, 1, 1]),
        };
        let stem = b.conv(
            "encoder.stem",
            3,
            stem_c,
            7,
            Conv2d::same(7).stride(2),
            false,
            true,
        );
        // output stride 16: the last stage keeps resolution and dilates instead
        let strides = [1, 2, 2, 1];
        let dilations = [1, 1, 1, 2];
        let mut cin = stem_c;
        let layers = std::array::from_fn(|li| {
            let (w, cout) = (widths[li], widths[li] * 4);
            (0..blocks[li])
                .map(|bi| {
                    let name = format!("encoder.layer{}.{bi}", li + 1);
                    let s = if bi == 0 { strides[li] } else { 1 };
                    let d = dilations[li];
                    let c2cfg = Conv2d {
                        stride: s,
                        pad: d,
                        dilation: d,
                        groups: 1,
                    };
                    let blk = Bottleneck {
                        c1: b.conv(&format!("{name}.conv1"), cin, w, 1, Conv2d::same(1), false, true),
                        c2: b.conv(&format!("{name}.conv2"), w, w, 3, c2cfg, false, true),
                        c3: b.conv(&format!("{name}.conv3"), w, cout, 1, Conv2d::same(1), false, true),
                        down: (bi == 0 && (s != 1 || cin != cout)).then(|| {
                            b.conv(&format!("{name}.down"), cin, cout, 1, Conv2d::same(1).stride(s), false, true)
                        }),
                    };
                    cin = cout;
                    blk
                })
                .collect()
        });
        ResNet {
            stem,
            layers,
            out_channels: widths[3] * 4,
            low_channels: widths[0] * 4,
        }
    }

    /// Returns (stride-4 features, stride-16 features).
    fn apply(&self, g: &mut Graph, x: Var) -> (Var, Var) {
        let x = self.stem.apply(g, x, true);
        let mut x = g.max_pool(x, 3, 2, 1);
        let mut low = x;
        for (li, layer) in self.layers.iter().enumerate() {
            for blk in layer {
                x = blk.apply(g, x);
            }
            if li == 0 {
                low = x;
            }
        }
        (low, x)
    }
}

#[derive(Debug, Clone)]
struct DeepLab {
    encoder: ResNet,
    aspp: Vec<ConvBn>,
    aspp_pool: ConvBn,
    aspp_proj: ConvBn,
    low_reduce: ConvBn,
    dec1: ConvBn,
    dec2: ConvBn,
    head: ConvBn,
}

impl DeepLab {
    fn build<R: Rng>(b: &mut Builder<R>, encoder: Encoder) -> DeepLab {
        let enc = ResNet::build(b, encoder);
        let (ch, low_ch) = match encoder {
            Encoder::Resnet50 => (256, 48),
            Encoder::Tiny => (32, 8),
        };
        let mut aspp = vec![b.conv("aspp.b0", enc.out_channels, ch, 1, Conv2d::same(1), false, true)];
        for (i, r) in [6, 12, 18].into_iter().enumerate() {
            aspp.push(b.conv(
                &format!("aspp.b{}", i + 1),
                enc.out_channels,
                ch,
                3,
                Conv2d::dilated(3, r),
                false,
                true,
            ));
        }
        DeepLab {
            aspp_pool: b.conv("aspp.pool", enc.out_channels, ch, 1, Conv2d::same(1), false, true),
            aspp_proj: b.conv("aspp.proj", 5 * ch, ch, 1, Conv2d::same(1), false, true),
            low_reduce: b.conv("decoder.low", enc.low_channels, low_ch, 1, Conv2d::same(1), false, true),
            dec1: b.conv("decoder.conv1", ch + low_ch, ch, 3, Conv2d::same(3), false, true),
            dec2: b.conv("decoder.conv2", ch, ch, 3, Conv2d::same(3), false, true),
            head: b.conv("head", ch, NUM_CLASSES, 1, Conv2d::same(1), true, false),
            aspp,
            encoder: enc,
        }
    }

    fn apply(&self, g: &mut Graph, x: Var) -> Var {
        let (_, _, h, w) = g.value(x).dims4();
        let (low, high) = self.encoder.apply(g, x);
        let (_, _, fh, fw) = g.value(high).dims4();
        let mut branches: Vec<Var> = self.aspp.iter().map(|c| c.apply(g, high, true)).collect();
        let pooled = g.global_avg_pool(high);
        let pooled = self.aspp_pool.apply(g, pooled, true);
        branches.push(g.upsample(pooled, fh, fw));
        let cat = g.concat(&branches);
        let a = self.aspp_proj.apply(g, cat, true);
        let (_, _, lh, lw) = g.value(low).dims4();
        let a = g.upsample(a, lh, lw);
        let l = self.low_reduce.apply(g, low, true);
        let cat = g.concat(&[a, l]);
        let d = self.dec1.apply(g, cat, true);
        let d = self.dec2.apply(g, d, true);
        let z = self.head.apply(g, d, false);
        g.upsample(z, h, w)
    }
}

#[derive(Debug, Clone)]
struct SmallUnet {
    enc: Vec<[ConvBn; 2]>,
    bottom: [ConvBn; 2],
    dec: Vec<[ConvBn; 2]>,
    head: ConvBn,
}

impl SmallUnet {
    const LEVELS: usize = 3;

    fn build<R: Rng>(b: &mut Builder<R>, base: usize) -> SmallUnet {
        let mut pair = |name: &str, cin: usize, cout: usize| {
            [
                b.conv(&format!("{name}.conv1"), cin, cout, 3, Conv2d::same(3), true, false),
                b.conv(&format!("{name}.conv2"), cout, cout, 3, Conv2d::same(3), true, false),
            ]
        };
        let widths: Vec<usize> = (0..=Self::LEVELS).map(|l| base << l).collect();
        let mut enc = Vec::new();
        let mut cin = 3;
        for (l, &w) in widths.iter().enumerate().take(Self::LEVELS) {
            enc.push(pair(&format!("unet.enc{l}"), cin, w));
            cin = w;
        }
        let bottom = pair("unet.bottom", cin, widths[Self::LEVELS]);
        let mut dec = Vec::new();
        for l in (0..Self::LEVELS).rev() {
            dec.push(pair(&format!("unet.dec{l}"), widths[l + 1] + widths[l], widths[l]));
        }
        let head = b.conv("unet.head", widths[0], NUM_CLASSES, 1, Conv2d::same(1), true, false);
        SmallUnet { enc, bottom, dec, head }
    }

    fn apply(&self, g: &mut Graph, x: Var) -> Var {
        let mut skips = Vec::new();
        let mut x = x;
        for [c1, c2] in &self.enc {
            x = c1.apply(g, x, true);
            x = c2.apply(g, x, true);
            skips.push(x);
            x = g.max_pool(x, 2, 2, 0);
        }
        x = self.bottom[0].apply(g, x, true);
        x = self.bottom[1].apply(g, x, true);
        for ([c1, c2], skip) in self.dec.iter().zip(skips.iter().rev()) {
            let (_, _, h, w) = g.value(*skip).dims4();
            let up = g.upsample(x, h, w);
            let cat = g.concat(&[up, *skip]);
            x = c1.apply(g, cat, true);
            x = c2.apply(g, x, true);
        }
        self.head.apply(g, x, false)
    }
}

#[derive(Debug, Clone)]
enum Net {
    DeepLab(Box<DeepLab>),
    Unet(SmallUnet),
}

/// A network with its weights.
#[derive(Debug, Clone)]
pub struct SegModel {
    pub config: ModelConfig,
    pub params: ParamStore,
    net: Net,
}

impl SegModel {
    /// Builds a model with weights initialized from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<SegModel, SegError> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut rng = rng_from(derive_seed(seed, &[stream::INIT]));
        let mut b = Builder {
            params: &mut params,
            rng: &mut rng,
        };
        let net = match config.architecture {
            Architecture::DeepLabV3Plus => Net::DeepLab(Box::new(DeepLab::build(&mut b, config.encoder))),
            Architecture::SmallUnet => Net::Unet(SmallUnet::build(&mut b, config.base_channels)),
        };
        Ok(SegModel { config, params, net })
    }

    /// Records a forward pass; returns N×7×H×W logits.
    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        match &self.net {
            Net::DeepLab(d) => d.apply(g, x),
            Net::Unet(u) => u.apply(g, x),
        }
    }

    /// Stacks images into a normalized NCHW batch.
    pub fn batch(&self, images: &[&Rgb32FImage]) -> Result<Tensor, SegError> {
        let Some(first) = images.first() else {
            return Err(SegError::Shape("empty batch".into()));
        };
        let (w, h) = first.dimensions();
        let hw = (w * h) as usize;
        let mut data = vec![0f32; images.len() * 3 * hw];
        for (s, img) in images.iter().enumerate() {
            if img.dimensions() != (w, h) {
                return Err(SegError::Shape(format!("{:?} vs {:?} in one batch", img.dimensions(), (w, h))));
            }
            for (i, p) in img.pixels().enumerate() {
                for c in 0..3 {
                    data[(s * 3 + c) * hw + i] = (p.0[c] - self.config.norm_mean[c]) / self.config.norm_std[c];
                }
            }
        }
        Ok(Tensor::new(vec![images.len(), 3, h as usize, w as usize], data))
    }

    /// Forward pass without gradient bookkeeping. `batch_stats` makes batch norm use
    /// batch statistics (its running averages are left untouched).
    pub fn logits(&self, images: &[&Rgb32FImage], batch_stats: bool) -> Result<Tensor, SegError> {
        let x = self.batch(images)?;
        let mut g = Graph::new(&self.params, batch_stats);
        let xi = g.input(x);
        let z = self.forward(&mut g, xi);
        Ok(g.value(z).clone())
    }

    /// Copies encoder weights (names starting with `encoder.`) from another store.
    /// Returns how many tensors were copied.
    pub fn load_encoder(&mut self, source: &ParamStore) -> Result<usize, SegError> {
        let mut n = 0;
        for id in source.ids() {
            let name = source.name(id);
            if name.starts_with("encoder.") {
                self.params
                    .set_by_name(name, source.get(id).clone())
                    .map_err(|e| SegError::Checkpoint(e.to_string()))?;
                n += 1;
            }
        }
        if n == 0 {
            return Err(SegError::Checkpoint("no encoder weights in source".into()));
        }
        Ok(n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;
    use rand::SeedableRng;

    fn noise_images(n: usize, side: u32, seed: u64) -> Vec<Rgb32FImage> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Rgb32FImage::from_fn(side, side, |_, _| Rgb([rng.gen(), rng.gen(), rng.gen()])))
            .collect()
    }

    #[test]
    fn output_shapes() {
        let imgs = noise_images(2, 32, 0);
        let refs: Vec<&Rgb32FImage> = imgs.iter().collect();
        let unet = SegModel::new(ModelConfig::small_unet(32, 4), 1).unwrap();
        assert_eq!(unet.logits(&refs, false).unwrap().shape, vec![2, 7, 32, 32]);
        let tiny = SegModel::new(
            ModelConfig {
                encoder: Encoder::Tiny,
                input_size: 32,
                ..Default::default()
            },
            1,
        )
        .unwrap();
        let z = tiny.logits(&refs, true).unwrap();
        assert_eq!(z.shape, vec![2, 7, 32, 32]);
        assert!(z.data.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn resnet50_layout() {
        let m = SegModel::new(
            ModelConfig {
                input_size: 64,
                ..Default::default()
            },
            0,
        )
        .unwrap();
        // DeepLabv3+ with a ResNet50 encoder has roughly 40M weights
        let n = m.params.n_trainable();
        assert!((38_000_000..42_000_000).contains(&n), "{n}");
        let enc: usize = m
            .params
            .ids()
            .filter(|&id| m.params.name(id).starts_with("encoder.") && m.params.kind(id) == ParamKind::Weight)
            .map(|id| m.params.get(id).len())
            .sum();
        // ResNet50 without its classifier: 23.5M
        assert!((23_400_000..23_600_000).contains(&enc), "{enc}");
        let imgs = noise_images(1, 64, 3);
        let z = m.logits(&[&imgs[0]], false).unwrap();
        assert_eq!(z.shape, vec![1, 7, 64, 64]);
    }

    #[test]
    fn eval_forward_is_batch_independent_and_deterministic() {
        let imgs = noise_images(3, 32, 5);
        let m = SegModel::new(
            ModelConfig {
                encoder: Encoder::Tiny,
                input_size: 32,
                ..Default::default()
            },
            2,
        )
        .unwrap();
        let a = m.logits(&[&imgs[0], &imgs[1], &imgs[2]], false).unwrap();
        let b = m.logits(&[&imgs[2], &imgs[0], &imgs[1]], false).unwrap();
        let per = 7 * 32 * 32;
        assert_eq!(&a.data[..per], &b.data[per..2 * per]);
        assert_eq!(&a.data[2 * per..], &b.data[..per]);
        assert_eq!(a, m.logits(&[&imgs[0], &imgs[1], &imgs[2]], false).unwrap());
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig {
            n_classes: 5,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(ModelConfig::small_unet(30, 8).validate().is_err());
        let text = serde_json::to_string(&ModelConfig::default()).unwrap();
        assert!(text.contains("\"deeplabv3plus\""));
    }

    #[test]
    fn encoder_transfer() {
        let cfg = ModelConfig {
            encoder: Encoder::Tiny,
            input_size: 32,
            ..Default::default()
        };
        let src = SegModel::new(cfg.clone(), 10).unwrap();
        let mut dst = SegModel::new(cfg, 11).unwrap();
        let n = dst.load_encoder(&src.params).unwrap();
        assert!(n > 10);
        let id = dst.params.find("encoder.stem.weight").unwrap();
        assert_eq!(dst.params.get(id), src.params.get(src.params.find("encoder.stem.weight").unwrap()));
        let head = dst.params.find("head.weight").unwrap();
        assert_ne!(dst.params.get(head), src.params.get(src.params.find("head.weight").unwrap()));
    }
}
