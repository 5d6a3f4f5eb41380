//! Supervised and semi-supervised training loops.
//!
//! Images are sliced 2×2 into patches once; augmentation is drawn per patch and
//! per pass. The labeled and unlabeled streams are independent permutations keyed
//! by `(seed, stream, pass)`, so the labeled batches at step `s` do not depend on
//! the mode or on the unlabeled pool.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use fractoseg_core::augment::{apply_strong, apply_weak, builtin_strategy, AugmentedSample, StrategyConfig};
use fractoseg_core::metrics::ClassIoUReport;
use fractoseg_core::patching::{slice_image, slice_mask};
use fractoseg_core::rng::{derive_seed, hash_id, rng_from, stream};
use fractoseg_core::{Mask, NUM_CLASSES};
use fractoseg_nn::{Adam, AdamConfig, GradStore, Graph};
use image::Rgb32FImage;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_params, Checkpoint};
use crate::infer::{evaluate, EvalSummary};
use crate::losses::{consistency_loss, dice_loss_logits, lambda_at, supervised_loss, LossBundle, RampSchedule, UnsupervisedWeights};
use crate::model::{ModelConfig, SegModel};
use crate::softmax::pseudo_label;
use crate::SegError;

/// Environment variable naming the directory that holds pretrained encoder weights.
pub const CACHE_ENV: &str = "FRACTOSEG_CACHE";

#[derive(Debug, Clone)]
pub struct LabeledSample {
    pub id: String,
    pub image: Rgb32FImage,
    pub mask: Mask,
}

#[derive(Debug, Clone)]
pub struct UnlabeledSample {
    pub id: String,
    pub image: Rgb32FImage,
}

#[derive(Debug, Clone, Default)]
pub struct TrainData {
    pub labeled: Vec<LabeledSample>,
    pub unlabeled: Vec<UnlabeledSample>,
    pub val: Vec<LabeledSample>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Supervised,
    SemiSupervised,
}

/// A builtin strategy name or a full pipeline definition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StrategyRef {
    Named(String),
    Custom(StrategyConfig),
}

impl StrategyRef {
    pub fn resolve(&self) -> Result<StrategyConfig, SegError> {
        let s = match self {
            StrategyRef::Named(n) => builtin_strategy(n)?,
            StrategyRef::Custom(c) => c.clone(),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn name(&self) -> &str {
        match self {
            StrategyRef::Named(n) => n,
            StrategyRef::Custom(c) => &c.name,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerConfig {
    pub mode: Mode,
    pub strategy: StrategyRef,
    pub model: ModelConfig,
    pub epochs: usize,
    pub batch_labeled: usize,
    pub batch_unlabeled: usize,
    /// Steps per epoch; by default one pass over the labeled patches (supervised)
    /// or the unlabeled patches (semi-supervised).
    pub steps_per_epoch: Option<usize>,
    /// Also apply the strong pipeline to labeled samples.
    pub labeled_strong: bool,
    pub tau: f64,
    pub ramp: RampSchedule,
    pub unsupervised_weights: UnsupervisedWeights,
    pub optimizer: AdamConfig,
    pub seed: u64,
    /// Encoder weights file; falls back to `$FRACTOSEG_CACHE/encoder-<name>.ckpt`.
    pub pretrained_path: Option<PathBuf>,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            mode: Mode::SemiSupervised,
            strategy: StrategyRef::Named("HET1".into()),
            model: ModelConfig::default(),
            epochs: 100,
            batch_labeled: 4,
            batch_unlabeled: 4,
            steps_per_epoch: None,
            labeled_strong: false,
            tau: 0.8,
            ramp: RampSchedule::default(),
            unsupervised_weights: UnsupervisedWeights::default(),
            optimizer: AdamConfig::default(),
            seed: 0,
            pretrained_path: None,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<(), SegError> {
        self.model.validate()?;
        self.strategy.resolve()?;
        let bad = |m: &str| Err(SegError::Config(m.to_string()));
        if !(self.optimizer.lr > 0.0) {
            return bad("lr must be positive");
        }
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if self.batch_labeled == 0 || self.batch_unlabeled == 0 {
            return bad("batch sizes must be positive");
        }
        if self.steps_per_epoch == Some(0) {
            return bad("steps_per_epoch must be positive");
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(SegError::InvalidThreshold(self.tau));
        }
        if !(self.ramp.lambda_max >= 0.0) || self.ramp.ramp_epochs < 0.0 {
            return bad("ramp must have lambda_max >= 0 and ramp_epochs >= 0");
        }
        let w = self.unsupervised_weights;
        if [w.ce, w.dice, w.negative].iter().any(|v| !(*v >= 0.0)) {
            return bad("unsupervised weights must be non-negative");
        }
        Ok(())
    }
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub supervised: f64,
    pub unsupervised: f64,
    pub lambda: f64,
    /// Mean Dice loss over clean validation patches; absent without validation data.
    pub val_dice_loss: Option<f64>,
    pub valid_fraction: f64,
    pub steps: usize,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub records: Vec<EpochRecord>,
    /// Epoch of the kept checkpoint.
    pub best_epoch: Option<usize>,
}

impl TrainingLog {
    pub const CSV_HEADER: &'static str =
        "epoch,loss,supervised,unsupervised,lambda,val_dice_loss,valid_fraction,steps,wall_time_s";

    pub fn csv_row(r: &EpochRecord) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{:.3}",
            r.epoch,
            r.loss,
            r.supervised,
            r.unsupervised,
            r.lambda,
            r.val_dice_loss.map(|v| v.to_string()).unwrap_or_default(),
            r.valid_fraction,
            r.steps,
            r.wall_time_s
        )
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for r in &self.records {
            s.push_str(&Self::csv_row(r));
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Weights from the epoch with the lowest validation Dice loss (or the last
    /// epoch without validation data).
    pub best: Checkpoint,
    pub last: Checkpoint,
    pub log: TrainingLog,
}

struct Patch {
    id: String,
    image: Rgb32FImage,
    mask: Option<Mask>,
}

fn slice_labeled(samples: &[LabeledSample], size: u32) -> Result<Vec<Patch>, SegError> {
    let mut out = Vec::new();
    for s in samples {
        let (_, imgs) = slice_image(&s.image, size)?;
        let (_, masks) = slice_mask(&s.mask, size)?;
        for (k, (image, mask)) in imgs.into_iter().zip(masks).enumerate() {
            out.push(Patch {
                id: format!("{}#{k}", s.id),
                image,
                mask: Some(mask),
            });
        }
    }
    Ok(out)
}

fn slice_unlabeled(samples: &[UnlabeledSample], size: u32) -> Result<Vec<Patch>, SegError> {
    let mut out = Vec::new();
    for s in samples {
        let (_, imgs) = slice_image(&s.image, size)?;
        for (k, image) in imgs.into_iter().enumerate() {
            out.push(Patch {
                id: format!("{}#{k}", s.id),
                image,
                mask: None,
            });
        }
    }
    Ok(out)
}

/// Position `t` of an endless stream of reshuffled passes over `n` items.
struct Stream {
    seed: u64,
    key: u64,
    n: usize,
    pass: usize,
    order: Vec<usize>,
}

impl Stream {
    fn new(seed: u64, key: u64, n: usize) -> Self {
        let mut s = Stream {
            seed,
            key,
            n,
            pass: usize::MAX,
            order: Vec::new(),
        };
        s.load(0);
        s
    }

    fn load(&mut self, pass: usize) {
        if self.pass != pass {
            self.order = (0..self.n).collect();
            self.order.shuffle(&mut rng_from(derive_seed(self.seed, &[self.key, pass as u64])));
            self.pass = pass;
        }
    }

    /// (pass, item index) at position `t`.
    fn at(&mut self, t: usize) -> (usize, usize) {
        let pass = t / self.n;
        self.load(pass);
        (pass, self.order[t % self.n])
    }
}

/// Stepwise trainer; [`train_supervised`] and [`train_semi_supervised`] drive it.
pub struct Trainer {
    pub cfg: TrainerConfig,
    strategy: StrategyConfig,
    pub model: SegModel,
    adam: Adam,
    labeled: Vec<Patch>,
    unlabeled: Vec<Patch>,
    val: Vec<Patch>,
    lab_stream: Stream,
    unl_stream: Option<Stream>,
    pub step: u64,
}

fn pretrained_source(cfg: &TrainerConfig) -> Option<PathBuf> {
    cfg.pretrained_path.clone().or_else(|| {
        std::env::var_os(CACHE_ENV).map(|d| {
            let enc = serde_json::to_value(cfg.model.encoder)
                .ok()
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_default();
            PathBuf::from(d).join(format!("encoder-{enc}.ckpt"))
        })
    })
}

impl Trainer {
    pub fn new(cfg: TrainerConfig, data: &TrainData) -> Result<Trainer, SegError> {
        cfg.validate()?;
        if data.labeled.is_empty() {
            return Err(SegError::EmptyDataset("no labeled training images"));
        }
        if cfg.mode == Mode::SemiSupervised && data.unlabeled.is_empty() {
            return Err(SegError::EmptyDataset("semi-supervised training needs unlabeled images"));
        }
        let strategy = cfg.strategy.resolve()?;
        let mut model = SegModel::new(cfg.model.clone(), cfg.seed)?;
        if cfg.model.pretrained_encoder {
            let path = pretrained_source(&cfg).ok_or_else(|| SegError::PretrainedUnavailable(PathBuf::from(CACHE_ENV)))?;
            if !path.exists() {
                return Err(SegError::PretrainedUnavailable(path));
            }
            model.load_encoder(&load_params(&path)?)?;
        }
        let size = cfg.model.input_size;
        let labeled = slice_labeled(&data.labeled, size)?;
        let unlabeled = match cfg.mode {
            Mode::SemiSupervised => slice_unlabeled(&data.unlabeled, size)?,
            Mode::Supervised => Vec::new(),
        };
        let val = slice_labeled(&data.val, size)?;
        let adam = Adam::new(cfg.optimizer, &model.params);
        Ok(Trainer {
            lab_stream: Stream::new(cfg.seed, stream::LABELED_ORDER, labeled.len()),
            unl_stream: (!unlabeled.is_empty()).then(|| Stream::new(cfg.seed, stream::UNLABELED_ORDER, unlabeled.len())),
            cfg,
            strategy,
            model,
            adam,
            labeled,
            unlabeled,
            val,
            step: 0,
        })
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.cfg.steps_per_epoch.unwrap_or_else(|| match self.cfg.mode {
            Mode::Supervised => self.labeled.len().div_ceil(self.cfg.batch_labeled),
            Mode::SemiSupervised => self.unlabeled.len().div_ceil(self.cfg.batch_unlabeled),
        })
    }

    fn augment(&self, p: &Patch, pass: usize, pool: u64, strong: bool) -> Result<(AugmentedSample, Option<AugmentedSample>), SegError> {
        let key = |s: u64| derive_seed(self.cfg.seed, &[s, pool, pass as u64, hash_id(&p.id)]);
        let weak = apply_weak(&p.image, p.mask.as_ref(), &self.strategy, key(stream::WEAK))?;
        let strong = if strong {
            Some(apply_strong(&weak, &self.strategy, key(stream::STRONG))?)
        } else {
            None
        };
        Ok((weak, strong))
    }

    /// One optimizer step. `epoch` sets λ.
    pub fn train_step(&mut self, epoch: usize) -> Result<LossBundle, SegError> {
        let bl = self.cfg.batch_labeled;
        let mut images = Vec::with_capacity(bl);
        let mut masks = Vec::with_capacity(bl);
        for j in 0..bl {
            let (pass, idx) = self.lab_stream.at(self.step as usize * bl + j);
            let (weak, strong) = self.augment(&self.labeled[idx], pass, 0, self.cfg.labeled_strong)?;
            let s = strong.unwrap_or(weak);
            images.push(s.image);
            masks.push(s.mask.expect("labeled patches carry masks"));
        }

        let mut grads = GradStore::new();
        let x = self.model.batch(&images.iter().collect::<Vec<_>>())?;
        let (sup, bn_lab) = {
            let mut g = Graph::new(&self.model.params, true);
            let xi = g.input(x);
            let z = self.model.forward(&mut g, xi);
            let sup = supervised_loss(g.value(z), &masks.iter().collect::<Vec<_>>())?;
            g.backward(&[(z, &sup.grad)], &mut grads);
            (sup, g.bn_updates())
        };

        let lambda = lambda_at(epoch as f64, &self.cfg.ramp);
        let (mut unsup, mut valid_fraction, mut bn_unl) = (0.0, 0.0, Vec::new());
        if let (Mode::SemiSupervised, Some(stream)) = (self.cfg.mode, self.unl_stream.as_mut()) {
            let bu = self.cfg.batch_unlabeled;
            let picks: Vec<(usize, usize)> = (0..bu).map(|j| stream.at(self.step as usize * bu + j)).collect();
            let mut weak_imgs = Vec::with_capacity(bu);
            let mut strong_imgs = Vec::with_capacity(bu);
            for (pass, idx) in picks {
                let (w, s) = self.augment(&self.unlabeled[idx], pass, 1, true)?;
                weak_imgs.push(w.image);
                strong_imgs.push(s.expect("strong view requested").image);
            }
            // weak view: batch statistics, no gradient, running averages untouched
            let zw = self.model.logits(&weak_imgs.iter().collect::<Vec<_>>(), true)?;
            let pl = pseudo_label(&zw, self.cfg.tau)?;
            let n_valid: usize = pl.iter().map(|p| p.n_valid()).sum();
            valid_fraction = n_valid as f64 / (zw.len() / NUM_CLASSES) as f64;
            if n_valid > 0 && lambda > 0.0 {
                let xs = self.model.batch(&strong_imgs.iter().collect::<Vec<_>>())?;
                let mut g = Graph::new(&self.model.params, true);
                let xi = g.input(xs);
                let z = self.model.forward(&mut g, xi);
                let cl = consistency_loss(&pl, g.value(z), self.cfg.unsupervised_weights)?;
                let scaled: Vec<f32> = cl.grad.iter().map(|v| v * lambda as f32).collect();
                g.backward(&[(z, &scaled)], &mut grads);
                unsup = cl.total;
                bn_unl = g.bn_updates();
            }
        }

        let bundle = LossBundle::new(sup.total, unsup, lambda, valid_fraction);
        if !bundle.is_finite() {
            return Err(SegError::DivergedLoss {
                epoch,
                step: self.step as usize,
            });
        }
        self.model.params.apply_updates(bn_lab);
        self.model.params.apply_updates(bn_unl);
        self.adam.step(&mut self.model.params, &grads);
        self.step += 1;
        Ok(bundle)
    }

    /// Mean Dice loss over clean validation patches.
    pub fn validation_dice_loss(&self) -> Result<Option<f64>, SegError> {
        if self.val.is_empty() {
            return Ok(None);
        }
        let mut total = 0.0;
        for chunk in self.val.chunks(self.cfg.batch_labeled.max(1)) {
            let imgs: Vec<&Rgb32FImage> = chunk.iter().map(|p| &p.image).collect();
            let z = self.model.logits(&imgs, false)?;
            let per = z.len() / chunk.len();
            for (s, p) in chunk.iter().enumerate() {
                let zi: Vec<f64> = z.data[s * per..(s + 1) * per].iter().map(|&v| v as f64).collect();
                let labels = p.mask.as_ref().expect("validation patches carry masks").labels();
                total += dice_loss_logits(&zi, NUM_CLASSES, labels, None)?.value;
            }
        }
        Ok(Some(total / self.val.len() as f64))
    }

    fn checkpoint(&self, epoch: usize) -> Checkpoint {
        let mut ck = Checkpoint::new(self.model.clone(), epoch, self.step, self.cfg.seed);
        ck.meta = serde_json::json!({ "strategy": self.strategy.name, "mode": self.cfg.mode });
        ck
    }
}

fn run(cfg: TrainerConfig, data: &TrainData, out: Option<&Path>) -> Result<TrainOutcome, SegError> {
    let mut tr = Trainer::new(cfg, data)?;
    let mut csv = match out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let mut f = std::fs::File::create(dir.join("log.csv"))?;
            writeln!(f, "{}", TrainingLog::CSV_HEADER)?;
            Some(f)
        }
        None => None,
    };
    let steps = tr.steps_per_epoch();
    let mut log = TrainingLog::default();
    let mut best: Option<(f64, Checkpoint)> = None;
    for epoch in 0..tr.cfg.epochs {
        let start = Instant::now();
        let mut acc = [0f64; 4];
        for _ in 0..steps {
            let b = tr.train_step(epoch)?;
            acc[0] += b.total;
            acc[1] += b.supervised;
            acc[2] += b.unsupervised;
            acc[3] += b.valid_fraction;
        }
        let n = steps as f64;
        let val = tr.validation_dice_loss()?;
        let rec = EpochRecord {
            epoch,
            loss: acc[0] / n,
            supervised: acc[1] / n,
            unsupervised: acc[2] / n,
            lambda: lambda_at(epoch as f64, &tr.cfg.ramp),
            val_dice_loss: val,
            valid_fraction: acc[3] / n,
            steps,
            wall_time_s: start.elapsed().as_secs_f64(),
        };
        if let Some(f) = csv.as_mut() {
            writeln!(f, "{}", TrainingLog::csv_row(&rec))?;
        }
        log.records.push(rec);
        if let Some(v) = val {
            if best.as_ref().map_or(true, |(b, _)| v < *b) {
                best = Some((v, tr.checkpoint(epoch)));
                log.best_epoch = Some(epoch);
            }
        }
    }
    let last_epoch = tr.cfg.epochs - 1;
    let last = tr.checkpoint(last_epoch);
    let best = match best {
        Some((_, ck)) => ck,
        None => {
            log.best_epoch = Some(last_epoch);
            last.clone()
        }
    };
    if let Some(dir) = out {
        best.save(dir.join("best.ckpt"))?;
        last.save(dir.join("last.ckpt"))?;
        std::fs::write(dir.join("log.json"), serde_json::to_string_pretty(&log)?)?;
    }
    Ok(TrainOutcome { best, last, log })
}

/// Trains on labeled data only, minimizing CE + Dice loss.
pub fn train_supervised(cfg: &TrainerConfig, data: &TrainData, out: Option<&Path>) -> Result<TrainOutcome, SegError> {
    let cfg = TrainerConfig {
        mode: Mode::Supervised,
        ..cfg.clone()
    };
    run(cfg, data, out)
}

/// Trains with the weak-to-strong consistency objective on unlabeled data.
pub fn train_semi_supervised(cfg: &TrainerConfig, data: &TrainData, out: Option<&Path>) -> Result<TrainOutcome, SegError> {
    let cfg = TrainerConfig {
        mode: Mode::SemiSupervised,
        ..cfg.clone()
    };
    run(cfg, data, out)
}

/// One row of a strategy sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub strategy: String,
    pub result: Result<EvalSummary, String>,
}

/// Trains one model per strategy under the template's seed and evaluates each on
/// `test`. A failing row is recorded and the sweep moves on.
pub fn sweep(
    strategies: &[StrategyRef],
    template: &TrainerConfig,
    data: &TrainData,
    test: &[LabeledSample],
) -> Result<Vec<SweepRow>, SegError> {
    if strategies.is_empty() {
        return Err(SegError::Config("sweep needs at least one strategy".into()));
    }
    Ok(strategies
        .iter()
        .map(|s| {
            let cfg = TrainerConfig {
                strategy: s.clone(),
                ..template.clone()
            };
            let result = run(cfg, data, None)
                .and_then(|o| evaluate(&o.best.model, test))
                .map(|r: Vec<ClassIoUReport>| EvalSummary::from_reports(&r))
                .map_err(|e| e.to_string());
            SweepRow {
                strategy: s.name().to_string(),
                result,
            }
        })
        .collect())
}

/// Sweep report with per-class IoU columns and mIoU, one row per strategy.
pub fn sweep_to_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("strategy");
    for c in fractoseg_core::Class::ALL {
        s.push_str(&format!(",iou_{}", c.name()));
    }
    s.push_str(",miou,error\n");
    for r in rows {
        s.push_str(&r.strategy);
        match &r.result {
            Ok(sum) => {
                for v in sum.per_class {
                    s.push(',');
                    if let Some(v) = v {
                        s.push_str(&format!("{v:.4}"));
                    }
                }
                s.push_str(&format!(",{:.4},\n", sum.miou));
            }
            Err(e) => {
                s.push_str(&",".repeat(NUM_CLASSES + 1));
                s.push_str(&format!(",\"{}\"\n", e.replace('"', "'")));
            }
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use fractoseg_core::imageops::to_f32;
    use fractoseg_core::synth::{generate_dataset, Profile, SizeRange};

    fn tiny_data(n_lab: usize, n_unl: usize) -> TrainData {
        let total = (n_lab + n_unl).max(4);
        let ds = generate_dataset(Profile::Het, total, 3, 0.0, SizeRange { min: 64, max: 72 }).unwrap();
        let mut data = TrainData::default();
        for (i, s) in ds.samples.iter().enumerate().take(n_lab + n_unl) {
            let image = to_f32(&s.image);
            if i < n_lab {
                let l = LabeledSample {
                    id: s.meta.id.clone(),
                    image,
                    mask: s.mask.clone(),
                };
                if i == 0 {
                    data.val.push(l.clone());
                }
                data.labeled.push(l);
            } else {
                data.unlabeled.push(UnlabeledSample {
                    id: s.meta.id.clone(),
                    image,
                });
            }
        }
        data
    }

    fn small_cfg() -> TrainerConfig {
        TrainerConfig {
            model: ModelConfig::small_unet(16, 4),
            epochs: 1,
            batch_labeled: 2,
            batch_unlabeled: 2,
            ..Default::default()
        }
    }

    #[test]
    fn smoke_one_epoch() {
        let data = tiny_data(2, 0);
        let out = train_supervised(&small_cfg(), &data, None).unwrap();
        assert_eq!(out.log.records.len(), 1);
        let r = &out.log.records[0];
        assert!(r.loss.is_finite() && r.val_dice_loss.is_some());
        assert_eq!(r.steps, 4);
        assert_eq!(out.log.best_epoch, Some(0));
    }

    #[test]
    fn deterministic_epoch_zero() {
        let data = tiny_data(2, 2);
        let a = train_semi_supervised(&small_cfg(), &data, None).unwrap();
        let b = train_semi_supervised(&small_cfg(), &data, None).unwrap();
        assert_eq!(a.log.records[0].loss, b.log.records[0].loss);
        assert_eq!(a.log.records[0].val_dice_loss, b.log.records[0].val_dice_loss);
    }

    #[test]
    fn empty_and_invalid_inputs() {
        let empty = TrainData::default();
        assert!(matches!(train_supervised(&small_cfg(), &empty, None), Err(SegError::EmptyDataset(_))));
        let only_labeled = tiny_data(2, 0);
        assert!(matches!(
            train_semi_supervised(&small_cfg(), &only_labeled, None),
            Err(SegError::EmptyDataset(_))
        ));
        let mut cfg = small_cfg();
        cfg.optimizer.lr = 0.0;
        assert!(matches!(train_supervised(&cfg, &only_labeled, None), Err(SegError::Config(_))));
        cfg = small_cfg();
        cfg.strategy = StrategyRef::Named("HET9".into());
        assert!(train_supervised(&cfg, &only_labeled, None).is_err());
    }

    #[test]
    fn pretrained_encoder_missing_is_reported() {
        let mut cfg = small_cfg();
        cfg.model.pretrained_encoder = true;
        cfg.pretrained_path = Some(PathBuf::from("/nonexistent/encoder.ckpt"));
        assert!(matches!(
            train_supervised(&cfg, &tiny_data(2, 0), None),
            Err(SegError::PretrainedUnavailable(_))
        ));
    }

    #[test]
    fn lambda_zero_matches_supervised() {
        let data = tiny_data(2, 2);
        let mut cfg = small_cfg();
        cfg.steps_per_epoch = Some(3);
        cfg.epochs = 2;
        cfg.tau = 0.0;
        cfg.ramp.lambda_max = 0.0;
        let ssl = train_semi_supervised(&cfg, &data, None).unwrap();
        let sup = train_supervised(&cfg, &data, None).unwrap();
        for id in sup.last.model.params.ids() {
            assert_eq!(sup.last.model.params.get(id), ssl.last.model.params.get(id));
        }
        assert_eq!(ssl.log.records[1].valid_fraction, 1.0);
    }

    #[test]
    fn log_and_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small_cfg();
        cfg.epochs = 2;
        let out = train_semi_supervised(&cfg, &tiny_data(2, 2), Some(dir.path())).unwrap();
        let csv = std::fs::read_to_string(dir.path().join("log.csv")).unwrap();
        assert_eq!(csv.lines().count(), 3);
        assert_eq!(csv, out.log.to_csv().lines().map(|l| format!("{l}\n")).collect::<String>());
        assert!(dir.path().join("best.ckpt").exists());
        let best = out.log.best_epoch.unwrap();
        let min = out.log.records.iter().map(|r| r.val_dice_loss.unwrap()).fold(f64::INFINITY, f64::min);
        assert_eq!(out.log.records[best].val_dice_loss, Some(min));
        for r in &out.log.records {
            assert_eq!(r.lambda, lambda_at(r.epoch as f64, &cfg.ramp));
        }
        let json: TrainingLog = serde_json::from_str(&std::fs::read_to_string(dir.path().join("log.json")).unwrap()).unwrap();
        assert_eq!(json, out.log);
    }

    #[test]
    fn config_serde() {
        let cfg = TrainerConfig {
            strategy: StrategyRef::Custom(builtin_strategy("HET4").unwrap()),
            ..small_cfg()
        };
        let text = serde_json::to_string(&cfg).unwrap();
        let back: TrainerConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        let named: TrainerConfig = serde_json::from_str(r#"{"strategy":"HET2","epochs":3}"#).unwrap();
        assert_eq!(named.strategy.resolve().unwrap().name, "HET2");
        assert!(serde_json::from_str::<TrainerConfig>(r#"{"epochz":3}"#).is_err());
    }

    #[test]
    fn sweep_rows() {
        let data = tiny_data(3, 0);
        let test = data.labeled[..1].to_vec();
        let strategies = [
            StrategyRef::Named("HET0".into()),
            StrategyRef::Named("HET0".into()),
            StrategyRef::Named("NOPE".into()),
        ];
        let rows = sweep(&strategies, &TrainerConfig { mode: Mode::Supervised, ..small_cfg() }, &data, &test).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0], SweepRow { strategy: "HET0".into(), ..rows[1].clone() });
        assert!(rows[2].result.is_err());
        let csv = sweep_to_csv(&rows);
        assert_eq!(csv.lines().next().unwrap().split(',').count(), 10);
        assert_eq!(csv.lines().count(), 4);
    }
}
