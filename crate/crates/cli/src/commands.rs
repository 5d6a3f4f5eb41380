//! Command implementations. Each takes a resolved config and an output root and
//! returns the run directory it wrote.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use fractoseg_core::dataset::{split_dataset, DatasetManifest, Splits};
use fractoseg_core::imageops::to_f32;
use fractoseg_core::io::{colorize, read_mask, read_rgb, write_mask, write_rgb, PALETTE};
use fractoseg_core::measure::{
    area_average_a0, compare_methods, five_point_a0, measurement_stats_with_band, MeasurementPair, SpecimenGeometry,
};
use fractoseg_core::metrics::{diagnostics, miou, reports_to_csv, ClassIoUReport};
use fractoseg_core::plot::{agreement_plot, box_plot, heatmap, scatter, Axis};
use fractoseg_core::ssim::{dataset_stats, ssim_matrix, Selection};
use fractoseg_core::stats::BoxSummary;
use fractoseg_core::synth::{generate_dataset, SizeRange};
use fractoseg_core::Mask;
use fractoseg_seg::infer::EvalSummary;
use fractoseg_seg::trainer::sweep_to_csv;
use fractoseg_seg::{
    evaluate, predict_mask, sweep, train_semi_supervised, train_supervised, Checkpoint, LabeledSample, Mode,
    StrategyRef, TrainData, UnlabeledSample,
};
use serde::{Deserialize, Serialize};

use crate::config::{
    existing, run_dir, EvalConfig, GenConfig, MeasureConfig, PredictConfig, RunConfig, SelectionKind, SplitConfig,
    SsimRunConfig,
};
use crate::error::CliError;

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn save_png(path: &Path, img: &image::RgbImage) -> Result<(), CliError> {
    img.save(path).map_err(CliError::failed)
}

/// Manifest path for a dataset directory or manifest file.
fn manifest_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join("manifest.json")
    } else {
        p.to_path_buf()
    }
}

struct Dataset {
    manifest: DatasetManifest,
    base: PathBuf,
}

impl Dataset {
    fn open(path: &Path) -> Result<Dataset, CliError> {
        let mp = manifest_path(path);
        if !mp.exists() {
            return Err(CliError::PathMissing(mp));
        }
        let manifest = DatasetManifest::load(&mp)?;
        let base = mp.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Dataset { manifest, base })
    }

    fn file(&self, rel: &Option<PathBuf>, id: &str, what: &str) -> Result<PathBuf, CliError> {
        let rel = rel
            .as_ref()
            .ok_or_else(|| CliError::ConfigInvalid(format!("record {id:?} has no {what}")))?;
        let p = self.base.join(rel);
        if !p.exists() {
            return Err(CliError::PathMissing(p));
        }
        Ok(p)
    }

    fn labeled(&self, ids: &[String]) -> Result<Vec<LabeledSample>, CliError> {
        ids.iter()
            .map(|id| {
                let r = self.manifest.get(id).ok_or_else(|| CliError::ConfigInvalid(format!("unknown id {id:?}")))?;
                Ok(LabeledSample {
                    id: id.clone(),
                    image: to_f32(&read_rgb(&self.file(&r.image, id, "image")?)?),
                    mask: read_mask(&self.file(&r.mask, id, "mask")?)?,
                })
            })
            .collect()
    }

    fn unlabeled(&self, ids: &[String]) -> Result<Vec<UnlabeledSample>, CliError> {
        ids.iter()
            .map(|id| {
                let r = self.manifest.get(id).ok_or_else(|| CliError::ConfigInvalid(format!("unknown id {id:?}")))?;
                Ok(UnlabeledSample {
                    id: id.clone(),
                    image: to_f32(&read_rgb(&self.file(&r.image, id, "image")?)?),
                })
            })
            .collect()
    }
}

pub fn gen(cfg: &GenConfig, out: &Path) -> Result<PathBuf, CliError> {
    if cfg.min_size > cfg.max_size {
        return Err(CliError::ConfigInvalid("min_size exceeds max_size".into()));
    }
    let size = SizeRange {
        min: cfg.min_size,
        max: cfg.max_size,
    };
    let ds = generate_dataset(cfg.profile, cfg.n, cfg.seed, cfg.mu, size).map_err(|e| CliError::ConfigInvalid(e.to_string()))?;
    let dir = run_dir(out, "gen", cfg)?;
    ds.write(&dir).map_err(CliError::failed)?;
    Ok(dir)
}

pub fn ssim(cfg: &SsimRunConfig, out: &Path) -> Result<PathBuf, CliError> {
    cfg.ssim.validate().map_err(|e| CliError::ConfigInvalid(e.to_string()))?;
    let cfg = SsimRunConfig {
        dataset: existing(&cfg.dataset, "dataset")?,
        ..cfg.clone()
    };
    let ds = Dataset::open(&cfg.dataset)?;
    let mut images = Vec::new();
    for r in &ds.manifest.records {
        images.push((r.id.clone(), read_rgb(&ds.file(&r.image, &r.id, "image")?)?));
    }
    let matrix = ssim_matrix(&images, &cfg.ssim).map_err(CliError::failed)?;
    let selection = match cfg.selection {
        SelectionKind::AllPairs => Selection::AllPairs,
        SelectionKind::VsFirst => Selection::VsFirst,
    };
    let stats = dataset_stats(&matrix, &selection).map_err(CliError::failed)?;
    let dir = run_dir(out, "ssim", &cfg)?;
    std::fs::write(dir.join("matrix.csv"), matrix.to_csv())?;
    write_json(&dir.join("stats.json"), &stats)?;
    let cell = (480 / matrix.len().max(1)).clamp(2, 24) as u32;
    save_png(&dir.join("heatmap.png"), &heatmap(&matrix.values, matrix.len(), cell, 0.0, 1.0))?;
    Ok(dir)
}

/// Manifest copy whose record paths are absolute, so it can live anywhere.
fn absolute_manifest(ds: &Dataset) -> DatasetManifest {
    let mut m = ds.manifest.clone();
    for r in &mut m.records {
        for p in [&mut r.image, &mut r.mask, &mut r.meta].into_iter().flatten() {
            *p = ds.base.join(&*p);
        }
    }
    m
}

pub fn split(cfg: &SplitConfig, out: &Path) -> Result<PathBuf, CliError> {
    let cfg = SplitConfig {
        dataset: existing(&cfg.dataset, "dataset")?,
        ..cfg.clone()
    };
    let ds = Dataset::open(&cfg.dataset)?;
    let report = split_dataset(&ds.manifest, cfg.method, cfg.seed, (cfg.train_fraction, cfg.val_fraction))?;
    let dir = run_dir(out, "split", &cfg)?;
    write_json(&dir.join("split.json"), &report)?;
    absolute_manifest(&ds).with_splits(&report)?.save(&dir.join("manifest.json"))?;
    Ok(dir)
}

fn resolve_splits(ds: &Dataset, cfg: &RunConfig) -> Result<Splits, CliError> {
    if let Some(s) = &ds.manifest.splits {
        return Ok(s.clone());
    }
    let d = &cfg.data;
    Ok(split_dataset(&ds.manifest, d.split_method, cfg.seed, (d.train_fraction, d.val_fraction))?.splits)
}

fn resolve_run(cfg: &RunConfig) -> Result<RunConfig, CliError> {
    let mut cfg = cfg.clone();
    cfg.data.manifest = existing(&manifest_path(&cfg.data.manifest), "data.manifest")?;
    cfg.trainer.seed = cfg.seed;
    cfg.trainer.validate()?;
    Ok(cfg)
}

fn load_train_data(ds: &Dataset, splits: &Splits, with_unlabeled: bool) -> Result<TrainData, CliError> {
    Ok(TrainData {
        labeled: ds.labeled(&splits.train)?,
        unlabeled: if with_unlabeled { ds.unlabeled(&splits.unlabeled)? } else { Vec::new() },
        val: ds.labeled(&splits.val)?,
    })
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TrainSummary {
    pub mode: Mode,
    pub strategy: String,
    pub best_epoch: Option<usize>,
    pub epoch0_loss: f64,
    pub final_loss: f64,
    pub test: Option<EvalSummary>,
}

pub fn train(cfg: &RunConfig, out: &Path) -> Result<PathBuf, CliError> {
    let cfg = resolve_run(cfg)?;
    let ds = Dataset::open(&cfg.data.manifest)?;
    let splits = resolve_splits(&ds, &cfg)?;
    let ssl = cfg.trainer.mode == Mode::SemiSupervised;
    let data = load_train_data(&ds, &splits, ssl)?;
    let dir = run_dir(out, "train", &cfg)?;
    write_json(&dir.join("splits.json"), &splits)?;
    let outcome = if ssl {
        train_semi_supervised(&cfg.trainer, &data, Some(&dir))?
    } else {
        train_supervised(&cfg.trainer, &data, Some(&dir))?
    };
    let test = ds.labeled(&splits.test)?;
    let summary = if test.is_empty() {
        None
    } else {
        let reports = evaluate(&outcome.best.model, &test)?;
        std::fs::write(dir.join("test_metrics.csv"), reports_to_csv(&reports))?;
        Some(EvalSummary::from_reports(&reports))
    };
    let recs = &outcome.log.records;
    write_json(
        &dir.join("summary.json"),
        &TrainSummary {
            mode: cfg.trainer.mode,
            strategy: cfg.trainer.strategy.name().to_string(),
            best_epoch: outcome.log.best_epoch,
            epoch0_loss: recs[0].loss,
            final_loss: recs[recs.len() - 1].loss,
            test: summary,
        },
    )?;
    Ok(dir)
}

pub fn sweep_cmd(cfg: &RunConfig, out: &Path) -> Result<PathBuf, CliError> {
    if cfg.strategies.is_empty() {
        return Err(CliError::ConfigInvalid("sweep needs at least one strategy".into()));
    }
    let cfg = resolve_run(cfg)?;
    for s in &cfg.strategies {
        fractoseg_core::augment::builtin_strategy(s).map_err(|e| CliError::ConfigInvalid(e.to_string()))?;
    }
    let ds = Dataset::open(&cfg.data.manifest)?;
    let splits = resolve_splits(&ds, &cfg)?;
    let data = load_train_data(&ds, &splits, cfg.trainer.mode == Mode::SemiSupervised)?;
    let test = ds.labeled(&splits.test)?;
    if test.is_empty() {
        return Err(CliError::ConfigInvalid("sweep needs a nonempty test split".into()));
    }
    let dir = run_dir(out, "sweep", &cfg)?;
    let strategies: Vec<StrategyRef> = cfg.strategies.iter().map(|s| StrategyRef::Named(s.clone())).collect();
    let rows = sweep(&strategies, &cfg.trainer, &data, &test)?;
    std::fs::write(dir.join("sweep.csv"), sweep_to_csv(&rows))?;
    write_json(&dir.join("sweep.json"), &rows)?;
    Ok(dir)
}

fn png_files(dir: &Path) -> Result<Vec<(String, PathBuf)>, CliError> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let p = entry?.path();
        if p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
            let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            out.push((stem, p));
        }
    }
    out.sort();
    Ok(out)
}

pub fn predict(cfg: &PredictConfig, out: &Path) -> Result<PathBuf, CliError> {
    let cfg = PredictConfig {
        checkpoint: existing(&cfg.checkpoint, "checkpoint")?,
        images: existing(&cfg.images, "images")?,
    };
    let ck = Checkpoint::load(&cfg.checkpoint)?;
    let inputs: Vec<(String, PathBuf)> = if manifest_path(&cfg.images).is_file() && cfg.images.is_dir() {
        let ds = Dataset::open(&cfg.images)?;
        ds.manifest
            .records
            .iter()
            .map(|r| Ok((r.id.clone(), ds.file(&r.image, &r.id, "image")?)))
            .collect::<Result<_, CliError>>()?
    } else if cfg.images.is_dir() {
        png_files(&cfg.images)?
    } else {
        let stem = cfg.images.file_stem().and_then(|s| s.to_str()).unwrap_or("image").to_string();
        vec![(stem, cfg.images.clone())]
    };
    let dir = run_dir(out, "predict", &cfg)?;
    std::fs::create_dir_all(dir.join("masks"))?;
    std::fs::create_dir_all(dir.join("color"))?;
    for (id, path) in inputs {
        let mask = predict_mask(&ck.model, &to_f32(&read_rgb(&path)?))?;
        write_mask(&dir.join("masks").join(format!("{id}.png")), &mask)?;
        write_rgb(&dir.join("color").join(format!("{id}.png")), &colorize(&mask))?;
    }
    Ok(dir)
}

#[derive(Debug, Serialize)]
struct EvalReport {
    summary: EvalSummary,
    diagnostics: fractoseg_core::metrics::Diagnostics,
}

pub fn eval(cfg: &EvalConfig, out: &Path) -> Result<PathBuf, CliError> {
    let cfg = EvalConfig {
        pred: existing(&cfg.pred, "pred")?,
        truth: existing(&cfg.truth, "truth")?,
    };
    let truths = png_files(&cfg.truth)?;
    if truths.is_empty() {
        return Err(CliError::ConfigInvalid(format!("no PNG masks in {}", cfg.truth.display())));
    }
    let mut reports: Vec<ClassIoUReport> = Vec::new();
    for (id, tpath) in &truths {
        let ppath = cfg.pred.join(format!("{id}.png"));
        if !ppath.exists() {
            return Err(CliError::PathMissing(ppath));
        }
        let (pred, truth) = (read_mask(&ppath)?, read_mask(tpath)?);
        reports.push(miou(&pred, &truth).map_err(CliError::failed)?.with_id(id.clone()));
    }
    let diag = diagnostics(&reports).map_err(CliError::failed)?;
    let dir = run_dir(out, "eval", &cfg)?;
    std::fs::write(dir.join("metrics.csv"), reports_to_csv(&reports))?;
    let max_px = reports.iter().flat_map(|r| r.n_pixels).max().unwrap_or(1).max(10) as f64;
    let series: Vec<(Vec<(f64, f64)>, [u8; 3])> = diag
        .per_class
        .iter()
        .enumerate()
        .map(|(k, pts)| {
            let xy = pts.iter().filter_map(|p| p.iou.map(|v| (p.n_pixels as f64, v))).collect();
            // background is black in the palette; draw it grey
            (xy, if k == 0 { [120, 120, 120] } else { PALETTE[k] })
        })
        .collect();
    let refs: Vec<(&[(f64, f64)], [u8; 3])> = series.iter().map(|(v, c)| (v.as_slice(), *c)).collect();
    save_png(
        &dir.join("iou_vs_pixels.png"),
        &scatter(&refs, Axis::log(1.0, max_px * 1.5), Axis::linear(0.0, 1.0)),
    )?;
    let mut groups: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for r in &reports {
        groups.entry(r.n_classes).or_default().push(r.miou);
    }
    let boxes: Vec<BoxSummary> = groups.values().filter_map(|v| BoxSummary::from_values(v)).collect();
    save_png(&dir.join("miou_by_classes.png"), &box_plot(&boxes, Axis::linear(0.0, 1.0)))?;
    write_json(
        &dir.join("summary.json"),
        &EvalReport {
            summary: EvalSummary::from_reports(&reports),
            diagnostics: diag,
        },
    )?;
    Ok(dir)
}

/// Per-image measurement metadata. Synthetic `meta/<id>.json` files fit as is.
#[derive(Debug, Deserialize)]
struct MeasureMeta {
    geometry: SpecimenGeometry,
    #[serde(default)]
    scale: Option<f64>,
    /// Reference a₀ in mm (or px without a scale).
    #[serde(default)]
    a0_ref: Option<f64>,
    #[serde(default)]
    true_a0_mm: Option<f64>,
    #[serde(default)]
    true_a0_px: Option<f64>,
}

impl MeasureMeta {
    fn reference(&self) -> Option<f64> {
        self.a0_ref.or(if self.scale.is_some() { self.true_a0_mm } else { self.true_a0_px })
    }
}

#[derive(Debug, Serialize)]
struct MeasureReport {
    area_average: fractoseg_core::measure::MeasurementStats,
    five_point: Option<fractoseg_core::measure::MeasurementStats>,
    aa_vs_5pa: Option<fractoseg_core::measure::MethodComparison>,
    failures: Vec<(String, String)>,
}

pub fn measure(cfg: &MeasureConfig, out: &Path) -> Result<PathBuf, CliError> {
    let cfg = MeasureConfig {
        pred: existing(&cfg.pred, "pred")?,
        meta: existing(&cfg.meta, "meta")?,
        ..cfg.clone()
    };
    if !(cfg.band_pct > 0.0) {
        return Err(CliError::ConfigInvalid("band_pct must be positive".into()));
    }
    let mut aa = Vec::new();
    let mut fp = Vec::new();
    let mut failures = Vec::new();
    let mut csv = String::from("id,reference,area_average,five_point\n");
    for (id, path) in png_files(&cfg.pred)? {
        let mpath = cfg.meta.join(format!("{id}.json"));
        if !mpath.exists() {
            return Err(CliError::PathMissing(mpath));
        }
        let meta: MeasureMeta = serde_json::from_str(&std::fs::read_to_string(&mpath)?)?;
        let Some(reference) = meta.reference() else {
            failures.push((id, "no reference a0".to_string()));
            continue;
        };
        let mask: Mask = read_mask(&path)?;
        match area_average_a0(&mask, &meta.geometry, meta.scale) {
            Ok(r) => {
                let five = five_point_a0(&mask, &meta.geometry, meta.scale).ok();
                csv.push_str(&format!(
                    "{id},{reference},{},{}\n",
                    r.a0(),
                    five.map(|v| v.to_string()).unwrap_or_default()
                ));
                aa.push(MeasurementPair {
                    id: id.clone(),
                    reference,
                    measured: r.a0(),
                });
                if let Some(v) = five {
                    fp.push(MeasurementPair {
                        id,
                        reference,
                        measured: v,
                    });
                }
            }
            Err(e) => failures.push((id, e.to_string())),
        }
    }
    if aa.is_empty() {
        return Err(CliError::Failed("no image could be measured".into()));
    }
    let aa_stats = measurement_stats_with_band(&aa, cfg.band_pct).map_err(CliError::failed)?;
    let fp_stats = measurement_stats_with_band(&fp, cfg.band_pct).ok();
    let comparison = (fp.len() == aa.len())
        .then(|| {
            let a: Vec<f64> = aa.iter().map(|p| p.measured).collect();
            let b: Vec<f64> = fp.iter().map(|p| p.measured).collect();
            compare_methods(&a, &b).ok()
        })
        .flatten();
    let dir = run_dir(out, "measure", &cfg)?;
    std::fs::write(dir.join("measurements.csv"), csv)?;
    let points: Vec<(f64, f64)> = aa.iter().map(|p| (p.reference, p.measured)).collect();
    save_png(&dir.join("agreement.png"), &agreement_plot(&points, cfg.band_pct))?;
    write_json(
        &dir.join("stats.json"),
        &MeasureReport {
            area_average: aa_stats,
            five_point: fp_stats,
            aa_vs_5pa: comparison,
            failures,
        },
    )?;
    Ok(dir)
}
