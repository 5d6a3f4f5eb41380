//! Times training steps of the small U-Net on synthetic data.

use std::time::Instant;

use fractoseg_core::imageops::to_f32;
use fractoseg_core::synth::{generate_dataset, Profile, SizeRange};
use fractoseg_seg::{LabeledSample, ModelConfig, Mode, TrainData, Trainer, TrainerConfig, UnlabeledSample};

fn main() {
    let args: Vec<usize> = std::env::args().skip(1).map(|a| a.parse().unwrap()).collect();
    let (patch, base, batch) = (args.first().copied().unwrap_or(32), args.get(1).copied().unwrap_or(16), args.get(2).copied().unwrap_or(8));
    let ds = generate_dataset(Profile::Het, 24, 1, 3.0, SizeRange::default()).unwrap();
    let mut data = TrainData::default();
    for (i, s) in ds.samples.iter().enumerate() {
        if ds.labeled[i] {
            data.labeled.push(LabeledSample { id: s.meta.id.clone(), image: to_f32(&s.image), mask: s.mask.clone() });
        } else {
            data.unlabeled.push(UnlabeledSample { id: s.meta.id.clone(), image: to_f32(&s.image) });
        }
    }
    {
        let m = fractoseg_seg::SegModel::new(ModelConfig::small_unet(patch as u32, base), 0).unwrap();
        let imgs: Vec<image::Rgb32FImage> = (0..batch).map(|_| image::Rgb32FImage::new(patch as u32, patch as u32)).collect();
        let refs: Vec<&image::Rgb32FImage> = imgs.iter().collect();
        let t = Instant::now();
        for _ in 0..10 {
            m.logits(&refs, false).unwrap();
        }
        println!("forward: {:.1} ms", t.elapsed().as_secs_f64() * 100.0);
        let strat = fractoseg_core::augment::builtin_strategy("HET4").unwrap();
        let t = Instant::now();
        for i in 0..100 {
            let w = fractoseg_core::augment::apply_weak(&imgs[0], None, &strat, i).unwrap();
            fractoseg_core::augment::apply_strong(&w, &strat, i).unwrap();
        }
        println!("augment: {:.3} ms per patch", t.elapsed().as_secs_f64() * 10.0);
    }
    for mode in [Mode::Supervised, Mode::SemiSupervised] {
        let cfg = TrainerConfig {
            mode,
            model: ModelConfig::small_unet(patch as u32, base),
            batch_labeled: batch,
            batch_unlabeled: batch,
            tau: 0.0,
            ramp: fractoseg_seg::RampSchedule { lambda_max: 1.0, ramp_epochs: 0.0 },
            ..Default::default()
        };
        let mut tr = Trainer::new(cfg, &data).unwrap();
        let t = Instant::now();
        let n = 10;
        for _ in 0..n {
            tr.train_step(0).unwrap();
        }
        println!("{mode:?}: {:.1} ms/step", t.elapsed().as_secs_f64() * 1000.0 / n as f64);
    }
}
