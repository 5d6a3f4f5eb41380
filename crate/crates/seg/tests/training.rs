use fractoseg_core::imageops::to_f32;
use fractoseg_core::patching::{slice_image, slice_mask};
use fractoseg_core::synth::{generate_dataset, Profile, SizeRange};
use fractoseg_core::NUM_CLASSES;
use fractoseg_nn::{Adam, GradStore, Graph};
use fractoseg_seg::losses::supervised_loss;
use fractoseg_seg::{
    train_semi_supervised, train_supervised, LabeledSample, ModelConfig, SegModel, TrainData, TrainerConfig,
    UnlabeledSample,
};
use image::Rgb32FImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn data(n_lab: usize, n_unl: usize, seed: u64) -> TrainData {
    let ds = generate_dataset(Profile::Het, (n_lab + n_unl).max(4), seed, 0.0, SizeRange { min: 64, max: 72 }).unwrap();
    let mut d = TrainData::default();
    for (i, s) in ds.samples.iter().enumerate().take(n_lab + n_unl) {
        let image = to_f32(&s.image);
        if i < n_lab {
            d.labeled.push(LabeledSample {
                id: s.meta.id.clone(),
                image,
                mask: s.mask.clone(),
            });
        } else {
            d.unlabeled.push(UnlabeledSample {
                id: s.meta.id.clone(),
                image,
            });
        }
    }
    d.val.push(d.labeled[0].clone());
    d
}

fn noise(size: u32, seed: u64) -> Rgb32FImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Rgb32FImage::from_fn(size, size, |_, _| image::Rgb([rng.gen(), rng.gen(), rng.gen()]))
}

/// Chi-square statistic of observed counts against a uniform expectation.
fn chi_square(counts: &[usize]) -> f64 {
    let n: usize = counts.iter().sum();
    let e = n as f64 / counts.len() as f64;
    counts.iter().map(|&o| (o as f64 - e).powi(2) / e).sum()
}

#[test]
fn untrained_models_favour_no_class() {
    // Within one untrained network the pixels are strongly correlated, so the
    // unit of observation is each seed's majority class.
    let mut counts = [0usize; NUM_CLASSES];
    for seed in 0..70 {
        let model = SegModel::new(ModelConfig::small_unet(16, 4), seed).unwrap();
        let img = noise(16, 1000 + seed);
        let z = model.logits(&[&img], false).unwrap();
        let n = z.len() / NUM_CLASSES;
        let mut per = [0usize; NUM_CLASSES];
        for p in 0..n {
            let k = (0..NUM_CLASSES)
                .max_by(|&a, &b| z.data[a * n + p].total_cmp(&z.data[b * n + p]))
                .unwrap();
            per[k] += 1;
        }
        let major = (0..NUM_CLASSES).max_by_key(|&k| per[k]).unwrap();
        counts[major] += 1;
    }
    // 6 degrees of freedom, upper 0.1% point 22.458
    let chi2 = chi_square(&counts);
    assert!(chi2 < 22.458, "counts {counts:?} chi2 {chi2}");
}

#[test]
fn fixed_batch_loss_descends() {
    let d = data(2, 0, 5);
    let mut images = Vec::new();
    let mut masks = Vec::new();
    for s in &d.labeled {
        let (_, ip) = slice_image(&s.image, 32).unwrap();
        let (_, mp) = slice_mask(&s.mask, 32).unwrap();
        images.extend(ip.into_iter().take(2));
        masks.extend(mp.into_iter().take(2));
    }
    let mut model = SegModel::new(ModelConfig::small_unet(32, 8), 0).unwrap();
    let mut adam = Adam::new(Default::default(), &model.params);
    let x = model.batch(&images.iter().collect::<Vec<_>>()).unwrap();
    let mrefs: Vec<_> = masks.iter().collect();
    let mut losses = Vec::new();
    for _ in 0..50 {
        let mut grads = GradStore::new();
        let mut g = Graph::new(&model.params, true);
        let xi = g.input(x.clone());
        let z = model.forward(&mut g, xi);
        let l = supervised_loss(g.value(z), &mrefs).unwrap();
        g.backward(&[(z, &l.grad)], &mut grads);
        let bn = g.bn_updates();
        model.params.apply_updates(bn);
        adam.step(&mut model.params, &grads);
        losses.push(l.total);
    }
    let rises = losses.windows(2).filter(|w| w[1] > w[0]).count();
    assert!(rises <= 5, "{rises} rising steps: {losses:?}");
    assert!(losses[49] < 0.8 * losses[0], "{} -> {}", losses[0], losses[49]);
}

fn small_cfg() -> TrainerConfig {
    TrainerConfig {
        model: ModelConfig::small_unet(16, 4),
        epochs: 3,
        batch_labeled: 2,
        batch_unlabeled: 2,
        steps_per_epoch: Some(4),
        ..Default::default()
    }
}

#[test]
fn tau_one_trajectory_equals_supervised() {
    let d = data(3, 3, 7);
    let cfg = TrainerConfig { tau: 1.0, ..small_cfg() };
    let ssl = train_semi_supervised(&cfg, &d, None).unwrap();
    let sup = train_supervised(&cfg, &d, None).unwrap();
    for (a, b) in ssl.log.records.iter().zip(&sup.log.records) {
        assert_eq!(a.supervised, b.supervised);
        assert_eq!(a.unsupervised, 0.0);
        assert_eq!(a.val_dice_loss, b.val_dice_loss);
    }
    for id in sup.last.model.params.ids() {
        assert_eq!(sup.last.model.params.get(id), ssl.last.model.params.get(id));
    }
}

#[test]
fn records_are_ordered_and_finite() {
    let d = data(3, 3, 8);
    let out = train_semi_supervised(&small_cfg(), &d, None).unwrap();
    let r = &out.log.records;
    assert!(r.windows(2).all(|w| w[1].epoch > w[0].epoch));
    for e in r {
        for v in [e.loss, e.supervised, e.unsupervised, e.lambda, e.valid_fraction] {
            assert!(v.is_finite());
        }
        assert!((0.0..=1.0).contains(&e.valid_fraction));
    }
}
