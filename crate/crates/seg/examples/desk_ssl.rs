//! Runs the desk experiment for one seed: supervised baseline vs semi-supervised.
//! Usage: desk_ssl SEED [key=value ...] with keys epochs, strategy, base, tau,
//! lambda, ramp, batch, lr, steps, only=sup|ssl.

use std::time::Instant;

use fractoseg_seg::desk::{desk_trainer, DeskSetup};
use fractoseg_seg::infer::EvalSummary;
use fractoseg_seg::{evaluate, train_semi_supervised, train_supervised, ModelConfig, StrategyRef};

fn main() {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map(|s| s.parse().unwrap()).unwrap_or(0);
    let mut cfg = desk_trainer(seed);
    let mut only = String::new();
    for kv in args {
        let (k, v) = kv.split_once('=').unwrap();
        match k {
            "epochs" => cfg.epochs = v.parse().unwrap(),
            "strategy" => cfg.strategy = StrategyRef::Named(v.into()),
            "base" => cfg.model = ModelConfig::small_unet(cfg.model.input_size, v.parse().unwrap()),
            "patch" => cfg.model = ModelConfig::small_unet(v.parse().unwrap(), cfg.model.base_channels),
            "tau" => cfg.tau = v.parse().unwrap(),
            "lambda" => cfg.ramp.lambda_max = v.parse().unwrap(),
            "ramp" => cfg.ramp.ramp_epochs = v.parse().unwrap(),
            "batch" => {
                cfg.batch_labeled = v.parse().unwrap();
                cfg.batch_unlabeled = cfg.batch_labeled;
            }
            "lr" => cfg.optimizer.lr = v.parse().unwrap(),
            "steps" => cfg.steps_per_epoch = Some(v.parse().unwrap()),
            "only" => only = v.into(),
            _ => panic!("unknown key {k}"),
        }
    }
    let data = DeskSetup::default().build(seed).unwrap();
    let t = Instant::now();
    if only != "ssl" {
        let sup = train_supervised(&cfg, &data.train, None).unwrap();
        let s = EvalSummary::from_reports(&evaluate(&sup.best.model, &data.test).unwrap());
        let l = sup.log.records.last().unwrap();
        println!("SUP best_epoch={:?} last_val={:?} test_miou={:.4} last_miou={:.4} t={:.0}s", sup.log.best_epoch, l.val_dice_loss, s.miou,
            EvalSummary::from_reports(&evaluate(&sup.last.model, &data.test).unwrap()).miou, t.elapsed().as_secs_f64());
    }
    if only != "sup" {
        let t = Instant::now();
        let ssl = train_semi_supervised(&cfg, &data.train, None).unwrap();
        for r in ssl.log.records.iter().step_by(5) {
            println!("  e{} L={:.3} Ls={:.3} Lu={:.3} lam={:.3} vf={:.3} val={:.3}", r.epoch, r.loss, r.supervised, r.unsupervised, r.lambda, r.valid_fraction, r.val_dice_loss.unwrap());
        }
        let s = EvalSummary::from_reports(&evaluate(&ssl.best.model, &data.test).unwrap());
        println!("SSL best_epoch={:?} test_miou={:.4} last_miou={:.4} t={:.0}s", ssl.log.best_epoch, s.miou,
            EvalSummary::from_reports(&evaluate(&ssl.last.model, &data.test).unwrap()).miou, t.elapsed().as_secs_f64());
    }
}
