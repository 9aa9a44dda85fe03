//! Trainer behavior on planted data, sampling statistics and the shuffled
//! AUC null distribution.

mod common;

use gazekit::baseline::kde_density;
use gazekit::config::TrainConfig;
use gazekit::data::FeatureRef;
use gazekit::density::{sample_fixations, CenterBiasPrior, DensityMap};
use gazekit::metrics::shuffled_auc;
use gazekit::optim::Adam;
use gazekit::readout::init_params;
use gazekit::trainer::{
    finetune_cv, mean_log_likelihood, nll_loss_and_grads, predict, should_stop, train_run,
    EpochHistory, PredictMode, TrainImage,
};
use gazekit::{Cell, Grid, GridShape};
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn train_images(set: &[common::PlantedImage]) -> Vec<TrainImage> {
    set.iter()
        .map(|img| TrainImage {
            id: img.features.image_id().to_owned(),
            features: FeatureRef::from(img.features.clone()),
            fixations: img.subjects.values().flatten().copied().collect(),
        })
        .collect()
}

fn small_cfg() -> TrainConfig {
    TrainConfig {
        min_epochs: 20,
        max_epochs: 30,
        batch_size_finetune: 3,
        batch_size_pretrain: 3,
        learning_rate: 0.02,
        folds: 3,
        ..TrainConfig::default()
    }
}

#[test]
fn uniform_sampling_passes_chi_square() {
    let shape = GridShape::new(4, 4);
    let p = DensityMap::uniform("u", shape);
    let n = 1_000_000;
    let mut counts = [0usize; 16];
    for c in sample_fixations(&p, n, 2024).unwrap() {
        counts[shape.index(c)] += 1;
    }
    let expected = n as f64 / 16.0;
    let stat: f64 = counts.iter().map(|&o| (o as f64 - expected).powi(2) / expected).sum();
    let critical = ChiSquared::new(15.0).unwrap().inverse_cdf(0.999);
    assert!(stat < critical, "chi-square {stat} >= {critical}");
}

#[test]
fn sampling_is_seeded() {
    let p = DensityMap::new("p", Grid::new(2, 3, vec![0.1, 0.2, 0.3, 0.15, 0.05, 0.2]).unwrap()).unwrap();
    assert_eq!(sample_fixations(&p, 500, 1).unwrap(), sample_fixations(&p, 500, 1).unwrap());
    assert_ne!(sample_fixations(&p, 500, 1).unwrap(), sample_fixations(&p, 500, 2).unwrap());
}

#[test]
fn shuffled_auc_null_is_one_half() {
    // A broad center bias: positives and negatives both come from it, so the
    // map carries no information beyond what the negatives already have.
    let shape = GridShape::new(64, 64);
    let center = Cell::new(32, 32);
    let cb = DensityMap::new("cb", kde_density(&[center], shape, 12.0).unwrap()).unwrap();
    let mut total = 0.0;
    for seed in 0..100u64 {
        let fix = sample_fixations(&cb, 30, 2 * seed).unwrap();
        let pool = sample_fixations(&cb, 5000, 2 * seed + 1).unwrap();
        total += shuffled_auc(cb.grid(), &fix, &pool, seed).unwrap();
    }
    let mean = total / 100.0;
    assert!((mean - 0.5).abs() < 0.02, "mean sAUC {mean}");
}

#[test]
fn loss_decreases_over_first_epoch() {
    let shape = GridShape::new(24, 24);
    let data = train_images(&common::planted_set("l", 12, shape, 6, 5, 10, 77));
    let prior = CenterBiasPrior::uniform(shape);
    let mut params = init_params(&[6, 16, 32, 2, 1], 3).unwrap();
    let before = -mean_log_likelihood(&data, &params, &prior).unwrap();
    let mut flat = params.to_flat();
    let mut adam = Adam::new(flat.len());
    for batch in data.chunks(3) {
        let lg = nll_loss_and_grads(batch, &params, &prior).unwrap();
        adam.step(&mut flat, &lg.grads.to_flat(), 0.02).unwrap();
        params.set_flat(&flat).unwrap();
    }
    let after = -mean_log_likelihood(&data, &params, &prior).unwrap();
    assert!(after < before, "loss {before} -> {after}");
}

#[test]
fn training_is_deterministic_and_ignores_validation_order() {
    let shape = GridShape::new(16, 16);
    let train = train_images(&common::planted_set("t", 6, shape, 4, 3, 10, 5));
    let val = train_images(&common::planted_set("v", 3, shape, 4, 3, 10, 6));
    let mut val_rev = val.clone();
    for img in &mut val_rev {
        img.fixations.reverse();
    }
    let prior = CenterBiasPrior::uniform(shape);
    let cfg = small_cfg();
    let init = init_params(&[4, 16, 32, 2, 1], 1).unwrap();
    let run = |v: &[TrainImage]| {
        train_run("r", &train, init.clone(), &prior, &cfg, 3, 9, &mut |p| mean_log_likelihood(v, p, &prior))
            .unwrap()
    };
    let a = run(&val);
    let b = run(&val);
    let c = run(&val_rev);
    assert_eq!(a.params, b.params);
    assert_eq!(a.history.entries(), b.history.entries());
    assert_eq!(a.params, c.params);
}

#[test]
fn improving_validation_runs_to_max_epochs() {
    let shape = GridShape::new(8, 8);
    let train = train_images(&common::planted_set("m", 3, shape, 2, 2, 5, 8));
    let prior = CenterBiasPrior::uniform(shape);
    let cfg = small_cfg();
    let mut calls = 0.0;
    let out = train_run("m", &train, init_params(&[2, 1], 0).unwrap(), &prior, &cfg, 2, 0, &mut |_| {
        calls += 1.0;
        Ok(calls)
    })
    .unwrap();
    assert_eq!(out.history.len(), cfg.max_epochs);
    assert_eq!(out.best_epoch, cfg.max_epochs);
}

#[test]
fn finetune_folds_are_consistent() {
    let shape = GridShape::new(12, 12);
    let set = common::planted_set("f", 9, shape, 3, 3, 8, 12);
    let images = train_images(&set);
    let prior = CenterBiasPrior::uniform(shape);
    let cfg = small_cfg();
    let pretrained = init_params(&[3, 4, 4, 2, 1], 2).unwrap();
    let (bundle, runs) = finetune_cv(&images, &pretrained, &prior, &cfg, 3).unwrap();
    assert_eq!(bundle.folds.len(), 3);
    assert_eq!(bundle.fold_of.len(), 9);
    for fold in 0..3 {
        assert_eq!(bundle.fold_of.values().filter(|&&f| f == fold).count(), 3);
    }
    for r in &runs {
        let metrics: Vec<f64> = r.history.entries().iter().map(|e| e.1).collect();
        assert!(should_stop(&EpochHistory::from_metrics(&metrics), &cfg));
        for e in 1..metrics.len() {
            assert!(!should_stop(&EpochHistory::from_metrics(&metrics[..e]), &cfg));
        }
    }
    // Leave-out prediction is the held-out fold's model.
    for img in &set {
        let id = img.features.image_id();
        let fold = bundle.fold_of[id];
        let a = predict(&bundle, &img.features, PredictMode::LeaveOut, true).unwrap();
        let b = predict(&bundle, &img.features, PredictMode::Single(fold), true).unwrap();
        assert_eq!(a, b);
    }
    assert!(finetune_cv(&images, &pretrained, &prior, &cfg, 1).is_err());
    assert!(finetune_cv(&images[..2], &pretrained, &prior, &cfg, 3).is_err());
}
