//! Maximum-likelihood training of readout networks.
//!
//! The loss is the negative average log-likelihood of the training
//! fixations in bits per fixation. Gradients flow back through the softmax,
//! the center-bias addition and the blur (including its bandwidth) into the
//! readout parameters. Features are frozen and never differentiated.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{OptimizerKind, TrainConfig};
use crate::data::{FeatureRef, FeatureStack};
use crate::density::{
    add_center_bias, blur_backward, gaussian_blur, log_softmax2d, read_prior_bandwidth,
    softmax2d, CenterBiasPrior, DensityMap,
};
use crate::error::{Error, Result};
use crate::grid::{Cell, Grid};
use crate::optim::{lbfgs_minimize, Adam};
use crate::readout::{
    init_params, load_params, readout_backward, readout_forward, save_params, ParamGradients,
    ReadoutParams,
};

/// One training or validation image: its features and grid fixations.
#[derive(Debug, Clone)]
pub struct TrainImage {
    pub id: String,
    pub features: FeatureRef,
    pub fixations: Vec<Cell>,
}

#[derive(Debug, Clone)]
pub struct LossAndGrads {
    /// Negative mean log-likelihood, bits per fixation.
    pub loss_bits: f64,
    pub n_fixations: usize,
    pub grads: ParamGradients,
}

struct ImageTerm {
    nll_nats: f64,
    n: usize,
    grads: Option<ParamGradients>,
}

fn image_term(
    img: &TrainImage,
    params: &ReadoutParams,
    prior: &CenterBiasPrior,
    with_grads: bool,
) -> Result<ImageTerm> {
    if img.fixations.is_empty() {
        return Err(Error::Invalid(format!("image {} has no fixations", img.id)));
    }
    let features = img.features.get()?;
    let shape = features.shape();
    if let Some(c) = img.fixations.iter().find(|c| !shape.contains(**c)) {
        return Err(Error::Invalid(format!(
            "fixation {c:?} outside {shape} grid of image {}",
            img.id
        )));
    }
    let prior = prior.matching(shape)?;
    let sigma = params.sigma();
    let (o, cache) = readout_forward(&features, params)?;
    let s = gaussian_blur(&o, sigma)?;
    let log_p = log_softmax2d(&add_center_bias(&s, &prior)?)?;
    let nll_nats = -img.fixations.iter().map(|&c| log_p.get(c)).sum::<f64>();
    if !nll_nats.is_finite() {
        return Err(Error::Numerical(format!(
            "non-finite log-likelihood on image {}",
            img.id
        )));
    }
    let grads = if with_grads {
        let n = img.fixations.len() as f64;
        let mut grad_s = log_p.map(|v| n * v.exp());
        for &c in &img.fixations {
            grad_s.set(c, grad_s.get(c) - 1.0);
        }
        let (grad_o, grad_rho) = blur_backward(&grad_s, &o, sigma)?;
        let mut g = readout_backward(&cache, params, &grad_o)?;
        g.rho = grad_rho;
        Some(g)
    } else {
        None
    };
    Ok(ImageTerm {
        nll_nats,
        n: img.fixations.len(),
        grads,
    })
}

fn batch_terms(
    batch: &[TrainImage],
    params: &ReadoutParams,
    prior: &CenterBiasPrior,
    with_grads: bool,
) -> Result<Vec<ImageTerm>> {
    batch
        .par_iter()
        .map(|img| image_term(img, params, prior, with_grads))
        .collect()
}

/// Loss in bits per fixation over all fixations of the batch, and its
/// gradient with respect to every readout parameter and `rho`.
pub fn nll_loss_and_grads(
    batch: &[TrainImage],
    params: &ReadoutParams,
    prior: &CenterBiasPrior,
) -> Result<LossAndGrads> {
    if batch.is_empty() {
        return Err(Error::Invalid("empty batch".into()));
    }
    let terms = batch_terms(batch, params, prior, true)?;
    let mut grads = params.zeros_like();
    let mut nll = 0.0;
    let mut n = 0;
    for t in &terms {
        nll += t.nll_nats;
        n += t.n;
        grads.add_assign(t.grads.as_ref().unwrap());
    }
    let scale = 1.0 / (n as f64 * std::f64::consts::LN_2);
    grads.scale(scale);
    Ok(LossAndGrads {
        loss_bits: nll * scale,
        n_fixations: n,
        grads,
    })
}

/// Average log-likelihood in bits per fixation (forward pass only).
pub fn mean_log_likelihood(
    images: &[TrainImage],
    params: &ReadoutParams,
    prior: &CenterBiasPrior,
) -> Result<f64> {
    if images.is_empty() {
        return Err(Error::Invalid("no images to evaluate".into()));
    }
    let terms = batch_terms(images, params, prior, false)?;
    let nll: f64 = terms.iter().map(|t| t.nll_nats).sum();
    let n: usize = terms.iter().map(|t| t.n).sum();
    Ok(-nll / (n as f64 * std::f64::consts::LN_2))
}

/// Validation metric per epoch (1-based epochs), higher is better.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EpochHistory {
    entries: Vec<(usize, f64)>,
}

impl EpochHistory {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a history for epochs `1..=metrics.len()`.
    pub fn from_metrics(metrics: &[f64]) -> Self {
        EpochHistory {
            entries: metrics.iter().enumerate().map(|(i, &m)| (i + 1, m)).collect(),
        }
    }

    pub fn push(&mut self, epoch: usize, metric: f64) -> Result<()> {
        if let Some(&(last, _)) = self.entries.last() {
            if epoch <= last {
                return Err(Error::Invalid(format!(
                    "epoch {epoch} does not follow epoch {last}"
                )));
            }
        }
        self.entries.push((epoch, metric));
        Ok(())
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn last_epoch(&self) -> usize {
        self.entries.last().map_or(0, |e| e.0)
    }
}

/// Stops after `max_epochs`, never before `min_epochs`, and otherwise once
/// each of the last `window` epochs is worse than the epoch `lookback`
/// epochs before it.
pub fn should_stop(history: &EpochHistory, cfg: &TrainConfig) -> bool {
    let epochs = history.len();
    if epochs >= cfg.max_epochs {
        return true;
    }
    if epochs < cfg.min_epochs || epochs < cfg.window + cfg.lookback {
        return false;
    }
    let m = |i: usize| history.entries[i].1;
    (0..cfg.window).all(|k| {
        let recent = epochs - 1 - k;
        m(recent) < m(recent - cfg.lookback)
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub run: String,
    pub epoch: usize,
    pub train_ll: f64,
    pub val_ll: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    /// Parameters of the best validation epoch.
    pub params: ReadoutParams,
    pub history: EpochHistory,
    pub best_epoch: usize,
    pub best_val: f64,
    pub log: Vec<EpochLog>,
}

impl RunOutcome {
    pub fn stop_epoch(&self) -> usize {
        self.history.last_epoch()
    }
}

pub fn derive_seed(base: u64, tag: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = base ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE5_E9B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One training run: seeded shuffled mini-batches with Adam, one validation
/// per epoch through `validate`, stopping per [`should_stop`]. Returns the
/// best-epoch parameters.
#[allow(clippy::too_many_arguments)]
pub fn train_run(
    run: &str,
    train: &[TrainImage],
    init: ReadoutParams,
    prior: &CenterBiasPrior,
    cfg: &TrainConfig,
    batch_size: usize,
    seed: u64,
    validate: &mut dyn FnMut(&ReadoutParams) -> Result<f64>,
) -> Result<RunOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Invalid(format!("{run}: empty training set")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = init;
    let mut flat = params.to_flat();
    let mut adam = Adam::new(flat.len());
    let mut history = EpochHistory::new();
    let mut log = Vec::new();
    let mut best = (params.clone(), 0usize, f64::NEG_INFINITY);
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        let lr = cfg.learning_rate * cfg.lr_decay.powi(epoch as i32 - 1);
        order.shuffle(&mut rng);
        let mut ll_sum = 0.0;
        let mut n_sum = 0usize;
        for chunk in order.chunks(batch_size) {
            let batch: Vec<TrainImage> = chunk.iter().map(|&i| train[i].clone()).collect();
            let lg = nll_loss_and_grads(&batch, &params, prior)?;
            ll_sum -= lg.loss_bits * lg.n_fixations as f64;
            n_sum += lg.n_fixations;
            adam.step(&mut flat, &lg.grads.to_flat(), lr)?;
            params.set_flat(&flat)?;
            if flat.iter().any(|v| !v.is_finite()) || !params.sigma().is_finite() || params.sigma() <= 0.0 {
                return Err(Error::Numerical(format!(
                    "{run}: parameters diverged at epoch {epoch} (sigma = {})",
                    params.sigma()
                )));
            }
        }
        let val = validate(&params)?;
        if !val.is_finite() {
            return Err(Error::Numerical(format!("{run}: validation metric {val} at epoch {epoch}")));
        }
        history.push(epoch, val)?;
        log.push(EpochLog {
            run: run.to_owned(),
            epoch,
            train_ll: ll_sum / n_sum as f64,
            val_ll: val,
        });
        if val > best.2 {
            best = (params.clone(), epoch, val);
        }
        log::debug!("{run} epoch {epoch}: train {:.4} val {val:.4}", ll_sum / n_sum as f64);
        if should_stop(&history, cfg) {
            break;
        }
    }

    let (mut params, best_epoch, mut best_val) = best;
    if cfg.optimizer == OptimizerKind::AdamLbfgs && cfg.lbfgs_iters > 0 {
        let mut probe = params.clone();
        let (x, _) = lbfgs_minimize(
            |x| {
                probe.set_flat(x)?;
                let lg = nll_loss_and_grads(train, &probe, prior)?;
                Ok((lg.loss_bits, lg.grads.to_flat()))
            },
            &params.to_flat(),
            cfg.lbfgs_iters,
            cfg.lbfgs_memory,
        )?;
        let mut refined = params.clone();
        refined.set_flat(&x)?;
        let val = validate(&refined)?;
        log::info!("{run}: L-BFGS refinement val {val:.4} (best epoch {best_val:.4})");
        if val >= best_val {
            let train_ll = mean_log_likelihood(train, &refined, prior)?;
            log.push(EpochLog {
                run: format!("{run}+lbfgs"),
                epoch: history.last_epoch() + 1,
                train_ll,
                val_ll: val,
            });
            params = refined;
            best_val = val;
        }
    }
    Ok(RunOutcome {
        params,
        history,
        best_epoch,
        best_val,
        log,
    })
}

/// Trains a freshly initialized readout on `train`, stopping on `val`.
pub fn pretrain(
    train: &[TrainImage],
    val: &[TrainImage],
    prior: &CenterBiasPrior,
    cfg: &TrainConfig,
) -> Result<RunOutcome> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::Invalid("pretraining needs non-empty train and validation sets".into()));
    }
    let channels = train[0].features.get()?.channels();
    let init = init_params(&cfg.channel_plan(channels), cfg.seed)?;
    train_run(
        "pretrain",
        train,
        init,
        prior,
        cfg,
        cfg.batch_size_pretrain,
        derive_seed(cfg.seed, 0),
        &mut |p| mean_log_likelihood(val, p, prior),
    )
}

/// Seeded split of images into `k` folds whose sizes differ by at most one.
pub fn assign_folds(ids: &[String], k: usize, seed: u64) -> Result<BTreeMap<String, usize>> {
    if k < 2 {
        return Err(Error::Invalid(format!("need at least 2 folds, got {k}")));
    }
    let mut sorted: Vec<&String> = ids.iter().collect();
    sorted.sort();
    sorted.dedup();
    if sorted.len() < k {
        return Err(Error::Invalid(format!(
            "{} images cannot fill {k} folds",
            sorted.len()
        )));
    }
    sorted.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(sorted
        .into_iter()
        .enumerate()
        .map(|(i, id)| (id.clone(), i % k))
        .collect())
}

/// Pretrained readout, one fine-tuned readout per fold, the fold map and
/// the center-bias prior.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub pretrained: ReadoutParams,
    pub folds: Vec<ReadoutParams>,
    /// Image id → the fold it was held out in.
    pub fold_of: BTreeMap<String, usize>,
    pub prior: CenterBiasPrior,
    pub prior_bandwidth: Option<f64>,
    pub feature_subset: Option<Vec<usize>>,
}

/// `k`-fold image-crossvalidated fine-tuning from `pretrained`. Model `i`
/// trains on every fold but `i` and stops on fold `i`.
pub fn finetune_cv(
    images: &[TrainImage],
    pretrained: &ReadoutParams,
    prior: &CenterBiasPrior,
    cfg: &TrainConfig,
    k: usize,
) -> Result<(ModelBundle, Vec<RunOutcome>)> {
    let ids: Vec<String> = images.iter().map(|i| i.id.clone()).collect();
    let fold_of = assign_folds(&ids, k, derive_seed(cfg.seed, 0xF01D))?;
    let runs: Vec<RunOutcome> = (0..k)
        .into_par_iter()
        .map(|fold| {
            let (held, train): (Vec<TrainImage>, Vec<TrainImage>) =
                images.iter().cloned().partition(|img| fold_of[&img.id] == fold);
            train_run(
                &format!("fold_{fold}"),
                &train,
                pretrained.clone(),
                prior,
                cfg,
                cfg.batch_size_finetune,
                derive_seed(cfg.seed, fold as u64 + 1),
                &mut |p| mean_log_likelihood(&held, p, prior),
            )
        })
        .collect::<Result<_>>()?;
    let bundle = ModelBundle {
        pretrained: pretrained.clone(),
        folds: runs.iter().map(|r| r.params.clone()).collect(),
        fold_of,
        prior: prior.clone(),
        prior_bandwidth: None,
        feature_subset: cfg.feature_subset(),
    };
    Ok((bundle, runs))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictMode {
    /// Average of all fold densities.
    Mixture,
    /// The fold model that did not train on this image.
    LeaveOut,
    Single(usize),
    Pretrained,
}

/// Density of one readout: blur, add prior, softmax.
pub fn model_density(
    features: &FeatureStack,
    params: &ReadoutParams,
    prior: &CenterBiasPrior,
) -> Result<DensityMap> {
    let prior = prior.matching(features.shape())?;
    let (o, _) = readout_forward(features, params)?;
    let s = gaussian_blur(&o, params.sigma())?;
    Ok(softmax2d(&add_center_bias(&s, &prior)?)?.with_id(features.image_id()))
}

/// Arithmetic mean of densities on one grid, renormalized.
pub fn mixture_density(image_id: &str, parts: &[DensityMap]) -> Result<DensityMap> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Invalid("empty mixture".into()))?;
    let shape = first.shape();
    let mut acc = Grid::zeros(shape);
    for d in parts {
        d.grid().ensure_shape(shape, "mixture component")?;
        for (a, v) in acc.as_mut_slice().iter_mut().zip(d.grid().as_slice()) {
            *a += v;
        }
    }
    let k = parts.len() as f64;
    acc.as_mut_slice().iter_mut().for_each(|v| *v /= k);
    DensityMap::normalized(image_id, acc)
}

pub fn predict(
    bundle: &ModelBundle,
    image: &FeatureStack,
    mode: PredictMode,
    with_center_bias: bool,
) -> Result<DensityMap> {
    let uniform;
    let prior = if with_center_bias {
        &bundle.prior
    } else {
        uniform = CenterBiasPrior::uniform(image.shape());
        &uniform
    };
    let id = image.image_id();
    match mode {
        PredictMode::Pretrained => model_density(image, &bundle.pretrained, prior),
        PredictMode::Single(i) => {
            let params = bundle.folds.get(i).ok_or_else(|| {
                Error::Invalid(format!("bundle has {} fold models, asked for {i}", bundle.folds.len()))
            })?;
            model_density(image, params, prior)
        }
        PredictMode::LeaveOut => {
            let fold = *bundle.fold_of.get(id).ok_or_else(|| {
                Error::Invalid(format!("image {id} is not in the bundle's fold map"))
            })?;
            let params = bundle.folds.get(fold).ok_or_else(|| {
                Error::Invalid(format!("fold {fold} has no model"))
            })?;
            model_density(image, params, prior)
        }
        PredictMode::Mixture => {
            if bundle.folds.is_empty() {
                return Err(Error::Invalid("bundle has no fold models to mix".into()));
            }
            let parts: Vec<DensityMap> = bundle
                .folds
                .par_iter()
                .map(|p| model_density(image, p, prior))
                .collect::<Result<_>>()?;
            mixture_density(id, &parts)
        }
    }
}

pub const BUNDLE_META: &str = "bundle.txt";

impl ModelBundle {
    /// Writes the bundle files into an existing directory.
    pub fn save(&self, dir: &Path) -> Result<()> {
        save_params(&self.pretrained, &dir.join("pretrained.rpar"))?;
        for (i, p) in self.folds.iter().enumerate() {
            save_params(p, &dir.join(format!("fold_{i}.rpar")))?;
        }
        let mut folds = String::from("image_id,fold\n");
        for (id, f) in &self.fold_of {
            writeln!(folds, "{id},{f}").unwrap();
        }
        let path = dir.join("folds.csv");
        fs::write(&path, folds).map_err(|e| Error::io(&path, e))?;
        self.prior.save(&dir.join("centerbias.fmap"), self.prior_bandwidth)?;
        let mut meta = format!("folds={}\n", self.folds.len());
        if let Some(s) = &self.feature_subset {
            let list: Vec<String> = s.iter().map(|c| c.to_string()).collect();
            writeln!(meta, "feature_subset={}", list.join(",")).unwrap();
        }
        let path = dir.join(BUNDLE_META);
        fs::write(&path, meta).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta_path = dir.join(BUNDLE_META);
        let meta = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let mut n_folds = 0;
        let mut feature_subset = None;
        for line in meta.lines() {
            match line.split_once('=') {
                Some(("folds", v)) => {
                    n_folds = v.trim().parse().map_err(|_| Error::Format(format!("bad folds line {line:?}")))?
                }
                Some(("feature_subset", v)) => {
                    feature_subset = Some(crate::config::parse_channel_list(v)?)
                }
                _ => {}
            }
        }
        let pretrained = load_params(&dir.join("pretrained.rpar"))?;
        let folds = (0..n_folds)
            .map(|i| load_params(&dir.join(format!("fold_{i}.rpar"))))
            .collect::<Result<Vec<_>>>()?;
        let folds_path = dir.join("folds.csv");
        let mut reader = csv::Reader::from_path(&folds_path)?;
        let mut fold_of = BTreeMap::new();
        for row in reader.records() {
            let row = row?;
            let fold: usize = row
                .get(1)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Format(format!("bad row in {}", folds_path.display())))?;
            if fold >= n_folds {
                return Err(Error::Format(format!("fold {fold} out of range")));
            }
            fold_of.insert(row[0].to_owned(), fold);
        }
        let prior_path = dir.join("centerbias.fmap");
        let prior = CenterBiasPrior::load(&prior_path)?;
        Ok(ModelBundle {
            pretrained,
            folds,
            fold_of,
            prior,
            prior_bandwidth: read_prior_bandwidth(&prior_path),
            feature_subset,
        })
    }
}

pub fn format_train_log(rows: &[EpochLog]) -> String {
    let mut out = String::from("run,epoch,train_ll,val_ll\n");
    for r in rows {
        writeln!(out, "{},{},{},{}", r.run, r.epoch, r.train_ll, r.val_ll).unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridShape;
    use crate::readout::default_plan;

    fn cfg() -> TrainConfig {
        TrainConfig::default()
    }

    fn image(id: &str, c: usize, h: usize, w: usize, seed: u64, fix: Vec<Cell>) -> TrainImage {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = (0..c * h * w).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        TrainImage {
            id: id.into(),
            features: FeatureStack::new(id, c, h, w, v).unwrap().into(),
            fixations: fix,
        }
    }

    #[test]
    fn uniform_density_loss() {
        let img = image("a", 3, 96, 128, 1, vec![Cell::new(5, 5), Cell::new(100, 90)]);
        let params = ReadoutParams::zeros(&default_plan(3)).unwrap();
        let prior = CenterBiasPrior::uniform(GridShape::new(96, 128));
        let lg = nll_loss_and_grads(&[img], &params, &prior).unwrap();
        assert!((lg.loss_bits - (96.0f64 * 128.0).log2()).abs() < 1e-9);
        assert!((lg.loss_bits - 13.585).abs() < 1e-3);
    }

    #[test]
    fn pure_prior_loss() {
        let shape = GridShape::new(6, 5);
        let prior = CenterBiasPrior::from_log_weights(Grid::from_fn(shape, |c| (c.x * c.y) as f64 * 0.1)).unwrap();
        let fix = vec![Cell::new(1, 2), Cell::new(4, 5), Cell::new(0, 0)];
        let img = image("a", 2, 6, 5, 2, fix.clone());
        let params = ReadoutParams::zeros(&default_plan(2)).unwrap();
        let lg = nll_loss_and_grads(&[img], &params, &prior).unwrap();
        let want = -fix
            .iter()
            .map(|&c| prior.log_density().get(c) / std::f64::consts::LN_2)
            .sum::<f64>()
            / 3.0;
        assert!((lg.loss_bits - want).abs() < 1e-12);
    }

    #[test]
    fn loss_errors() {
        let params = ReadoutParams::zeros(&default_plan(2)).unwrap();
        let prior = CenterBiasPrior::uniform(GridShape::new(4, 4));
        assert!(nll_loss_and_grads(&[], &params, &prior).is_err());
        let img = image("a", 2, 4, 4, 1, vec![Cell::new(4, 0)]);
        assert!(nll_loss_and_grads(&[img], &params, &prior).is_err());
    }

    #[test]
    fn stopping_rule_examples() {
        let c = cfg();
        let rising: Vec<f64> = (0..19).map(|i| i as f64).collect();
        assert!(!should_stop(&EpochHistory::from_metrics(&rising), &c));
        let falling: Vec<f64> = (0..19).map(|i| -(i as f64)).collect();
        assert!(!should_stop(&EpochHistory::from_metrics(&falling), &c));
        assert!(should_stop(&EpochHistory::from_metrics(&vec![1.0; 800]), &c));
        let rising: Vec<f64> = (0..25).map(|i| i as f64).collect();
        assert!(!should_stop(&EpochHistory::from_metrics(&rising), &c));
        let mut m: Vec<f64> = (0..25).map(|i| i as f64).collect();
        m[22] = 0.0;
        m[23] = 0.0;
        m[24] = 0.0;
        assert!(should_stop(&EpochHistory::from_metrics(&m), &c));
    }

    #[test]
    fn history_must_increase() {
        let mut h = EpochHistory::new();
        h.push(1, 0.0).unwrap();
        assert!(h.push(1, 0.0).is_err());
    }

    #[test]
    fn fold_sizes_balanced() {
        let ids: Vec<String> = (0..1003).map(|i| format!("img{i:04}")).collect();
        let folds = assign_folds(&ids, 10, 7).unwrap();
        assert_eq!(folds.len(), 1003);
        let mut sizes = [0usize; 10];
        for &f in folds.values() {
            sizes[f] += 1;
        }
        assert!(sizes.iter().all(|&s| s == 100 || s == 101), "{sizes:?}");
        assert!(assign_folds(&ids, 1, 7).is_err());
        assert!(assign_folds(&ids[..3], 4, 7).is_err());
    }

    #[test]
    fn identical_models_mix_to_themselves() {
        let shape = GridShape::new(4, 5);
        let img = image("a", 3, 4, 5, 3, vec![]);
        let features = img.features.get().unwrap();
        let params = init_params(&default_plan(3), 1).unwrap();
        let prior = CenterBiasPrior::uniform(shape);
        let bundle = ModelBundle {
            pretrained: params.clone(),
            folds: vec![params.clone(); 10],
            fold_of: BTreeMap::new(),
            prior,
            prior_bandwidth: None,
            feature_subset: None,
        };
        let single = predict(&bundle, &features, PredictMode::Single(3), true).unwrap();
        let mix = predict(&bundle, &features, PredictMode::Mixture, true).unwrap();
        for (a, b) in single.grid().as_slice().iter().zip(mix.grid().as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(predict(&bundle, &features, PredictMode::LeaveOut, true).is_err());
    }

    #[test]
    fn two_model_mixture_is_elementwise_mean() {
        let a = DensityMap::new("x", Grid::new(2, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap()).unwrap();
        let b = DensityMap::new("x", Grid::new(2, 2, vec![0.5, 0.25, 0.125, 0.125]).unwrap()).unwrap();
        let m = mixture_density("x", &[a, b]).unwrap();
        let want = [0.3, 0.225, 0.2125, 0.2625];
        for (g, w) in m.grid().as_slice().iter().zip(want) {
            assert!((g - w).abs() < 1e-15);
        }
    }
}
