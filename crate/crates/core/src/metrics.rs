//! Evaluation metrics. Log-likelihoods are reported in bits per fixation;
//! internal sums use natural logs and are converted once.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::baseline::{gold_log_likelihood, KdeModel};
use crate::data::FeatureRef;
use crate::density::{CenterBiasPrior, DensityMap};
use crate::error::{Error, Result};
use crate::grid::{Cell, Grid, GridShape};
use crate::trainer::{derive_seed, predict, ModelBundle, PredictMode};

/// Sum of natural-log densities at the fixations.
fn sum_ln(density: &DensityMap, fixations: &[Cell]) -> Result<f64> {
    let mut s = 0.0;
    for &c in fixations {
        if !density.shape().contains(c) {
            return Err(Error::Invalid(format!(
                "fixation {c:?} outside {} density of image {}",
                density.shape(),
                density.image_id
            )));
        }
        let p = density.at(c);
        if p <= 0.0 {
            return Err(Error::ZeroDensity {
                image_id: density.image_id.clone(),
            });
        }
        s += p.ln();
    }
    Ok(s)
}

/// `(1/N) Σ log2 p(x_i, y_i | I_i)` over all fixations of all images.
pub fn avg_log_likelihood(densities: &[DensityMap], fixations: &[Vec<Cell>]) -> Result<f64> {
    if densities.len() != fixations.len() {
        return Err(Error::Shape(format!(
            "{} densities for {} fixation lists",
            densities.len(),
            fixations.len()
        )));
    }
    let mut total = 0.0;
    let mut n = 0usize;
    for (d, f) in densities.iter().zip(fixations) {
        total += sum_ln(d, f)?;
        n += f.len();
    }
    if n == 0 {
        return Err(Error::Invalid("no fixations".into()));
    }
    Ok(total / (n as f64 * std::f64::consts::LN_2))
}

/// Model log-likelihood minus baseline log-likelihood, bits per fixation.
pub fn information_gain(
    model: &[DensityMap],
    baseline: &[DensityMap],
    fixations: &[Vec<Cell>],
) -> Result<f64> {
    Ok(avg_log_likelihood(model, fixations)? - avg_log_likelihood(baseline, fixations)?)
}

/// The model's information gain as a percentage of the gold standard's.
pub fn ig_explained_ratio(ig_model: f64, ig_gold: f64) -> Result<f64> {
    if !(ig_gold > 0.0) {
        return Err(Error::Numerical(format!(
            "gold-standard information gain {ig_gold} is not positive"
        )));
    }
    Ok(100.0 * (ig_model / ig_gold))
}

pub fn ig_explained(
    model: &[DensityMap],
    gold: &[DensityMap],
    baseline: &[DensityMap],
    fixations: &[Vec<Cell>],
) -> Result<f64> {
    let b = avg_log_likelihood(baseline, fixations)?;
    let ig_model = avg_log_likelihood(model, fixations)? - b;
    let ig_gold = avg_log_likelihood(gold, fixations)? - b;
    ig_explained_ratio(ig_model, ig_gold)
}

/// Mann–Whitney AUC: the probability that a positive outscores a negative,
/// ties counting one half. Exact for counts below 2^52.
fn rank_auc(positives: &[f64], negatives: &[f64]) -> f64 {
    let mut neg: Vec<f64> = negatives.to_vec();
    neg.sort_by(f64::total_cmp);
    let mut twice_wins: u64 = 0;
    for &p in positives {
        let below = neg.partition_point(|&v| v.total_cmp(&p).is_lt());
        let not_above = neg.partition_point(|&v| v.total_cmp(&p).is_le());
        twice_wins += 2 * below as u64 + (not_above - below) as u64;
    }
    twice_wins as f64 / (2.0 * positives.len() as f64 * negatives.len() as f64)
}

/// AUC with fixated cells (deduplicated) as positives and every other cell
/// as a negative.
pub fn auc(saliency: &Grid, fixations: &[Cell]) -> Result<f64> {
    let shape = saliency.shape();
    let fixated: BTreeSet<usize> = fixations
        .iter()
        .map(|&c| {
            if shape.contains(c) {
                Ok(shape.index(c))
            } else {
                Err(Error::Invalid(format!("fixation {c:?} outside {shape} grid")))
            }
        })
        .collect::<Result<_>>()?;
    if fixated.is_empty() {
        return Err(Error::Invalid("AUC needs at least one fixation".into()));
    }
    if fixated.len() == shape.len() {
        return Err(Error::Invalid("AUC undefined: every cell is fixated".into()));
    }
    let values = saliency.as_slice();
    let pos: Vec<f64> = fixated.iter().map(|&i| values[i]).collect();
    let neg: Vec<f64> = (0..values.len())
        .filter(|i| !fixated.contains(i))
        .map(|i| values[i])
        .collect();
    Ok(rank_auc(&pos, &neg))
}

/// Shuffled AUC: negatives are drawn with replacement from fixation
/// locations of other images (already on this grid), `100 ×` the number of
/// positives, capped by the pool size.
pub fn shuffled_auc(saliency: &Grid, fixations: &[Cell], pool: &[Cell], seed: u64) -> Result<f64> {
    if pool.is_empty() {
        return Err(Error::Invalid("shuffled AUC needs a non-empty negative pool".into()));
    }
    let shape = saliency.shape();
    let fixated: BTreeSet<Cell> = fixations.iter().copied().collect();
    if fixated.is_empty() {
        return Err(Error::Invalid("shuffled AUC needs at least one fixation".into()));
    }
    if let Some(c) = fixated.iter().chain(pool).find(|c| !shape.contains(**c)) {
        return Err(Error::Invalid(format!("location {c:?} outside {shape} grid")));
    }
    let n_neg = (100 * fixated.len()).min(pool.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let neg: Vec<f64> = (0..n_neg)
        .map(|_| saliency.get(pool[rng.random_range(0..pool.len())]))
        .collect();
    let pos: Vec<f64> = fixated.iter().map(|&c| saliency.get(c)).collect();
    Ok(rank_auc(&pos, &neg))
}

/// Where model densities come from during evaluation.
pub enum EvalModel<'a> {
    Bundle {
        bundle: &'a ModelBundle,
        mode: PredictMode,
    },
    /// The baseline itself; information gain is zero by construction.
    Baseline,
}

/// The upper anchor of the information-gain scale.
pub enum GoldStandard {
    /// Leave-one-subject-out KDE.
    Kde(KdeModel),
    /// Fixed per-image densities (e.g. a known generating density).
    Densities(BTreeMap<String, DensityMap>),
}

/// One image to evaluate.
#[derive(Debug, Clone)]
pub struct EvalImage {
    pub id: String,
    pub shape: GridShape,
    pub features: Option<FeatureRef>,
    pub subjects: BTreeMap<String, Vec<Cell>>,
}

impl EvalImage {
    pub fn fixations(&self) -> Vec<Cell> {
        self.subjects.values().flatten().copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub image_id: String,
    pub n_fixations: usize,
    pub ll_model: f64,
    pub ll_baseline: f64,
    pub ll_gold: f64,
    pub ig_model: f64,
    pub ig_gold: f64,
    pub auc: f64,
    pub sauc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalAggregates {
    pub n_images: usize,
    pub n_fixations: usize,
    pub ll_model: f64,
    pub ll_baseline: f64,
    pub ll_gold: f64,
    pub ig_model: f64,
    pub ig_gold: f64,
    /// `None` when the gold standard has no positive information gain.
    pub ig_explained: Option<f64>,
    pub auc: f64,
    pub sauc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub aggregates: EvalAggregates,
}

fn weighted_mean(rows: &[EvalRow], f: impl Fn(&EvalRow) -> f64) -> f64 {
    let n: usize = rows.iter().map(|r| r.n_fixations).sum();
    rows.iter().map(|r| r.n_fixations as f64 * f(r)).sum::<f64>() / n as f64
}

impl EvalAggregates {
    /// Aggregates recomputed from per-image rows.
    pub fn from_rows(rows: &[EvalRow]) -> Self {
        let ig_model = weighted_mean(rows, |r| r.ig_model);
        let ig_gold = weighted_mean(rows, |r| r.ig_gold);
        let n_images = rows.len();
        EvalAggregates {
            n_images,
            n_fixations: rows.iter().map(|r| r.n_fixations).sum(),
            ll_model: weighted_mean(rows, |r| r.ll_model),
            ll_baseline: weighted_mean(rows, |r| r.ll_baseline),
            ll_gold: weighted_mean(rows, |r| r.ll_gold),
            ig_model,
            ig_gold,
            ig_explained: ig_explained_ratio(ig_model, ig_gold).ok(),
            auc: rows.iter().map(|r| r.auc).sum::<f64>() / n_images as f64,
            sauc: rows.iter().map(|r| r.sauc).sum::<f64>() / n_images as f64,
        }
    }
}

fn rescale_cell(c: Cell, from: GridShape, to: GridShape) -> Cell {
    if from == to {
        return c;
    }
    let x = ((c.x as f64 + 0.5) * to.width as f64 / from.width as f64) as usize;
    let y = ((c.y as f64 + 0.5) * to.height as f64 / from.height as f64) as usize;
    Cell::new(x.min(to.width - 1), y.min(to.height - 1))
}

/// Per-image and aggregate scores. Model densities come from `model`; AUC
/// uses the density with center bias, shuffled AUC the density without it
/// with negatives from all other images' fixations.
pub fn build_eval_report(
    model: &EvalModel<'_>,
    images: &[EvalImage],
    baseline: &CenterBiasPrior,
    gold: &GoldStandard,
    seed: u64,
) -> Result<EvalReport> {
    if images.is_empty() {
        return Err(Error::Invalid("nothing to evaluate".into()));
    }
    let ln2 = std::f64::consts::LN_2;
    let rows: Vec<EvalRow> = images
        .par_iter()
        .enumerate()
        .map(|(idx, img)| {
            let fixations = img.fixations();
            if fixations.is_empty() {
                return Err(Error::Invalid(format!("image {} has no fixations", img.id)));
            }
            let n = fixations.len();
            let base = baseline.matching(img.shape)?.density(&img.id);
            let (with_cb, without_cb) = match model {
                EvalModel::Baseline => (base.clone(), DensityMap::uniform(&img.id, img.shape)),
                EvalModel::Bundle { bundle, mode } => {
                    let features = img
                        .features
                        .as_ref()
                        .ok_or_else(|| Error::Invalid(format!("no features for image {}", img.id)))?
                        .get()?;
                    (
                        predict(bundle, &features, *mode, true)?,
                        predict(bundle, &features, *mode, false)?,
                    )
                }
            };
            let ll_model = sum_ln(&with_cb, &fixations)? / (n as f64 * ln2);
            let ll_baseline = sum_ln(&base, &fixations)? / (n as f64 * ln2);
            let ll_gold = match gold {
                GoldStandard::Kde(kde) => {
                    let (ll, m) = gold_log_likelihood(&img.subjects, img.shape, kde, baseline)?;
                    ll / (m as f64 * ln2)
                }
                GoldStandard::Densities(map) => {
                    let d = map.get(&img.id).ok_or_else(|| {
                        Error::Invalid(format!("no gold density for image {}", img.id))
                    })?;
                    sum_ln(d, &fixations)? / (n as f64 * ln2)
                }
            };
            let pool: Vec<Cell> = images
                .iter()
                .filter(|o| o.id != img.id)
                .flat_map(|o| {
                    o.fixations()
                        .into_iter()
                        .map(move |c| rescale_cell(c, o.shape, img.shape))
                })
                .collect();
            let sauc = if pool.is_empty() {
                f64::NAN
            } else {
                shuffled_auc(without_cb.grid(), &fixations, &pool, derive_seed(seed, idx as u64))?
            };
            Ok(EvalRow {
                image_id: img.id.clone(),
                n_fixations: n,
                ll_model,
                ll_baseline,
                ll_gold,
                ig_model: ll_model - ll_baseline,
                ig_gold: ll_gold - ll_baseline,
                auc: auc(with_cb.grid(), &fixations)?,
                sauc,
            })
        })
        .collect::<Result<_>>()?;
    let aggregates = EvalAggregates::from_rows(&rows);
    Ok(EvalReport { rows, aggregates })
}

impl EvalReport {
    pub const ROW_HEADER: &'static str =
        "image_id,n_fixations,ll_model,ll_baseline,ll_gold,ig_model,ig_gold,auc,sauc";

    pub fn rows_csv(&self) -> String {
        let mut out = format!("{}\n", Self::ROW_HEADER);
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.image_id, r.n_fixations, r.ll_model, r.ll_baseline, r.ll_gold, r.ig_model,
                r.ig_gold, r.auc, r.sauc
            )
            .unwrap();
        }
        out
    }

    /// Flat `key=value` summary of the aggregates.
    pub fn summary(&self) -> String {
        let a = &self.aggregates;
        let mut out = String::new();
        writeln!(out, "n_images={}", a.n_images).unwrap();
        writeln!(out, "n_fixations={}", a.n_fixations).unwrap();
        writeln!(out, "ll_model={}", a.ll_model).unwrap();
        writeln!(out, "ll_baseline={}", a.ll_baseline).unwrap();
        writeln!(out, "ll_gold={}", a.ll_gold).unwrap();
        writeln!(out, "ig_model={}", a.ig_model).unwrap();
        writeln!(out, "ig_gold={}", a.ig_gold).unwrap();
        match a.ig_explained {
            Some(v) => writeln!(out, "ig_explained={v}").unwrap(),
            None => writeln!(out, "ig_explained=undefined").unwrap(),
        }
        writeln!(out, "auc={}", a.auc).unwrap();
        writeln!(out, "sauc={}", a.sauc).unwrap();
        out
    }

    pub fn scatter_csv(&self) -> String {
        let mut out = String::from("image_id,ig_gold,ig_model\n");
        for r in &self.rows {
            writeln!(out, "{},{},{}", r.image_id, r.ig_gold, r.ig_model).unwrap();
        }
        out
    }
}
