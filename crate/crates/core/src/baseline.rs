//! Center-bias baseline and cross-subject gold standard, both Gaussian KDEs
//! on the density grid.
//!
//! Each fixation contributes an isotropic Gaussian truncated at four
//! bandwidths and renormalized over the grid, so every fixation carries the
//! same mass even near borders.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::FixationDataset;
use crate::density::{CenterBiasPrior, DensityMap, KERNEL_TRUNCATE};
use crate::error::{Error, Result};
use crate::grid::{Cell, Grid, GridShape};

/// Weight of the uniform component mixed into the fitted center bias so
/// that no cell has zero mass.
pub const CENTER_BIAS_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KdeModel {
    pub bandwidth: f64,
    /// Weight of the baseline in the gold-standard mixture.
    pub mix_eps: f64,
}

impl KdeModel {
    pub fn new(bandwidth: f64, mix_eps: f64) -> Result<Self> {
        if !(bandwidth > 0.0) || !bandwidth.is_finite() {
            return Err(Error::Invalid(format!("KDE bandwidth must be positive, got {bandwidth}")));
        }
        if !(0.0..1.0).contains(&mix_eps) {
            return Err(Error::Invalid(format!("mix_eps must be in [0, 1), got {mix_eps}")));
        }
        Ok(KdeModel { bandwidth, mix_eps })
    }
}

fn axis_weight(d: f64, h: f64) -> f64 {
    if d.abs() > KERNEL_TRUNCATE * h {
        0.0
    } else {
        (-d * d / (2.0 * h * h)).exp()
    }
}

/// A fixation's truncated kernel, separable into row and column factors.
struct Kernel {
    x0: usize,
    y0: usize,
    wx: Vec<f64>,
    wy: Vec<f64>,
    norm: f64,
}

impl Kernel {
    fn new(center: Cell, shape: GridShape, h: f64) -> Self {
        let r = (KERNEL_TRUNCATE * h).floor() as usize;
        let x0 = center.x.saturating_sub(r);
        let x1 = (center.x + r).min(shape.width - 1);
        let y0 = center.y.saturating_sub(r);
        let y1 = (center.y + r).min(shape.height - 1);
        let wx: Vec<f64> = (x0..=x1)
            .map(|x| axis_weight(x as f64 - center.x as f64, h))
            .collect();
        let wy: Vec<f64> = (y0..=y1)
            .map(|y| axis_weight(y as f64 - center.y as f64, h))
            .collect();
        let norm = wx.iter().sum::<f64>() * wy.iter().sum::<f64>();
        Kernel { x0, y0, wx, wy, norm }
    }

    fn at(&self, cell: Cell) -> f64 {
        if cell.x < self.x0 || cell.y < self.y0 {
            return 0.0;
        }
        match (self.wx.get(cell.x - self.x0), self.wy.get(cell.y - self.y0)) {
            (Some(a), Some(b)) => a * b / self.norm,
            _ => 0.0,
        }
    }

    fn accumulate(&self, out: &mut Grid, weight: f64) {
        let width = out.width();
        let data = out.as_mut_slice();
        for (j, wy) in self.wy.iter().enumerate() {
            let row = (self.y0 + j) * width + self.x0;
            let s = weight * wy / self.norm;
            for (i, wx) in self.wx.iter().enumerate() {
                data[row + i] += s * wx;
            }
        }
    }
}

/// Average of per-fixation normalized kernels on the grid.
pub fn kde_density(points: &[Cell], shape: GridShape, bandwidth: f64) -> Result<Grid> {
    if points.is_empty() {
        return Err(Error::Invalid("KDE needs at least one fixation".into()));
    }
    if !(bandwidth > 0.0) {
        return Err(Error::Invalid(format!("KDE bandwidth must be positive, got {bandwidth}")));
    }
    let mut out = Grid::zeros(shape);
    let w = 1.0 / points.len() as f64;
    for &p in points {
        if !shape.contains(p) {
            return Err(Error::Invalid(format!("fixation {p:?} outside {shape} grid")));
        }
        Kernel::new(p, shape, bandwidth).accumulate(&mut out, w);
    }
    Ok(out)
}

/// Places a fixation from one grid onto another by cell-center scaling.
fn rescale_cell(c: Cell, from: GridShape, to: GridShape) -> Cell {
    if from == to {
        return c;
    }
    let x = ((c.x as f64 + 0.5) * to.width as f64 / from.width as f64) as usize;
    let y = ((c.y as f64 + 0.5) * to.height as f64 / from.height as f64) as usize;
    Cell::new(x.min(to.width - 1), y.min(to.height - 1))
}

fn pooled_fixations<'a>(
    dataset: &FixationDataset,
    ids: impl Iterator<Item = &'a str>,
    shape: GridShape,
) -> Vec<Cell> {
    let mut out = Vec::new();
    for id in ids {
        let grid = dataset.info(id).expect("id from dataset").grid;
        out.extend(dataset.fixations(id).into_iter().map(|c| rescale_cell(c, grid, shape)));
    }
    out
}

fn floored_log_density(points: &[Cell], shape: GridShape, bandwidth: f64) -> Result<Grid> {
    let kde = kde_density(points, shape, bandwidth)?;
    let u = 1.0 / shape.len() as f64;
    Ok(kde.map(|v| ((1.0 - CENTER_BIAS_FLOOR) * v + CENTER_BIAS_FLOOR * u).ln()))
}

#[derive(Debug, Clone)]
pub struct CenterBiasFit {
    pub prior: CenterBiasPrior,
    pub bandwidth: f64,
    /// Held-out log-likelihood (nats per fixation) for each candidate.
    pub scores: Vec<(f64, f64)>,
}

/// Pooled-fixation KDE over all images, with the bandwidth chosen by
/// log-likelihood on a seeded held-out 10% of the images, then refit on all
/// fixations.
pub fn fit_center_bias(
    train: &FixationDataset,
    shape: GridShape,
    bandwidths: &[f64],
    seed: u64,
) -> Result<CenterBiasFit> {
    if train.is_empty() {
        return Err(Error::Invalid("cannot fit a center bias to an empty dataset".into()));
    }
    if bandwidths.is_empty() {
        return Err(Error::Invalid("empty bandwidth grid".into()));
    }
    let mut ids: Vec<&str> = train.image_ids().collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = ((ids.len() as f64 * 0.1).round() as usize).max(1);
    let (fit_ids, val_ids) = if ids.len() < 2 {
        log::warn!("center bias: single image, selecting bandwidth in-sample");
        (ids.clone(), ids.clone())
    } else {
        let (v, f) = ids.split_at(n_val);
        (f.to_vec(), v.to_vec())
    };
    let fit_pts = pooled_fixations(train, fit_ids.into_iter(), shape);
    let val_pts = pooled_fixations(train, val_ids.into_iter(), shape);

    let scores: Vec<(f64, f64)> = bandwidths
        .par_iter()
        .map(|&bw| {
            let log_p = floored_log_density(&fit_pts, shape, bw)?;
            let ll = val_pts.iter().map(|&c| log_p.get(c)).sum::<f64>() / val_pts.len() as f64;
            Ok((bw, ll))
        })
        .collect::<Result<_>>()?;
    let (bandwidth, _) = scores
        .iter()
        .copied()
        .fold((f64::NAN, f64::NEG_INFINITY), |best, (bw, ll)| {
            if ll > best.1 || best.0.is_nan() {
                (bw, ll)
            } else {
                best
            }
        });

    let all = pooled_fixations(train, train.image_ids(), shape);
    let prior = CenterBiasPrior::from_log_weights(floored_log_density(&all, shape, bandwidth)?)?;
    Ok(CenterBiasFit {
        prior,
        bandwidth,
        scores,
    })
}

/// Predicts one subject's fixations on an image from everyone else's:
/// `(1 - eps) * KDE(others) + eps * baseline`.
pub fn gold_standard_density(
    image_fixations: &BTreeMap<String, Vec<Cell>>,
    held_out_subject: &str,
    shape: GridShape,
    model: &KdeModel,
    baseline: &CenterBiasPrior,
) -> Result<DensityMap> {
    let others: Vec<Cell> = image_fixations
        .iter()
        .filter(|(s, _)| s.as_str() != held_out_subject)
        .flat_map(|(_, f)| f.iter().copied())
        .collect();
    if others.is_empty() {
        return Err(Error::Invalid(format!(
            "no fixations from subjects other than {held_out_subject}"
        )));
    }
    let base = baseline.matching(shape)?;
    let kde = kde_density(&others, shape, model.bandwidth)?;
    let mixed = Grid::from_fn(shape, |c| {
        (1.0 - model.mix_eps) * kde.get(c) + model.mix_eps * base.log_density().get(c).exp()
    });
    DensityMap::normalized("", mixed)
}

/// Leave-one-subject-out log-likelihood (nats, summed) of one image's
/// fixations for each `(bandwidth, eps)` pair, evaluated only at the
/// fixated cells.
fn image_loso_scores(
    subjects: &BTreeMap<String, Vec<Cell>>,
    shape: GridShape,
    baseline: &CenterBiasPrior,
    bandwidths: &[f64],
    eps_grid: &[f64],
) -> Result<Vec<f64>> {
    let base = baseline.matching(shape)?;
    let fixations: Vec<(usize, Cell)> = subjects
        .values()
        .enumerate()
        .flat_map(|(s, f)| f.iter().map(move |&c| (s, c)))
        .collect();
    let n_total = fixations.len();
    let per_subject: Vec<usize> = subjects.values().map(Vec::len).collect();
    let mut out = Vec::with_capacity(bandwidths.len() * eps_grid.len());
    for &bw in bandwidths {
        let kernels: Vec<Kernel> = fixations.iter().map(|&(_, c)| Kernel::new(c, shape, bw)).collect();
        let kde_at: Vec<f64> = fixations
            .iter()
            .map(|&(s, c)| {
                let n_others = n_total - per_subject[s];
                let sum: f64 = fixations
                    .iter()
                    .zip(&kernels)
                    .filter(|((t, _), _)| *t != s)
                    .map(|(_, k)| k.at(c))
                    .sum();
                sum / n_others as f64
            })
            .collect();
        for &eps in eps_grid {
            let ll = fixations
                .iter()
                .zip(&kde_at)
                .map(|(&(_, c), &k)| ((1.0 - eps) * k + eps * base.log_density().get(c).exp()).ln())
                .sum();
            out.push(ll);
        }
    }
    Ok(out)
}

/// Total leave-one-subject-out log-likelihood (nats) and fixation count of
/// one image under a fixed gold-standard model.
pub fn gold_log_likelihood(
    subjects: &BTreeMap<String, Vec<Cell>>,
    shape: GridShape,
    model: &KdeModel,
    baseline: &CenterBiasPrior,
) -> Result<(f64, usize)> {
    if subjects.len() < 2 {
        return Err(Error::Invalid("gold standard needs at least 2 subjects".into()));
    }
    let ll = image_loso_scores(subjects, shape, baseline, &[model.bandwidth], &[model.mix_eps])?[0];
    Ok((ll, subjects.values().map(Vec::len).sum()))
}

/// One global `(bandwidth, mix_eps)` maximizing the leave-one-subject-out
/// log-likelihood summed over all images and subjects.
pub fn learn_gold_bandwidth(
    dataset: &FixationDataset,
    bandwidths: &[f64],
    eps_grid: &[f64],
    baseline: &CenterBiasPrior,
) -> Result<KdeModel> {
    if bandwidths.is_empty() || eps_grid.is_empty() {
        return Err(Error::Invalid("empty bandwidth or eps grid".into()));
    }
    for &bw in bandwidths {
        KdeModel::new(bw, 0.0)?;
    }
    for &eps in eps_grid {
        KdeModel::new(1.0, eps)?;
    }
    let ids: Vec<&str> = dataset.image_ids().collect();
    if ids.is_empty() {
        return Err(Error::Invalid("empty dataset".into()));
    }
    let per_image: Vec<Vec<f64>> = ids
        .par_iter()
        .map(|id| {
            let subjects = dataset.by_subject(id);
            if subjects.len() < 2 {
                return Err(Error::Invalid(format!(
                    "image {id} has {} subject(s); gold standard needs 2",
                    subjects.len()
                )));
            }
            let shape = dataset.info(id).unwrap().grid;
            image_loso_scores(&subjects, shape, baseline, bandwidths, eps_grid)
        })
        .collect::<Result<_>>()?;
    let mut totals = vec![0.0; bandwidths.len() * eps_grid.len()];
    for scores in &per_image {
        for (t, s) in totals.iter_mut().zip(scores) {
            *t += s;
        }
    }
    let mut best = 0;
    for (i, &t) in totals.iter().enumerate() {
        if t > totals[best] {
            best = i;
        }
    }
    KdeModel::new(bandwidths[best / eps_grid.len()], eps_grid[best % eps_grid.len()])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{FixationRecord, ImageInfo};
    use rand::Rng;

    // Direct per-cell, per-fixation sum written independently of `Kernel`.
    fn brute_force_kde(points: &[Cell], shape: GridShape, h: f64) -> Vec<f64> {
        let mut out = vec![0.0; shape.len()];
        for p in points {
            let mut k = vec![0.0; shape.len()];
            for y in 0..shape.height {
                for x in 0..shape.width {
                    let dx = x as f64 - p.x as f64;
                    let dy = y as f64 - p.y as f64;
                    if dx.abs() <= 4.0 * h && dy.abs() <= 4.0 * h {
                        k[y * shape.width + x] = (-(dx * dx + dy * dy) / (2.0 * h * h)).exp();
                    }
                }
            }
            let z: f64 = k.iter().sum();
            for (o, v) in out.iter_mut().zip(&k) {
                *o += v / z / points.len() as f64;
            }
        }
        out
    }

    fn dataset(rows: &[(&str, &str, usize, usize)], shape: GridShape) -> FixationDataset {
        let records = rows
            .iter()
            .map(|&(i, s, x, y)| FixationRecord {
                image_id: i.into(),
                subject_id: s.into(),
                x,
                y,
            })
            .collect();
        let images = rows
            .iter()
            .map(|&(i, ..)| (i.to_string(), ImageInfo { grid: shape, original: None }))
            .collect();
        FixationDataset::from_records(records, images).unwrap()
    }

    #[test]
    fn kde_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let shape = GridShape::new(32, 32);
        for _ in 0..5 {
            let pts: Vec<Cell> = (0..rng.random_range(1..50))
                .map(|_| Cell::new(rng.random_range(0..32), rng.random_range(0..32)))
                .collect();
            let h = rng.random_range(0.5..6.0);
            let got = kde_density(&pts, shape, h).unwrap();
            let want = brute_force_kde(&pts, shape, h);
            for (a, b) in got.as_slice().iter().zip(&want) {
                assert!((a - b).abs() < 1e-10);
            }
            assert!((got.sum() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn center_bias_concentrates_on_center() {
        let shape = GridShape::new(21, 21);
        let rows: Vec<_> = (0..10)
            .map(|i| (if i % 2 == 0 { "a" } else { "b" }, "s", 10, 10))
            .collect();
        let fit = fit_center_bias(&dataset(&rows, shape), shape, &[0.1], 0).unwrap();
        assert!(fit.prior.log_density().get(Cell::new(10, 10)).exp() > 0.99);
        let total: f64 = fit.prior.log_density().as_slice().iter().map(|v| v.exp()).sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn center_bias_rejects_empty_inputs() {
        let shape = GridShape::new(4, 4);
        assert!(fit_center_bias(&FixationDataset::default(), shape, &[1.0], 0).is_err());
        let ds = dataset(&[("a", "s", 1, 1)], shape);
        assert!(fit_center_bias(&ds, shape, &[], 0).is_err());
    }

    #[test]
    fn gold_ignores_held_out_subject() {
        let shape = GridShape::new(12, 12);
        let base = CenterBiasPrior::uniform(shape);
        let model = KdeModel::new(1.0, 0.0).unwrap();
        let mut subjects = BTreeMap::new();
        subjects.insert("A".to_string(), vec![Cell::new(3, 4)]);
        subjects.insert("B".to_string(), vec![Cell::new(9, 9), Cell::new(1, 1)]);
        let d1 = gold_standard_density(&subjects, "B", shape, &model, &base).unwrap();
        subjects.insert("B".to_string(), vec![Cell::new(0, 11)]);
        let d2 = gold_standard_density(&subjects, "B", shape, &model, &base).unwrap();
        assert_eq!(d1, d2);
        let argmax = d1
            .grid()
            .as_slice()
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert_eq!(shape.cell(argmax), Cell::new(3, 4));
    }

    #[test]
    fn gold_full_mixture_is_baseline() {
        let shape = GridShape::new(6, 6);
        let prior = CenterBiasPrior::from_log_weights(Grid::from_fn(shape, |c| -((c.x + c.y) as f64))).unwrap();
        let mut subjects = BTreeMap::new();
        subjects.insert("A".to_string(), vec![Cell::new(3, 4)]);
        subjects.insert("B".to_string(), vec![Cell::new(1, 1)]);
        let model = KdeModel { bandwidth: 1.0, mix_eps: 1.0 };
        let d = gold_standard_density(&subjects, "B", shape, &model, &prior).unwrap();
        for (a, b) in d.grid().as_slice().iter().zip(prior.log_density().as_slice()) {
            assert!((a - b.exp()).abs() < 1e-15);
        }
        assert!(gold_standard_density(&subjects, "A", shape, &model, &prior).is_ok());
        subjects.remove("A");
        assert!(gold_standard_density(&subjects, "B", shape, &model, &prior).is_err());
    }

    #[test]
    fn loso_scores_agree_with_full_gold_density() {
        let shape = GridShape::new(16, 16);
        let prior = CenterBiasPrior::from_log_weights(Grid::from_fn(shape, |c| -0.05 * (c.x as f64 - 8.0).powi(2))).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut subjects = BTreeMap::new();
        for s in 0..4 {
            let f = (0..5).map(|_| Cell::new(rng.random_range(0..16), rng.random_range(0..16))).collect();
            subjects.insert(format!("s{s}"), f);
        }
        let model = KdeModel::new(2.0, 0.1).unwrap();
        let (ll, n) = gold_log_likelihood(&subjects, shape, &model, &prior).unwrap();
        let mut want = 0.0;
        for (s, f) in &subjects {
            let d = gold_standard_density(&subjects, s, shape, &model, &prior).unwrap();
            want += f.iter().map(|&c| d.at(c).ln()).sum::<f64>();
        }
        assert_eq!(n, 20);
        assert!((ll - want).abs() < 1e-9);
    }

    #[test]
    fn forced_choices() {
        let shape = GridShape::new(10, 10);
        let ds = dataset(&[("a", "s1", 2, 2), ("a", "s2", 3, 3), ("b", "s1", 5, 5), ("b", "s2", 6, 5)], shape);
        let base = CenterBiasPrior::uniform(shape);
        let m = learn_gold_bandwidth(&ds, &[2.5], &[0.0, 0.2], &base).unwrap();
        assert_eq!(m.bandwidth, 2.5);
        let m = learn_gold_bandwidth(&ds, &[1.0, 2.0, 3.0], &[0.0], &base).unwrap();
        assert_eq!(m.mix_eps, 0.0);
        let single = dataset(&[("a", "s1", 2, 2), ("a", "s1", 3, 3)], shape);
        assert!(learn_gold_bandwidth(&single, &[1.0], &[0.0], &base).is_err());
    }
}
