//! Synthetic data shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use gazekit::data::{save_feature_stack, FeatureStack};
use gazekit::density::{gaussian_blur, sample_fixations, softmax2d, DensityMap};
use gazekit::{Cell, Grid, GridShape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Smoothed white noise, standardized to zero mean and unit variance.
pub fn smooth_channel(shape: GridShape, sigma: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let noise = Grid::new(
        shape.height,
        shape.width,
        (0..shape.len()).map(|_| rng.sample(StandardNormal)).collect(),
    )
    .unwrap();
    let v = gaussian_blur(&noise, sigma).unwrap().into_vec();
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64).sqrt();
    v.iter().map(|x| (x - mean) / sd).collect()
}

/// One planted image: features, the generating density and per-subject
/// fixations sampled from it.
pub struct PlantedImage {
    pub features: FeatureStack,
    pub density: DensityMap,
    pub subjects: BTreeMap<String, Vec<Cell>>,
}

/// The generating log-density is `2.5 * relu(ch0 + 0.5 * ch1)` up to a
/// constant; every other channel is a distractor.
pub fn planted_image(
    id: &str,
    shape: GridShape,
    channels: usize,
    subjects: usize,
    per_subject: usize,
    seed: u64,
) -> PlantedImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chans: Vec<Vec<f64>> = (0..channels).map(|_| smooth_channel(shape, 2.0, &mut rng)).collect();
    let s = Grid::from_fn(shape, |c| {
        let i = shape.index(c);
        2.5 * (chans[0][i] + 0.5 * chans[1][i]).max(0.0)
    });
    let density = softmax2d(&s).unwrap().with_id(id);
    let values: Vec<f32> = chans.iter().flatten().map(|&v| v as f32).collect();
    let features = FeatureStack::new(id, channels, shape.height, shape.width, values).unwrap();
    let subjects = (0..subjects)
        .map(|k| {
            let fix = sample_fixations(&density, per_subject, rng.random()).unwrap();
            (format!("s{k:02}"), fix)
        })
        .collect();
    PlantedImage {
        features,
        density,
        subjects,
    }
}

pub fn planted_set(
    prefix: &str,
    n: usize,
    shape: GridShape,
    channels: usize,
    subjects: usize,
    per_subject: usize,
    seed: u64,
) -> Vec<PlantedImage> {
    (0..n)
        .map(|i| {
            planted_image(
                &format!("{prefix}{i:03}"),
                shape,
                channels,
                subjects,
                per_subject,
                seed.wrapping_mul(1000).wrapping_add(i as u64),
            )
        })
        .collect()
}

/// Writes `<id>.fmap` files and a fixation CSV whose pixel coordinates sit
/// at cell centers of an image `scale` times the grid size.
pub fn write_dataset(images: &[PlantedImage], features_dir: &Path, csv_path: &Path, scale: u32) {
    fs::create_dir_all(features_dir).unwrap();
    let mut csv = String::from("image_id,subject_id,x,y,img_width,img_height\n");
    for img in images {
        let f = &img.features;
        save_feature_stack(f, &features_dir.join(format!("{}.fmap", f.image_id()))).unwrap();
        let (w, h) = (f.width() as u32 * scale, f.height() as u32 * scale);
        for (s, cells) in &img.subjects {
            for c in cells {
                let x = (c.x as f64 + 0.5) * scale as f64;
                let y = (c.y as f64 + 0.5) * scale as f64;
                writeln!(csv, "{},{s},{x},{y},{w},{h}", f.image_id()).unwrap();
            }
        }
    }
    fs::write(csv_path, csv).unwrap();
}
