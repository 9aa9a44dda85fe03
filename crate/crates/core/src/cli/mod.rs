//! The `gazekit` command line: fit baselines, train, evaluate, export
//! benchmark maps and sample.
//!
//! Exit codes: 0 success, 2 validation or input error, 3 numerical abort.
//! Every command writes `manifest.txt` into `--out` before anything else and
//! stages its other outputs under `staging.partial/`, moving them into place
//! only once the command has succeeded.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::baseline::{fit_center_bias, learn_gold_bandwidth, KdeModel};
use crate::config::TrainConfig;
use crate::data::{read_fixation_csv, FeatureStore, FixationDataset};
use crate::density::{
    contour_thresholds, quantize_equal_mass_256, read_prior_bandwidth, sample_fixations,
    CenterBiasPrior,
};
use crate::error::{Error, Result};
use crate::grid::GridShape;
use crate::metrics::{build_eval_report, EvalImage, EvalModel, GoldStandard};
use crate::readout::init_params;
use crate::trainer::{
    derive_seed, finetune_cv, format_train_log, predict, pretrain, ModelBundle, PredictMode,
    TrainImage,
};

pub const MANIFEST: &str = "manifest.txt";
pub const STAGING: &str = "staging.partial";
pub const THREADS_ENV: &str = "GAZEKIT_THREADS";

#[derive(Debug, Parser)]
#[command(name = "gazekit", version, about = "Fixation-density modelling toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the center-bias prior from a fixation CSV.
    FitBaseline(FitBaselineArgs),
    /// Pretrain and/or crossvalidated fine-tuning; writes a model bundle.
    Train(TrainArgs),
    /// Per-image and aggregate log-likelihood, IG, AUC and shuffled AUC.
    Eval(EvalArgs),
    /// One equal-mass quantized 8-bit PGM per image.
    ExportBenchmark(ExportArgs),
    /// Sampled fixations and quartile contour thresholds per image.
    Sample(SampleArgs),
}

#[derive(Debug, Args)]
pub struct FitBaselineArgs {
    #[arg(long)]
    pub fixations: PathBuf,
    #[arg(long)]
    pub grid_width: usize,
    #[arg(long)]
    pub grid_height: usize,
    /// Candidate KDE bandwidths in grid cells, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "1,1.5,2,3,4,6,8,12,16")]
    pub bandwidths: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub fixations: PathBuf,
    #[arg(long)]
    pub centerbias: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Separate dataset for the pretraining phase.
    #[arg(long, requires = "pretrain_fixations")]
    pub pretrain_features: Option<PathBuf>,
    #[arg(long, requires = "pretrain_features")]
    pub pretrain_fixations: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub folds: Option<usize>,
    /// none, linear-readout, no-pretrain or feature-subset=LIST; repeatable.
    #[arg(long)]
    pub ablation: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ModelKind {
    Bundle,
    Baseline,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ModelKind::Bundle)]
    pub model: ModelKind,
    /// Baseline prior; defaults to the bundle's.
    #[arg(long)]
    pub centerbias: Option<PathBuf>,
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long)]
    pub fixations: PathBuf,
    /// leave-out, mixture, pretrained or fold=I.
    #[arg(long, default_value = "leave-out")]
    pub mode: String,
    /// Evaluate images missing from the fold map with the fold mixture.
    #[arg(long)]
    pub allow_mixture: bool,
    /// Gold-standard KDE bandwidth candidates in grid cells.
    #[arg(long, value_delimiter = ',', default_value = "0.5,1,1.5,2,3,4,6,8")]
    pub gold_bandwidths: Vec<f64>,
    /// Gold-standard baseline mixing weights.
    #[arg(long, value_delimiter = ',', default_value = "0.001,0.01,0.05,0.1,0.2,0.4")]
    pub gold_eps: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
#[command(group(
    clap::ArgGroup::new("prior_choice")
        .required(true)
        .args(["with_center_bias", "uniform_center_bias"])
))]
pub struct ExportArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub with_center_bias: bool,
    #[arg(long)]
    pub uniform_center_bias: bool,
    #[arg(long, default_value = "mixture")]
    pub mode: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "mixture")]
    pub mode: String,
    #[arg(long)]
    pub uniform_center_bias: bool,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `leave-out`, `mixture`, `pretrained` or `fold=I`.
pub fn parse_mode(s: &str) -> Result<PredictMode> {
    match s {
        "leave-out" => Ok(PredictMode::LeaveOut),
        "mixture" => Ok(PredictMode::Mixture),
        "pretrained" => Ok(PredictMode::Pretrained),
        _ => s
            .strip_prefix("fold=")
            .and_then(|i| usize::from_str(i).ok())
            .map(PredictMode::Single)
            .ok_or_else(|| Error::Invalid(format!("unknown prediction mode {s:?}"))),
    }
}

/// Process exit code for a command result.
pub fn exit_code(result: &Result<()>) -> i32 {
    match result {
        Ok(()) => 0,
        Err(e) if e.is_numerical() => 3,
        Err(_) => 2,
    }
}

/// Sizes the global thread pool from `GAZEKIT_THREADS`, if set.
pub fn init_threads() -> Result<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Invalid(format!("{THREADS_ENV} must be a positive integer, got {value:?}")))?;
    // A second initialization (e.g. in tests) keeps the first pool.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    init_threads()?;
    match cli.command {
        Command::FitBaseline(a) => cmd_fit_baseline(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::ExportBenchmark(a) => cmd_export_benchmark(&a),
        Command::Sample(a) => cmd_sample(&a),
    }
}

/// Parses arguments, runs, reports errors on stderr and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = run(cli);
    if let Err(e) = &result {
        eprintln!("error: {e}");
    }
    exit_code(&result)
}

/// Provenance record written before any other output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunManifest {
    pub command: String,
    pub config: Option<PathBuf>,
    pub inputs: Vec<(String, PathBuf)>,
    pub seed: Option<u64>,
    pub out: PathBuf,
}

impl RunManifest {
    fn new(command: &str, out: &Path) -> Self {
        RunManifest {
            command: command.to_owned(),
            config: None,
            inputs: Vec::new(),
            seed: None,
            out: out.to_owned(),
        }
    }

    fn input(mut self, name: &str, path: &Path) -> Self {
        self.inputs.push((name.to_owned(), path.to_owned()));
        self
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        writeln!(s, "command={}", self.command).unwrap();
        writeln!(s, "tool_version={}", env!("CARGO_PKG_VERSION")).unwrap();
        match &self.config {
            Some(p) => writeln!(s, "config={}", p.display()).unwrap(),
            None => writeln!(s, "config=default").unwrap(),
        }
        for (name, path) in &self.inputs {
            writeln!(s, "input.{name}={}", path.display()).unwrap();
        }
        if let Some(seed) = self.seed {
            writeln!(s, "seed={seed}").unwrap();
        }
        writeln!(s, "out={}", self.out.display()).unwrap();
        s
    }
}

/// Output directory with a staging area for not-yet-committed files.
struct Output {
    dir: PathBuf,
    staging: PathBuf,
}

impl Output {
    fn create(manifest: &RunManifest) -> Result<Self> {
        let dir = manifest.out.clone();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let path = dir.join(MANIFEST);
        fs::write(&path, manifest.render()).map_err(|e| Error::io(&path, e))?;
        let staging = dir.join(STAGING);
        if staging.exists() {
            fs::remove_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
        }
        fs::create_dir(&staging).map_err(|e| Error::io(&staging, e))?;
        Ok(Output { dir, staging })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.staging.join(name)
    }

    fn write(&self, name: &str, bytes: impl AsRef<[u8]>) -> Result<()> {
        let path = self.path(name);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))
    }

    /// Moves every staged file into the output directory.
    fn commit(self) -> Result<()> {
        let entries = fs::read_dir(&self.staging).map_err(|e| Error::io(&self.staging, e))?;
        let mut names = Vec::new();
        for entry in entries {
            names.push(entry.map_err(|e| Error::io(&self.staging, e))?.file_name());
        }
        names.sort();
        for name in names {
            let to = self.dir.join(&name);
            fs::rename(self.staging.join(&name), &to).map_err(|e| Error::io(&to, e))?;
        }
        fs::remove_dir(&self.staging).map_err(|e| Error::io(&self.staging, e))
    }
}

fn load_dataset(fixations: &Path, store: &FeatureStore) -> Result<FixationDataset> {
    let raw = read_fixation_csv(fixations)?;
    let (dataset, stats) = FixationDataset::from_raw(&raw, |id| store.grid(id))?;
    if dataset.is_empty() {
        return Err(Error::Invalid(format!("{}: no usable fixations", fixations.display())));
    }
    log::info!(
        "{}: {} fixations on {} images ({} out of bounds)",
        fixations.display(),
        stats.kept,
        dataset.image_count(),
        stats.out_of_bounds
    );
    Ok(dataset)
}

fn train_images(dataset: &FixationDataset, store: &FeatureStore) -> Result<Vec<TrainImage>> {
    dataset
        .image_ids()
        .map(|id| {
            Ok(TrainImage {
                id: id.to_owned(),
                features: store.handle(id)?,
                fixations: dataset.fixations(id),
            })
        })
        .collect()
}

fn cmd_fit_baseline(a: &FitBaselineArgs) -> Result<()> {
    let mut manifest = RunManifest::new("fit-baseline", &a.out).input("fixations", &a.fixations);
    manifest.seed = Some(a.seed);
    let out = Output::create(&manifest)?;
    let shape = GridShape::new(a.grid_height, a.grid_width);
    if shape.is_empty() {
        return Err(Error::Invalid("grid dimensions must be positive".into()));
    }
    let raw = read_fixation_csv(&a.fixations)?;
    let (dataset, _) = FixationDataset::from_raw(&raw, |_| Some(shape))?;
    let fit = fit_center_bias(&dataset, shape, &a.bandwidths, a.seed)?;
    log::info!("center bias bandwidth {}", fit.bandwidth);
    fit.prior.save(&out.path("centerbias.fmap"), Some(fit.bandwidth))?;
    out.commit()
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(k) = a.folds {
        cfg.folds = k;
    }
    for ab in &a.ablation {
        cfg.set("ablation", ab)?;
    }
    cfg.validate()?;

    let mut manifest = RunManifest::new("train", &a.out)
        .input("features", &a.features)
        .input("fixations", &a.fixations)
        .input("centerbias", &a.centerbias);
    if let (Some(f), Some(x)) = (&a.pretrain_features, &a.pretrain_fixations) {
        manifest = manifest.input("pretrain_features", f).input("pretrain_fixations", x);
    }
    manifest.config = a.config.clone();
    manifest.seed = Some(cfg.seed);
    let out = Output::create(&manifest)?;

    let prior = CenterBiasPrior::load(&a.centerbias)?;
    let subset = cfg.feature_subset();
    let store = FeatureStore::open(&a.features)?.with_channel_subset(subset.clone());
    let dataset = load_dataset(&a.fixations, &store)?;
    let images = train_images(&dataset, &store)?;
    let channels = images[0].features.get()?.channels();

    let mut log_rows = Vec::new();
    let run_pretrain = cfg.pretrain && !cfg.skip_pretrain();
    let pretrained = match (&a.pretrain_features, &a.pretrain_fixations) {
        (Some(pf), Some(px)) if run_pretrain => {
            let pstore = FeatureStore::open(pf)?.with_channel_subset(subset.clone());
            let pdata = load_dataset(px, &pstore)?;
            let pimages = train_images(&pdata, &pstore)?;
            if pimages.len() < 2 {
                return Err(Error::Invalid("pretraining needs at least 2 images".into()));
            }
            let n_val = ((pimages.len() as f64 * 0.1).round() as usize).clamp(1, pimages.len() - 1);
            let ids: Vec<String> = pimages.iter().map(|i| i.id.clone()).collect();
            let split = crate::trainer::assign_folds(&ids, pimages.len(), derive_seed(cfg.seed, 0x9A1))?;
            let (val, train): (Vec<TrainImage>, Vec<TrainImage>) =
                pimages.into_iter().partition(|img| split[&img.id] < n_val);
            let outcome = pretrain(&train, &val, &prior, &cfg)?;
            log_rows.extend(outcome.log.iter().cloned());
            outcome.params
        }
        _ => {
            if run_pretrain {
                log::warn!("no pretraining data given; fine-tuning starts from initialization");
            }
            init_params(&cfg.channel_plan(channels), cfg.seed)?
        }
    };

    let mut bundle = if cfg.finetune {
        let (bundle, runs) = finetune_cv(&images, &pretrained, &prior, &cfg, cfg.folds)?;
        for r in &runs {
            log_rows.extend(r.log.iter().cloned());
        }
        bundle
    } else {
        ModelBundle {
            pretrained: pretrained.clone(),
            folds: Vec::new(),
            fold_of: Default::default(),
            prior: prior.clone(),
            prior_bandwidth: None,
            feature_subset: subset,
        }
    };
    bundle.prior_bandwidth = read_prior_bandwidth(&a.centerbias);
    bundle.save(&out.staging)?;
    out.write("train_log.csv", format_train_log(&log_rows))?;
    out.commit()
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let mut manifest = RunManifest::new("eval", &a.out).input("fixations", &a.fixations);
    if let Some(b) = &a.bundle {
        manifest = manifest.input("bundle", b);
    }
    if let Some(f) = &a.features {
        manifest = manifest.input("features", f);
    }
    if let Some(c) = &a.centerbias {
        manifest = manifest.input("centerbias", c);
    }
    manifest.seed = Some(a.seed);
    let out = Output::create(&manifest)?;

    let bundle = match (&a.bundle, a.model) {
        (Some(dir), _) => Some(ModelBundle::load(dir)?),
        (None, ModelKind::Bundle) => return Err(Error::Invalid("--bundle is required".into())),
        (None, ModelKind::Baseline) => None,
    };
    let baseline = match (&a.centerbias, &bundle) {
        (Some(p), _) => CenterBiasPrior::load(p)?,
        (None, Some(b)) => b.prior.clone(),
        (None, None) => {
            return Err(Error::Invalid("--centerbias or --bundle is required for the baseline".into()))
        }
    };
    let features = a
        .features
        .as_ref()
        .ok_or_else(|| Error::Invalid("--features is required".into()))?;
    let subset = bundle.as_ref().and_then(|b| b.feature_subset.clone());
    let store = FeatureStore::open(features)?.with_channel_subset(subset);
    let dataset = load_dataset(&a.fixations, &store)?;

    let mut mode = parse_mode(&a.mode)?;
    if let (Some(b), PredictMode::LeaveOut, ModelKind::Bundle) = (&bundle, mode, a.model) {
        let missing: Vec<&str> = dataset.image_ids().filter(|id| !b.fold_of.contains_key(*id)).collect();
        if !missing.is_empty() {
            if !a.allow_mixture {
                return Err(Error::Invalid(format!(
                    "{} evaluated images are not in the bundle's fold map (first: {}); pass --allow-mixture to use the fold mixture",
                    missing.len(),
                    missing[0]
                )));
            }
            log::warn!("{} images outside the fold map: evaluating the fold mixture", missing.len());
            mode = PredictMode::Mixture;
        }
    }

    let gold = GoldStandard::Kde(learn_gold_bandwidth(&dataset, &a.gold_bandwidths, &a.gold_eps, &baseline)?);
    if let GoldStandard::Kde(KdeModel { bandwidth, mix_eps }) = &gold {
        log::info!("gold standard bandwidth {bandwidth}, eps {mix_eps}");
    }
    let images: Vec<EvalImage> = dataset
        .image_ids()
        .map(|id| {
            Ok(EvalImage {
                id: id.to_owned(),
                shape: dataset.info(id).expect("listed image").grid,
                features: Some(store.handle(id)?),
                subjects: dataset.by_subject(id),
            })
        })
        .collect::<Result<_>>()?;
    let model = match (a.model, &bundle) {
        (ModelKind::Bundle, Some(b)) => EvalModel::Bundle { bundle: b, mode },
        _ => EvalModel::Baseline,
    };
    let report = build_eval_report(&model, &images, &baseline, &gold, a.seed)?;
    out.write("per_image.csv", report.rows_csv())?;
    let mut summary = format!("manifest={MANIFEST}\n");
    summary.push_str(&report.summary());
    out.write("summary.txt", summary)?;
    out.write("scatter.csv", report.scatter_csv())?;
    out.commit()
}

fn prediction_store(bundle: &ModelBundle, features: &Path) -> Result<(FeatureStore, Vec<String>)> {
    let store = FeatureStore::open(features)?.with_channel_subset(bundle.feature_subset.clone());
    let ids: Vec<String> = store.ids().map(str::to_owned).collect();
    if ids.is_empty() {
        return Err(Error::Invalid(format!("{}: no feature files", features.display())));
    }
    Ok((store, ids))
}

fn cmd_export_benchmark(a: &ExportArgs) -> Result<()> {
    let manifest = RunManifest::new("export-benchmark", &a.out)
        .input("bundle", &a.bundle)
        .input("features", &a.features);
    let out = Output::create(&manifest)?;
    let bundle = ModelBundle::load(&a.bundle)?;
    let mode = parse_mode(&a.mode)?;
    let (store, ids) = prediction_store(&bundle, &a.features)?;
    let maps: Vec<(String, Vec<u8>)> = ids
        .par_iter()
        .map(|id| {
            let stack = store.load(id)?;
            let p = predict(&bundle, &stack, mode, a.with_center_bias)?;
            Ok((id.clone(), quantize_equal_mass_256(&p.log_density())?.to_pgm()))
        })
        .collect::<Result<_>>()?;
    for (id, pgm) in maps {
        out.write(&format!("{id}.pgm"), pgm)?;
    }
    out.commit()
}

fn cmd_sample(a: &SampleArgs) -> Result<()> {
    let mut manifest = RunManifest::new("sample", &a.out)
        .input("bundle", &a.bundle)
        .input("features", &a.features);
    manifest.seed = Some(a.seed);
    let out = Output::create(&manifest)?;
    let bundle = ModelBundle::load(&a.bundle)?;
    let mode = parse_mode(&a.mode)?;
    let (store, ids) = prediction_store(&bundle, &a.features)?;
    let per_image: Vec<(String, String)> = ids
        .par_iter()
        .enumerate()
        .map(|(i, id)| {
            let stack = store.load(id)?;
            let p = predict(&bundle, &stack, mode, !a.uniform_center_bias)?;
            let mut samples = String::new();
            for (k, c) in sample_fixations(&p, a.n, derive_seed(a.seed, i as u64))?.iter().enumerate() {
                writeln!(samples, "{id},{k},{},{}", c.x, c.y).unwrap();
            }
            let t = contour_thresholds(&p).thresholds;
            Ok((samples, format!("{id},{},{},{}\n", t[0], t[1], t[2])))
        })
        .collect::<Result<_>>()?;
    let mut samples = String::from("image_id,sample,x,y\n");
    let mut contours = String::from("image_id,t1,t2,t3\n");
    for (s, c) in per_image {
        samples.push_str(&s);
        contours.push_str(&c);
    }
    out.write("samples.csv", samples)?;
    out.write("contours.csv", contours)?;
    out.commit()
}
