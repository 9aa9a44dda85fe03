//! Training configuration, read from a flat `key = value` file.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::readout::DEFAULT_HIDDEN;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    /// Adam epochs followed by a full-batch L-BFGS pass from the best epoch.
    AdamLbfgs,
}

impl FromStr for OptimizerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(OptimizerKind::Adam),
            "adam+lbfgs" => Ok(OptimizerKind::AdamLbfgs),
            other => Err(Error::Invalid(format!("unknown optimizer {other:?}"))),
        }
    }
}

/// Model variants used to attribute performance to individual design choices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Ablation {
    None,
    /// A single affine layer instead of the readout network.
    LinearReadout,
    /// Fine-tune from random initialization.
    NoPretrain,
    /// Only these feature channels are used.
    FeatureSubset(Vec<usize>),
}

impl FromStr for Ablation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Ablation::None),
            "linear-readout" => Ok(Ablation::LinearReadout),
            "no-pretrain" => Ok(Ablation::NoPretrain),
            _ => match s.strip_prefix("feature-subset=") {
                Some(list) => Ok(Ablation::FeatureSubset(parse_channel_list(list)?)),
                None => Err(Error::Invalid(format!("unknown ablation {s:?}"))),
            },
        }
    }
}

/// Parses `0,3,5-9` style channel lists.
pub fn parse_channel_list(s: &str) -> Result<Vec<usize>> {
    let bad = || Error::Invalid(format!("bad channel list {s:?}"));
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let a: usize = a.trim().parse().map_err(|_| bad())?;
                let b: usize = b.trim().parse().map_err(|_| bad())?;
                if b < a {
                    return Err(bad());
                }
                out.extend(a..=b);
            }
            None => out.push(part.parse().map_err(|_| bad())?),
        }
    }
    if out.is_empty() {
        return Err(bad());
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size_pretrain: usize,
    pub batch_size_finetune: usize,
    pub min_epochs: usize,
    pub max_epochs: usize,
    pub lookback: usize,
    pub window: usize,
    pub learning_rate: f64,
    /// Multiplicative per-epoch learning-rate decay.
    pub lr_decay: f64,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub lbfgs_iters: usize,
    pub lbfgs_memory: usize,
    pub hidden: Vec<usize>,
    pub folds: usize,
    pub pretrain: bool,
    pub finetune: bool,
    pub ablations: Vec<Ablation>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size_pretrain: 100,
            batch_size_finetune: 10,
            min_epochs: 20,
            max_epochs: 800,
            lookback: 5,
            window: 3,
            learning_rate: 0.01,
            lr_decay: 1.0,
            seed: 0,
            optimizer: OptimizerKind::Adam,
            lbfgs_iters: 50,
            lbfgs_memory: 10,
            hidden: DEFAULT_HIDDEN.to_vec(),
            folds: 10,
            pretrain: true,
            finetune: true,
            ablations: Vec::new(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Invalid(format!("bad value {value:?} for {key}")))
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Invalid(m));
        if self.window == 0 || self.lookback == 0 {
            return err("window and lookback must be positive".into());
        }
        if self.window > self.lookback {
            return err(format!("window {} exceeds lookback {}", self.window, self.lookback));
        }
        if self.min_epochs < self.window + self.lookback {
            return err(format!(
                "min_epochs {} must be at least window + lookback = {}",
                self.min_epochs,
                self.window + self.lookback
            ));
        }
        if self.max_epochs < self.min_epochs {
            return err(format!("max_epochs {} below min_epochs {}", self.max_epochs, self.min_epochs));
        }
        if self.batch_size_pretrain == 0 || self.batch_size_finetune == 0 {
            return err("batch sizes must be positive".into());
        }
        if !(self.learning_rate > 0.0) || !(self.lr_decay > 0.0) {
            return err("learning rate and decay must be positive".into());
        }
        if self.folds < 2 {
            return err(format!("need at least 2 folds, got {}", self.folds));
        }
        if self.hidden.contains(&0) {
            return err("hidden layer widths must be positive".into());
        }
        if !self.pretrain && !self.finetune {
            return err("no training phase selected".into());
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "batch_size_pretrain" => self.batch_size_pretrain = parse(key, value)?,
            "batch_size_finetune" => self.batch_size_finetune = parse(key, value)?,
            "min_epochs" => self.min_epochs = parse(key, value)?,
            "max_epochs" => self.max_epochs = parse(key, value)?,
            "lookback" => self.lookback = parse(key, value)?,
            "window" => self.window = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "lr_decay" => self.lr_decay = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "optimizer" => self.optimizer = value.parse()?,
            "lbfgs_iters" => self.lbfgs_iters = parse(key, value)?,
            "lbfgs_memory" => self.lbfgs_memory = parse(key, value)?,
            "hidden" => {
                self.hidden = if value.trim().is_empty() {
                    Vec::new()
                } else {
                    value
                        .split(',')
                        .map(|v| parse(key, v.trim()))
                        .collect::<Result<_>>()?
                }
            }
            "folds" => self.folds = parse(key, value)?,
            "phases" => {
                self.pretrain = false;
                self.finetune = false;
                for phase in value.split(',').map(str::trim) {
                    match phase {
                        "pretrain" => self.pretrain = true,
                        "finetune" => self.finetune = true,
                        other => return Err(Error::Invalid(format!("unknown phase {other:?}"))),
                    }
                }
            }
            "ablation" => self.ablations.push(value.parse()?),
            other => return Err(Error::Invalid(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Invalid(format!("config line {}: expected key=value", n + 1))
            })?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_str(&text)
    }

    pub fn linear_readout(&self) -> bool {
        self.ablations.contains(&Ablation::LinearReadout)
    }

    pub fn skip_pretrain(&self) -> bool {
        self.ablations.contains(&Ablation::NoPretrain)
    }

    pub fn feature_subset(&self) -> Option<Vec<usize>> {
        self.ablations.iter().find_map(|a| match a {
            Ablation::FeatureSubset(s) => Some(s.clone()),
            _ => None,
        })
    }

    /// Channel plan for a given input width, honoring the linear ablation.
    pub fn channel_plan(&self, channels: usize) -> Vec<usize> {
        let mut plan = vec![channels];
        if !self.linear_readout() {
            plan.extend(&self.hidden);
        }
        plan.push(1);
        plan
    }
}
