//! Probabilistic fixation-density models trained by maximum likelihood.
//!
//! A small readout network of 1×1 convolutions maps frozen deep feature maps
//! to a saliency map, which is blurred, combined with a log center-bias prior
//! and normalized by a softmax into a density over the feature grid. The
//! crate also fits the center-bias baseline and the cross-subject
//! gold-standard KDE, trains readouts with image-crossvalidation, and scores
//! predictions with log-likelihood, information gain, AUC and shuffled AUC.

pub mod baseline;
pub mod cli;
pub mod config;
pub mod data;
pub mod density;
mod error;
pub mod grid;
pub mod metrics;
pub mod optim;
pub mod readout;
pub mod trainer;

pub use error::{Error, Result};
pub use grid::{Cell, Grid, GridShape};
