//! Evaluation metrics for difficulty prediction and response simulation.

mod agreement;
mod correlation;
mod distribution;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use agreement::qwk;
pub use correlation::{average_ranks, pcc, rmse, scc};
pub use distribution::{
    covariance, diversity_kl, diversity_kl_with, fid, product_sqrt, DIVERSITY_BINS, DIVERSITY_SMOOTHING,
};

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("metric undefined: {0}")]
    Undefined(String),
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("score {score} outside 0..{categories}")]
    ScoreOutOfRange { score: usize, categories: usize },
    #[error("zero-norm vector")]
    ZeroNorm,
    #[error("non-finite input")]
    NonFinite,
}

/// A named metric value together with its sample count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub name: String,
    pub value: f64,
    pub n: usize,
}

impl MetricReport {
    pub fn new(name: impl Into<String>, value: f64, n: usize) -> Self {
        Self {
            name: name.into(),
            value,
            n,
        }
    }
}

/// Spearman correlation between prompted abilities and the scores their
/// simulated responses received.
pub fn theta_align(abilities: &[f64], scores: &[usize]) -> Result<f64, MetricError> {
    let scores: Vec<f64> = scores.iter().map(|&s| s as f64).collect();
    scc(abilities, &scores)
}
