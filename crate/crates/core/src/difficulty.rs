//! Difficulty prediction for unseen items.
//!
//! Simulated responses to the new items are pooled with the real training
//! responses and the IRT model is refit, warm-started from the calibrated
//! train model. Predictions are then mapped onto the train difficulty scale
//! by matching mean and standard deviation. An embedding nearest-neighbour
//! baseline is included for comparison.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::irt::{self, FitConfig, FitResult, IrtError, ScoredResponse};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Irt(#[from] IrtError),
    #[error("{0}")]
    Domain(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifficultyPrediction {
    pub item_id: String,
    pub raw_difficulty: f64,
    pub normalized_difficulty: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub item_id: String,
    pub vector: Vec<f64>,
}

/// Refits on real plus simulated responses and returns the raw difficulty of
/// every item that appears only in `sim_responses`, sorted by item id.
///
/// The `normalized_difficulty` field is filled with the train-moment
/// normalization against the calibrated train difficulties.
pub fn predict_difficulties(
    train_responses: &[ScoredResponse],
    sim_responses: &[ScoredResponse],
    calibrated: &FitResult,
    num_categories: &BTreeMap<String, usize>,
    config: &FitConfig,
) -> Result<Vec<DifficultyPrediction>, PipelineError> {
    let train_items: BTreeSet<&str> = train_responses.iter().map(|r| r.item_id.as_str()).collect();
    let unseen: BTreeSet<&str> = sim_responses
        .iter()
        .map(|r| r.item_id.as_str())
        .filter(|id| !train_items.contains(id))
        .collect();
    if unseen.is_empty() {
        return Err(PipelineError::Domain(
            "simulated responses contain no unseen items to predict".into(),
        ));
    }

    let mut union = Vec::with_capacity(train_responses.len() + sim_responses.len());
    union.extend_from_slice(train_responses);
    union.extend_from_slice(sim_responses);
    let refit = irt::fit(&union, num_categories, config, Some(calibrated))?;

    let raw: Vec<f64> = unseen
        .iter()
        .map(|id| refit.difficulty(id).expect("fitted item"))
        .collect();
    let train_b: Vec<f64> = calibrated
        .item_params
        .iter()
        .filter(|(id, _)| train_items.contains(id.as_str()))
        .map(|(_, p)| p.difficulty())
        .collect();
    let normalized = normalize_predictions(&raw, &train_b)?;
    Ok(unseen
        .into_iter()
        .zip(raw.into_iter().zip(normalized))
        .map(|(id, (raw_difficulty, normalized_difficulty))| DifficultyPrediction {
            item_id: id.to_string(),
            raw_difficulty,
            normalized_difficulty,
        })
        .collect())
}

fn moments(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Affine map giving `preds` the mean and (population) standard deviation
/// of `train_difficulties`.
pub fn normalize_predictions(preds: &[f64], train_difficulties: &[f64]) -> Result<Vec<f64>, PipelineError> {
    if preds.len() < 2 || train_difficulties.len() < 2 {
        return Err(PipelineError::Domain(
            "normalization needs at least two predictions and two train difficulties".into(),
        ));
    }
    if preds.iter().chain(train_difficulties).any(|v| !v.is_finite()) {
        return Err(PipelineError::Domain("non-finite difficulty".into()));
    }
    let (mu1, sd1) = moments(preds);
    let (mu2, sd2) = moments(train_difficulties);
    if sd1 == 0.0 {
        return Err(PipelineError::Domain("predicted difficulties have zero spread".into()));
    }
    let scale = sd2 / sd1;
    Ok(preds.iter().map(|b| scale * (b - mu1) + mu2).collect())
}

fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (na > 0.0 && nb > 0.0).then(|| dot / (na * nb))
}

/// Mean difficulty of the `k` train items most cosine-similar to `test`.
/// Equal similarities are ordered by item id.
pub fn knn_mean_difficulty(
    test: &EmbeddingRecord,
    train: &[(EmbeddingRecord, f64)],
    k: usize,
) -> Result<f64, PipelineError> {
    if train.is_empty() {
        return Err(PipelineError::Domain("no train embeddings".into()));
    }
    if k == 0 {
        return Err(PipelineError::Domain("k must be at least 1".into()));
    }
    let mut scored = Vec::with_capacity(train.len());
    for (rec, b) in train {
        if rec.vector.len() != test.vector.len() {
            return Err(PipelineError::Domain(format!(
                "embedding of `{}` has dimension {}, expected {}",
                rec.item_id,
                rec.vector.len(),
                test.vector.len()
            )));
        }
        let sim = cosine(&test.vector, &rec.vector)
            .ok_or_else(|| PipelineError::Domain(format!("zero embedding for `{}`", rec.item_id)))?;
        scored.push((sim, rec.item_id.as_str(), *b));
    }
    scored.sort_by(|x, y| y.0.total_cmp(&x.0).then_with(|| x.1.cmp(y.1)));
    let top = &scored[..k.min(scored.len())];
    Ok(top.iter().map(|t| t.2).sum::<f64>() / top.len() as f64)
}
