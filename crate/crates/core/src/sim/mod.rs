//! Population-scale response simulation.
//!
//! A population of abilities is drawn to match the training distribution,
//! one response per (item, ability) cell is produced by a
//! [`GeneratorBackend`] and scored by a [`ScorerBackend`]. Each cell draws
//! from its own seeded substream, and results are sorted by (item id, ability
//! index), so neither parallelism nor completion order changes the output.

mod external;
mod population;
mod synthetic;

use std::collections::BTreeSet;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::irt::ScoredResponse;
use crate::seed;

pub use external::{BackendRequest, BackendResponse, HttpBackend, PromptSet, SubprocessBackend};
pub(crate) use population::rounded_ability_id;
pub use population::{assign_student_id, sample_population, AbilityHistogram};
pub use synthetic::{
    noisy_score, parse_envelope, synthetic_oracle_generate, synthetic_oracle_score, tune_flip_prob, Envelope,
    EnvelopeError, NoisyScorer, SyntheticGenerator, SyntheticScorer,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("{0}")]
    Domain(String),
    #[error("invalid simulation plan: {0}")]
    InvalidPlan(String),
    #[error("every cell of item `{item}` failed; last error: {last_error}")]
    ItemFailed { item: String, last_error: String },
}

/// Failure reported by a backend call.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum BackendError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("backend rejected request: {0}")]
    Rejected(String),
}

/// An assessment item: passage (may be empty), question and scoring rubric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Item {
    pub item_id: String,
    #[serde(default)]
    pub passage: String,
    pub question: String,
    #[serde(default)]
    pub rubric: String,
    pub num_categories: usize,
}

impl Item {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.question.trim().is_empty() {
            return Err(SimError::Domain(format!("item `{}` has an empty question", self.item_id)));
        }
        if self.num_categories < 2 {
            return Err(SimError::Domain(format!(
                "item `{}` needs at least 2 score categories",
                self.item_id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Decoding {
    pub max_tokens: u32,
    pub temperature: f64,
    pub top_p: f64,
}

impl Default for Decoding {
    fn default() -> Self {
        Self {
            max_tokens: 500,
            temperature: 0.7,
            top_p: 0.95,
        }
    }
}

/// One simulation run. Defaults: 1000 abilities from a 50-bucket histogram,
/// 3 attempts per backend call with 100 ms base backoff.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationPlan {
    pub population_size: usize,
    pub histogram_bins: usize,
    pub rng_seed: u64,
    pub decoding: Decoding,
    pub max_attempts: u32,
    pub backoff_ms: u64,
    pub parallelism: usize,
}

impl Default for SimulationPlan {
    fn default() -> Self {
        Self {
            population_size: 1000,
            histogram_bins: 50,
            rng_seed: 0,
            decoding: Decoding::default(),
            max_attempts: 3,
            backoff_ms: 100,
            parallelism: 4,
        }
    }
}

impl SimulationPlan {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidPlan(m.into()));
        if self.population_size < 1 {
            return bad("population_size must be at least 1");
        }
        if self.histogram_bins < 1 {
            return bad("histogram_bins must be at least 1");
        }
        if self.max_attempts < 1 {
            return bad("max_attempts must be at least 1");
        }
        if self.parallelism < 1 {
            return bad("parallelism must be at least 1");
        }
        Ok(())
    }
}

/// Produces a response text for an item at a prompted ability.
pub trait GeneratorBackend: Send + Sync {
    /// `seed` is the cell's substream; deterministic backends should draw
    /// all randomness from it.
    fn generate(&self, item: &Item, theta: f64, decoding: &Decoding, seed: u64) -> Result<String, BackendError>;
}

/// Assigns a score in `0..item.num_categories` to a response text.
pub trait ScorerBackend: Send + Sync {
    fn score(&self, item: &Item, text: &str, seed: u64) -> Result<usize, BackendError>;
}

/// One scored simulated response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedResponse {
    pub item_id: String,
    pub ability_index: usize,
    pub theta: f64,
    pub student_id: String,
    pub text: String,
    pub score: usize,
}

impl SimulatedResponse {
    /// Dataset row with the rounded-ability student id and the prompted
    /// ability as `prior_ability`.
    pub fn to_scored(&self) -> ScoredResponse {
        ScoredResponse {
            item_id: self.item_id.clone(),
            student_id: self.student_id.clone(),
            text: self.text.clone(),
            score: self.score,
            prior_ability: Some(self.theta),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedCell {
    pub item_id: String,
    pub ability_index: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimulationOutput {
    pub responses: Vec<SimulatedResponse>,
    pub failed: Vec<FailedCell>,
}

impl SimulationOutput {
    pub fn scored(&self) -> Vec<ScoredResponse> {
        self.responses.iter().map(SimulatedResponse::to_scored).collect()
    }
}

fn run_cell(
    item: &Item,
    index: usize,
    theta: f64,
    plan: &SimulationPlan,
    generator: &dyn GeneratorBackend,
    scorer: &dyn ScorerBackend,
) -> Result<SimulatedResponse, BackendError> {
    let gen_seed = seed::substream(plan.rng_seed, &format!("generate:{}:{index}", item.item_id));
    let score_seed = seed::substream(plan.rng_seed, &format!("score:{}:{index}", item.item_id));
    let mut last = None;
    for attempt in 0..plan.max_attempts {
        if attempt > 0 && plan.backoff_ms > 0 {
            std::thread::sleep(Duration::from_millis(plan.backoff_ms << (attempt - 1)));
        }
        let outcome = generator
            .generate(item, theta, &plan.decoding, gen_seed)
            .and_then(|text| {
                let score = scorer.score(item, &text, score_seed)?;
                if score >= item.num_categories {
                    return Err(BackendError::Protocol(format!(
                        "score {score} outside 0..{}",
                        item.num_categories
                    )));
                }
                Ok((text, score))
            });
        match outcome {
            Ok((text, score)) => {
                return Ok(SimulatedResponse {
                    item_id: item.item_id.clone(),
                    ability_index: index,
                    theta,
                    student_id: assign_student_id(theta),
                    text,
                    score,
                })
            }
            Err(e) => {
                log::debug!("cell ({}, {index}) attempt {} failed: {e}", item.item_id, attempt + 1);
                last = Some(e);
            }
        }
    }
    Err(last.expect("at least one attempt"))
}

/// Generates and scores one response for every (item, ability) cell.
///
/// Cells that still fail after `plan.max_attempts` are excluded and listed in
/// [`SimulationOutput::failed`]; an item whose every cell failed aborts the
/// run.
pub fn run_simulation(
    items: &[Item],
    abilities: &[f64],
    plan: &SimulationPlan,
    generator: &dyn GeneratorBackend,
    scorer: &dyn ScorerBackend,
) -> Result<SimulationOutput, SimError> {
    plan.validate()?;
    let mut seen = BTreeSet::new();
    for item in items {
        item.validate()?;
        if !seen.insert(item.item_id.as_str()) {
            return Err(SimError::Domain(format!("duplicate item `{}`", item.item_id)));
        }
    }
    if let Some(t) = abilities.iter().find(|t| !t.is_finite()) {
        return Err(SimError::Domain(format!("non-finite ability {t}")));
    }

    let cells: Vec<(usize, usize)> = (0..items.len())
        .flat_map(|i| (0..abilities.len()).map(move |j| (i, j)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(plan.parallelism)
        .build()
        .map_err(|e| SimError::InvalidPlan(e.to_string()))?;
    let results: Vec<Result<SimulatedResponse, BackendError>> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(i, j)| run_cell(&items[i], j, abilities[j], plan, generator, scorer))
            .collect()
    });

    let mut out = SimulationOutput::default();
    for (&(i, j), result) in cells.iter().zip(results) {
        match result {
            Ok(r) => out.responses.push(r),
            Err(e) => out.failed.push(FailedCell {
                item_id: items[i].item_id.clone(),
                ability_index: j,
                error: e.to_string(),
            }),
        }
    }
    if !abilities.is_empty() {
        for item in items {
            let succeeded = out.responses.iter().any(|r| r.item_id == item.item_id);
            if !succeeded {
                let last_error = out
                    .failed
                    .iter()
                    .rev()
                    .find(|f| f.item_id == item.item_id)
                    .map(|f| f.error.clone())
                    .unwrap_or_default();
                return Err(SimError::ItemFailed {
                    item: item.item_id.clone(),
                    last_error,
                });
            }
        }
    }
    if !out.failed.is_empty() {
        log::warn!("{} simulation cells failed and were excluded", out.failed.len());
    }
    out.responses
        .sort_by(|a, b| a.item_id.cmp(&b.item_id).then(a.ability_index.cmp(&b.ability_index)));
    out.failed
        .sort_by(|a, b| a.item_id.cmp(&b.item_id).then(a.ability_index.cmp(&b.ability_index)));
    Ok(out)
}
