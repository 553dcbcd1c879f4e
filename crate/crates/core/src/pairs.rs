//! Preference pairs mined from real responses by comparing how likely each
//! response's score is for the responding student under a fitted GPCM.
//!
//! For a response `r_ij` with score `y_ij` by a student of ability `theta_j`,
//! the negative candidates are the other responses `r_ik` to the same item
//! with `P(y_ij|theta_j) - P(y_ik|theta_j) > epsilon`. Up to `m` of them are
//! sampled without replacement, each giving one (winner, loser) pair.

use std::collections::BTreeMap;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::irt::{score_probabilities, FitResult, IrtError, ItemParams, ScoredResponse};
use crate::prompt::{format_ability, PromptTemplate, TemplateError};
use crate::seed;
use crate::sim::Item;

#[derive(Debug, Error)]
pub enum MiningError {
    #[error("response for item `{found}` in the pool of item `{expected}`")]
    ItemMismatch { expected: String, found: String },
    #[error("invalid mining configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Irt(#[from] IrtError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub item_id: String,
    pub student_id: String,
    pub theta: f64,
    pub winner_text: String,
    pub loser_text: String,
    pub winner_prob: f64,
    pub loser_prob: f64,
}

/// Defaults: `epsilon = 0.1`, `m = 3`, mining over a random 20% of responses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MiningConfig {
    pub epsilon: f64,
    pub negatives_per_response: usize,
    pub rng_seed: u64,
    pub train_fraction: f64,
}

impl Default for MiningConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            negatives_per_response: 3,
            rng_seed: 0,
            train_fraction: 0.2,
        }
    }
}

impl MiningConfig {
    pub fn validate(&self) -> Result<(), MiningError> {
        if !(0.0..1.0).contains(&self.epsilon) {
            return Err(MiningError::InvalidConfig("epsilon must lie in [0, 1)".into()));
        }
        if self.negatives_per_response < 1 {
            return Err(MiningError::InvalidConfig("m must be at least 1".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return Err(MiningError::InvalidConfig("train_fraction must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Responses in `pool` whose score is more than `epsilon` less likely than
/// the target's score for a student of ability `theta`.
pub fn negative_candidates<'a>(
    target: &ScoredResponse,
    pool: &'a [ScoredResponse],
    params: &ItemParams,
    theta: f64,
    epsilon: f64,
) -> Result<Vec<&'a ScoredResponse>, MiningError> {
    for r in pool.iter().chain(std::iter::once(target)) {
        if r.item_id != params.item_id() {
            return Err(MiningError::ItemMismatch {
                expected: params.item_id().to_string(),
                found: r.item_id.clone(),
            });
        }
    }
    let probs = score_probabilities(theta, params)?;
    let p_target = prob_of(&probs, target)?;
    let mut out = Vec::new();
    for r in pool {
        if p_target - prob_of(&probs, r)? > epsilon {
            out.push(r);
        }
    }
    Ok(out)
}

fn prob_of(probs: &[f64], r: &ScoredResponse) -> Result<f64, IrtError> {
    probs.get(r.score).copied().ok_or_else(|| IrtError::ScoreOutOfRange {
        item: r.item_id.clone(),
        score: r.score,
        categories: probs.len(),
    })
}

/// Mines preference pairs from `dataset`.
///
/// A seeded `train_fraction` of the responses act as winners; each one's pool
/// is every response in `dataset` to the same item. Sampling for an item uses
/// a substream keyed by its id, so the output does not depend on how items
/// are scheduled. Pairs come out ordered by item id, then by the winner's
/// position in `dataset`.
pub fn mine(
    dataset: &[ScoredResponse],
    fit: &FitResult,
    config: &MiningConfig,
) -> Result<Vec<PreferencePair>, MiningError> {
    config.validate()?;
    let n = dataset.len();
    let n_selected = ((n as f64 * config.train_fraction).round() as usize).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::rng_for(config.rng_seed, "mining-subset"));
    let mut selected = order[..n_selected].to_vec();
    selected.sort_unstable();

    let mut pools: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in dataset.iter().enumerate() {
        pools.entry(&r.item_id).or_default().push(i);
    }
    let mut winners: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for &i in &selected {
        winners.entry(&dataset[i].item_id).or_default().push(i);
    }

    let per_item: Vec<Result<Vec<PreferencePair>, MiningError>> = winners
        .into_par_iter()
        .map(|(item_id, targets)| {
            let params = fit
                .item_params
                .get(item_id)
                .ok_or_else(|| IrtError::UnknownItem(item_id.to_string()))?;
            let pool = &pools[item_id];
            let mut rng = seed::rng_for(config.rng_seed, &format!("mining-item:{item_id}"));
            let mut pairs = Vec::new();
            for &t in &targets {
                let target = &dataset[t];
                let theta = fit
                    .theta(&target.student_id)
                    .ok_or_else(|| IrtError::UnknownStudent(target.student_id.clone()))?;
                let probs = score_probabilities(theta, params)?;
                let p_win = prob_of(&probs, target)?;
                let mut candidates = Vec::new();
                for &k in pool {
                    let p_k = prob_of(&probs, &dataset[k])?;
                    if p_win - p_k > config.epsilon {
                        candidates.push((k, p_k));
                    }
                }
                let take = config.negatives_per_response.min(candidates.len());
                for pick in index::sample(&mut rng, candidates.len(), take) {
                    let (k, p_lose) = candidates[pick];
                    pairs.push(PreferencePair {
                        item_id: item_id.to_string(),
                        student_id: target.student_id.clone(),
                        theta,
                        winner_text: target.text.clone(),
                        loser_text: dataset[k].text.clone(),
                        winner_prob: p_win,
                        loser_prob: p_lose,
                    });
                }
            }
            Ok(pairs)
        })
        .collect();

    let mut out = Vec::new();
    for chunk in per_item {
        out.extend(chunk?);
    }
    Ok(out)
}

/// One exported training row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRow {
    pub prompt: String,
    pub chosen: String,
    pub rejected: String,
}

/// Renders a pair's prompt. Items missing from `items` render with an empty
/// passage and question.
pub fn render_pair_prompt(
    pair: &PreferencePair,
    items: &BTreeMap<String, Item>,
    template: &PromptTemplate,
) -> Result<String, TemplateError> {
    let (passage, question) = items
        .get(&pair.item_id)
        .map_or(("", ""), |item| (item.passage.as_str(), item.question.as_str()));
    let ability = format_ability(pair.theta);
    template.render(&[("passage", passage), ("question", question), ("ability", &ability)])
}

/// Writes pairs as JSONL rows `{"prompt", "chosen", "rejected"}` and returns
/// the number of rows.
pub fn export_pairs(
    pairs: &[PreferencePair],
    items: &BTreeMap<String, Item>,
    template: &PromptTemplate,
    path: impl AsRef<Path>,
) -> Result<usize, MiningError> {
    let path = path.as_ref();
    let io_err = |source| MiningError::Io {
        path: path.display().to_string(),
        source,
    };
    let rows = pairs
        .iter()
        .map(|p| {
            Ok(PairRow {
                prompt: render_pair_prompt(p, items, template)?,
                chosen: p.winner_text.clone(),
                rejected: p.loser_text.clone(),
            })
        })
        .collect::<Result<Vec<_>, MiningError>>()?;
    let file = std::fs::File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    for row in &rows {
        let line = serde_json::to_string(row).expect("row serializes");
        writeln!(w, "{line}").map_err(io_err)?;
    }
    w.flush().map_err(io_err)?;
    Ok(rows.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::irt::{AbilityRecord, FitConfig};

    fn derived_item() -> ItemParams {
        ItemParams::new("q", 1.0, 0.0, vec![0.0, 0.5, -0.5]).unwrap()
    }

    fn resp(score: usize, text: &str) -> ScoredResponse {
        ScoredResponse::new("q", "s", text, score)
    }

    fn fit_for(params: ItemParams, students: &[(&str, f64)]) -> FitResult {
        FitResult {
            item_params: BTreeMap::from([(params.item_id().to_string(), params)]),
            abilities: students
                .iter()
                .map(|(id, t)| {
                    (
                        id.to_string(),
                        AbilityRecord {
                            student_id: id.to_string(),
                            theta: *t,
                        },
                    )
                })
                .collect(),
            holdout_qwk: None,
            final_loss: 0.0,
            loss_curve: vec![],
            config: FitConfig::default(),
        }
    }

    #[test]
    fn same_score_pool_has_no_candidates() {
        let pool = vec![resp(1, "a"), resp(1, "b")];
        let c = negative_candidates(&resp(1, "t"), &pool, &derived_item(), 0.3, 0.0).unwrap();
        assert!(c.is_empty());
    }

    #[test]
    fn threshold_above_every_gap_gives_nothing() {
        let pool = vec![resp(0, "a"), resp(1, "b"), resp(2, "c")];
        let c = negative_candidates(&resp(2, "t"), &pool, &derived_item(), 1.0, 0.5).unwrap();
        assert!(c.is_empty());
    }

    #[test]
    fn derived_three_category_case() {
        // P = (0.0777, 0.3482, 0.5741) at theta = 1; margins 0.4964 and 0.2259
        let pool = vec![resp(0, "zero"), resp(1, "one"), resp(2, "two")];
        let c = negative_candidates(&resp(2, "t"), &pool, &derived_item(), 1.0, 0.1).unwrap();
        let texts: Vec<&str> = c.iter().map(|r| r.text.as_str()).collect();
        assert_eq!(texts, vec!["zero", "one"]);
        // a threshold between the two margins keeps only score 0
        let c = negative_candidates(&resp(2, "t"), &pool, &derived_item(), 1.0, 0.3).unwrap();
        assert_eq!(c.len(), 1);
    }

    #[test]
    fn item_mismatch_is_rejected() {
        let pool = vec![ScoredResponse::new("other", "s", "", 0)];
        let err = negative_candidates(&resp(2, "t"), &pool, &derived_item(), 1.0, 0.1);
        assert!(matches!(err, Err(MiningError::ItemMismatch { .. })));
    }

    #[test]
    fn single_response_dataset_mines_nothing() {
        let fit = fit_for(derived_item(), &[("s", 1.0)]);
        let config = MiningConfig {
            train_fraction: 1.0,
            ..MiningConfig::default()
        };
        assert!(mine(&[resp(2, "t")], &fit, &config).unwrap().is_empty());
    }

    #[test]
    fn candidates_are_capped_at_availability() {
        let fit = fit_for(derived_item(), &[("w", 1.0), ("x", 0.0)]);
        let dataset = vec![
            ScoredResponse::new("q", "w", "winner", 2),
            ScoredResponse::new("q", "x", "loser", 0),
        ];
        let config = MiningConfig {
            train_fraction: 1.0,
            epsilon: 0.3,
            ..MiningConfig::default()
        };
        let pairs = mine(&dataset, &fit, &config).unwrap();
        // only the score-2 winner has a candidate; at theta 0 the score-0
        // response is not dominated by enough
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].winner_text, "winner");
        assert_eq!(pairs[0].loser_text, "loser");
    }

    #[test]
    fn rejects_bad_config() {
        let fit = fit_for(derived_item(), &[]);
        for config in [
            MiningConfig { epsilon: 1.0, ..MiningConfig::default() },
            MiningConfig { negatives_per_response: 0, ..MiningConfig::default() },
            MiningConfig { train_fraction: 0.0, ..MiningConfig::default() },
        ] {
            assert!(matches!(mine(&[], &fit, &config), Err(MiningError::InvalidConfig(_))));
        }
    }

    #[test]
    fn export_writes_formatted_ability() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pairs.jsonl");
        let template = PromptTemplate::simulated_student();
        assert_eq!(export_pairs(&[], &BTreeMap::new(), &template, &path).unwrap(), 0);
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "");

        let pair = PreferencePair {
            item_id: "q".into(),
            student_id: "s".into(),
            theta: 0.5,
            winner_text: "good".into(),
            loser_text: "bad".into(),
            winner_prob: 0.6,
            loser_prob: 0.1,
        };
        let items = BTreeMap::from([(
            "q".to_string(),
            Item {
                item_id: "q".into(),
                passage: "P".into(),
                question: "Q?".into(),
                rubric: String::new(),
                num_categories: 3,
            },
        )]);
        assert_eq!(export_pairs(&[pair], &items, &template, &path).unwrap(), 1);
        let text = std::fs::read_to_string(&path).unwrap();
        let row: PairRow = serde_json::from_str(text.trim()).unwrap();
        assert!(row.prompt.contains("0.5000"));
        assert!(row.prompt.contains("Q?"));
        assert_eq!((row.chosen.as_str(), row.rejected.as_str()), ("good", "bad"));
    }

    #[test]
    fn export_reports_unwritable_path() {
        let template = PromptTemplate::simulated_student();
        let err = export_pairs(&[], &BTreeMap::new(), &template, "/nonexistent-dir/x.jsonl");
        assert!(matches!(err, Err(MiningError::Io { .. })));
    }
}
