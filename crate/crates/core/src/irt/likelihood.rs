use std::collections::BTreeMap;

use super::model::{log_probs_into, AbilityRecord, ItemParams, ScoredResponse};
use super::IrtError;

/// Partial derivatives of a log-likelihood with respect to one item's
/// parameters. `free_steps` holds derivatives for `d_1..d_{C-2}`, with the
/// last step treated as `-sum(free)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ItemGradient {
    pub discrimination: f64,
    pub difficulty: f64,
    pub free_steps: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LikelihoodGradient {
    pub items: BTreeMap<String, ItemGradient>,
    pub abilities: BTreeMap<String, f64>,
}

/// Per-response derivative terms of `log P(y|theta)`.
pub(crate) struct ResponseTerms {
    pub log_prob: f64,
    pub theta: f64,
    pub discrimination: f64,
    pub difficulty: f64,
}

/// Evaluates `log P(y|theta)` and its gradient. `scratch` must have length C
/// and `d_free` length C - 2.
pub(crate) fn response_terms(
    theta: f64,
    a: f64,
    b: f64,
    steps: &[f64],
    y: usize,
    scratch: &mut [f64],
    d_free: &mut [f64],
) -> ResponseTerms {
    let c_count = steps.len();
    log_probs_into(theta, a, b, steps, scratch);
    let log_prob = scratch[y];
    for s in scratch.iter_mut() {
        *s = s.exp();
    }
    let probs = &*scratch;

    let shift = theta - b;
    let mut expected = 0.0;
    let mut expected_g = 0.0;
    let mut g_y = 0.0;
    let mut cum_steps = 0.0;
    for (c, (p, d)) in probs.iter().zip(steps).enumerate() {
        cum_steps += d;
        let g = (c + 1) as f64 * shift + cum_steps;
        expected += c as f64 * p;
        expected_g += p * g;
        if c == y {
            g_y = g;
        }
    }

    let last = probs[c_count - 1];
    let mut tail = last;
    for k in (1..c_count - 1).rev() {
        tail += probs[k];
        let indicator = if k <= y { 1.0 } else { 0.0 };
        let last_indicator = if y == c_count - 1 { 1.0 } else { 0.0 };
        d_free[k - 1] = a * (indicator - last_indicator - tail + last);
    }

    let d_theta = a * (y as f64 - expected);
    ResponseTerms {
        log_prob,
        theta: d_theta,
        discrimination: g_y - expected_g,
        difficulty: -d_theta,
    }
}

fn lookup<'a>(
    r: &ScoredResponse,
    items: &'a BTreeMap<String, ItemParams>,
    abilities: &BTreeMap<String, AbilityRecord>,
) -> Result<(&'a ItemParams, f64), IrtError> {
    let params = items
        .get(&r.item_id)
        .ok_or_else(|| IrtError::UnknownItem(r.item_id.clone()))?;
    let theta = abilities
        .get(&r.student_id)
        .ok_or_else(|| IrtError::UnknownStudent(r.student_id.clone()))?
        .theta;
    if !theta.is_finite() {
        return Err(IrtError::NonFinite(format!("theta of `{}`", r.student_id)));
    }
    if r.score >= params.num_categories() {
        return Err(IrtError::ScoreOutOfRange {
            item: r.item_id.clone(),
            score: r.score,
            categories: params.num_categories(),
        });
    }
    Ok((params, theta))
}

/// Total log-likelihood `sum log P(y|theta)` of the responses.
pub fn log_likelihood(
    responses: &[ScoredResponse],
    items: &BTreeMap<String, ItemParams>,
    abilities: &BTreeMap<String, AbilityRecord>,
) -> Result<f64, IrtError> {
    let mut scratch = Vec::new();
    let mut total = 0.0;
    for r in responses {
        let (params, theta) = lookup(r, items, abilities)?;
        scratch.resize(params.num_categories(), 0.0);
        log_probs_into(
            theta,
            params.discrimination(),
            params.difficulty(),
            params.steps(),
            &mut scratch,
        );
        total += scratch[r.score];
    }
    Ok(total)
}

/// Analytic gradient of [`log_likelihood`] with respect to `a`, `b`, the free
/// steps and every ability that appears in `responses`.
pub fn log_likelihood_gradient(
    responses: &[ScoredResponse],
    items: &BTreeMap<String, ItemParams>,
    abilities: &BTreeMap<String, AbilityRecord>,
) -> Result<LikelihoodGradient, IrtError> {
    let mut grad = LikelihoodGradient::default();
    let mut scratch = Vec::new();
    let mut d_free = Vec::new();
    for r in responses {
        let (params, theta) = lookup(r, items, abilities)?;
        let c = params.num_categories();
        scratch.resize(c, 0.0);
        d_free.resize(c - 2, 0.0);
        let terms = response_terms(
            theta,
            params.discrimination(),
            params.difficulty(),
            params.steps(),
            r.score,
            &mut scratch,
            &mut d_free,
        );
        let entry = grad
            .items
            .entry(r.item_id.clone())
            .or_insert_with(|| ItemGradient {
                free_steps: vec![0.0; c - 2],
                ..ItemGradient::default()
            });
        entry.discrimination += terms.discrimination;
        entry.difficulty += terms.difficulty;
        for (g, d) in entry.free_steps.iter_mut().zip(&d_free) {
            *g += d;
        }
        *grad.abilities.entry(r.student_id.clone()).or_insert(0.0) += terms.theta;
    }
    Ok(grad)
}
