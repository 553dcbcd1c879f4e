use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::likelihood::response_terms;
use super::model::{argmax_low, log_probs_into, AbilityRecord, ItemParams, ScoredResponse};
use super::IrtError;
use crate::metrics;
use crate::seed;

/// Calibration hyperparameters. Defaults: 50 epochs, learning rate 1e-3,
/// no weight decay, batch size 256, 20% of responses held out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub holdout_fraction: f64,
    pub rng_seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            learning_rate: 1e-3,
            weight_decay: 0.0,
            batch_size: 256,
            holdout_fraction: 0.2,
            rng_seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<(), IrtError> {
        let bad = |m: &str| Err(IrtError::InvalidConfig(m.to_string()));
        if self.epochs < 1 {
            return bad("epochs must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be non-negative");
        }
        if self.batch_size < 1 {
            return bad("batch_size must be at least 1");
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return bad("holdout_fraction must lie in [0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub item_params: BTreeMap<String, ItemParams>,
    pub abilities: BTreeMap<String, AbilityRecord>,
    /// QWK between most-likely and observed scores on the held-out responses;
    /// `None` when nothing was held out or the statistic is undefined.
    pub holdout_qwk: Option<f64>,
    /// Mean cross-entropy over the training split at the final parameters.
    pub final_loss: f64,
    /// Mean running cross-entropy of each epoch.
    pub loss_curve: Vec<f64>,
    pub config: FitConfig,
}

impl FitResult {
    pub fn difficulty(&self, item_id: &str) -> Option<f64> {
        self.item_params.get(item_id).map(ItemParams::difficulty)
    }

    pub fn theta(&self, student_id: &str) -> Option<f64> {
        self.abilities.get(student_id).map(|a| a.theta)
    }
}

/// Location of one item's parameters inside the flat parameter vector:
/// `[log a, b, e_1 .. e_{C-2}]`.
#[derive(Debug, Clone, Copy)]
struct ItemSlot {
    offset: usize,
    categories: usize,
}

struct Layout {
    items: Vec<(String, ItemSlot)>,
    students: Vec<String>,
    student_offset: usize,
    len: usize,
}

/// Response row resolved to parameter indices.
#[derive(Clone, Copy)]
struct Row {
    item: usize,
    student: usize,
    score: usize,
}

struct AdamW {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
    weight_decay: f64,
}

impl AdamW {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(len: usize, lr: f64, weight_decay: f64) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            lr,
            weight_decay,
        }
    }

    /// One dense update; parameters without gradient still move with their
    /// decaying moments.
    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - Self::BETA1.powi(self.t);
        let bc2 = 1.0 - Self::BETA2.powi(self.t);
        for i in 0..params.len() {
            if self.weight_decay != 0.0 {
                params[i] *= 1.0 - self.lr * self.weight_decay;
            }
            let g = grad[i];
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * g;
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + Self::EPS);
        }
    }
}

fn check_responses(
    responses: &[ScoredResponse],
    num_categories: &BTreeMap<String, usize>,
) -> Result<(), IrtError> {
    let mut observed: BTreeMap<&str, BTreeSet<usize>> = BTreeMap::new();
    for r in responses {
        let c = *num_categories
            .get(&r.item_id)
            .ok_or_else(|| IrtError::UnknownItem(r.item_id.clone()))?;
        if c < 2 {
            return Err(IrtError::InvalidParams {
                item: r.item_id.clone(),
                reason: format!("need at least 2 categories, got {c}"),
            });
        }
        if r.score >= c {
            return Err(IrtError::ScoreOutOfRange {
                item: r.item_id.clone(),
                score: r.score,
                categories: c,
            });
        }
        observed.entry(&r.item_id).or_default().insert(r.score);
    }
    let degenerate: Vec<String> = observed
        .into_iter()
        .filter(|(_, scores)| scores.len() < 2)
        .map(|(id, _)| id.to_string())
        .collect();
    if !degenerate.is_empty() {
        return Err(IrtError::DegenerateItems(degenerate));
    }
    Ok(())
}

fn build_layout(responses: &[ScoredResponse], num_categories: &BTreeMap<String, usize>) -> Layout {
    let item_ids: BTreeSet<&str> = responses.iter().map(|r| r.item_id.as_str()).collect();
    let student_ids: BTreeSet<&str> = responses.iter().map(|r| r.student_id.as_str()).collect();
    let mut offset = 0;
    let items = item_ids
        .into_iter()
        .map(|id| {
            let categories = num_categories[id];
            let slot = ItemSlot { offset, categories };
            offset += categories;
            (id.to_string(), slot)
        })
        .collect();
    let student_offset = offset;
    let students: Vec<String> = student_ids.into_iter().map(str::to_string).collect();
    let len = student_offset + students.len();
    Layout {
        items,
        students,
        student_offset,
        len,
    }
}

fn initial_vector(layout: &Layout, warm: Option<&FitResult>) -> Result<Vec<f64>, IrtError> {
    let mut x = vec![0.0; layout.len];
    let Some(warm) = warm else {
        return Ok(x);
    };
    for (id, slot) in &layout.items {
        if let Some(p) = warm.item_params.get(id) {
            if p.num_categories() != slot.categories {
                return Err(IrtError::InvalidParams {
                    item: id.clone(),
                    reason: format!(
                        "warm start has {} categories, data declares {}",
                        p.num_categories(),
                        slot.categories
                    ),
                });
            }
            x[slot.offset] = p.discrimination().ln();
            x[slot.offset + 1] = p.difficulty();
            x[slot.offset + 2..slot.offset + slot.categories].copy_from_slice(p.free_steps());
        }
    }
    for (j, id) in layout.students.iter().enumerate() {
        if let Some(theta) = warm.theta(id) {
            x[layout.student_offset + j] = theta;
        }
    }
    Ok(x)
}

/// Parameters of one item unpacked from the flat vector into `steps`.
fn unpack_item(x: &[f64], slot: ItemSlot, steps: &mut Vec<f64>) -> (f64, f64) {
    let free = &x[slot.offset + 2..slot.offset + slot.categories];
    steps.clear();
    steps.push(0.0);
    steps.extend_from_slice(free);
    steps.push(-free.iter().sum::<f64>());
    (x[slot.offset].exp(), x[slot.offset + 1])
}

struct Workspace {
    steps: Vec<f64>,
    scratch: Vec<f64>,
    d_free: Vec<f64>,
}

impl Workspace {
    fn new() -> Self {
        Self {
            steps: Vec::new(),
            scratch: Vec::new(),
            d_free: Vec::new(),
        }
    }

    fn log_prob(&mut self, x: &[f64], layout: &Layout, row: Row) -> f64 {
        let slot = layout.items[row.item].1;
        let (a, b) = unpack_item(x, slot, &mut self.steps);
        self.scratch.resize(slot.categories, 0.0);
        let theta = x[layout.student_offset + row.student];
        log_probs_into(theta, a, b, &self.steps, &mut self.scratch);
        self.scratch[row.score]
    }

    /// Adds `scale * d(log P)/dx` into `grad` and returns `log P`.
    fn accumulate(&mut self, x: &[f64], layout: &Layout, row: Row, scale: f64, grad: &mut [f64]) -> f64 {
        let slot = layout.items[row.item].1;
        let (a, b) = unpack_item(x, slot, &mut self.steps);
        let theta_idx = layout.student_offset + row.student;
        self.scratch.resize(slot.categories, 0.0);
        self.d_free.resize(slot.categories - 2, 0.0);
        let terms = response_terms(
            x[theta_idx],
            a,
            b,
            &self.steps,
            row.score,
            &mut self.scratch,
            &mut self.d_free,
        );
        // chain rule through a = exp(log a)
        grad[slot.offset] += scale * terms.discrimination * a;
        grad[slot.offset + 1] += scale * terms.difficulty;
        for (k, d) in self.d_free.iter().enumerate() {
            grad[slot.offset + 2 + k] += scale * d;
        }
        grad[theta_idx] += scale * terms.theta;
        terms.log_prob
    }
}

/// Calibrates GPCM item parameters and student abilities by maximum
/// likelihood.
///
/// Minimizes the mean cross-entropy of the observed scores with mini-batch
/// AdamW. Discrimination is optimized on the log scale and the steps through
/// their `C - 2` free entries, so every returned [`ItemParams`] satisfies its
/// constraints. A seeded random `holdout_fraction` of the responses is kept
/// out of training and used only for the reported QWK. Items and students
/// missing from `warm_start` start at `a = 1`, `b = 0`, zero steps and
/// `theta = 0`.
pub fn fit(
    responses: &[ScoredResponse],
    num_categories: &BTreeMap<String, usize>,
    config: &FitConfig,
    warm_start: Option<&FitResult>,
) -> Result<FitResult, IrtError> {
    config.validate()?;
    if responses.is_empty() {
        return Err(IrtError::NoResponses);
    }
    check_responses(responses, num_categories)?;

    let layout = build_layout(responses, num_categories);
    let item_index: BTreeMap<&str, usize> = layout
        .items
        .iter()
        .enumerate()
        .map(|(i, (id, _))| (id.as_str(), i))
        .collect();
    let student_index: BTreeMap<&str, usize> = layout
        .students
        .iter()
        .enumerate()
        .map(|(j, id)| (id.as_str(), j))
        .collect();
    let rows: Vec<Row> = responses
        .iter()
        .map(|r| Row {
            item: item_index[r.item_id.as_str()],
            student: student_index[r.student_id.as_str()],
            score: r.score,
        })
        .collect();

    let mut x = initial_vector(&layout, warm_start)?;

    let mut split_rng = seed::rng_for(config.rng_seed, "holdout");
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.shuffle(&mut split_rng);
    let n_holdout = ((rows.len() as f64 * config.holdout_fraction).round() as usize).min(rows.len() - 1);
    let (holdout, train) = order.split_at(n_holdout);
    let mut train = train.to_vec();
    train.sort_unstable();

    let mut batch_rng = seed::rng_for(config.rng_seed, "batches");
    let mut opt = AdamW::new(layout.len, config.learning_rate, config.weight_decay);
    let mut grad = vec![0.0; layout.len];
    let mut ws = Workspace::new();
    let mut loss_curve = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        train.shuffle(&mut batch_rng);
        let mut epoch_loss = 0.0;
        for batch in train.chunks(config.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let scale = -1.0 / batch.len() as f64;
            for &i in batch {
                epoch_loss -= ws.accumulate(&x, &layout, rows[i], scale, &mut grad);
            }
            opt.step(&mut x, &grad);
        }
        let mean = epoch_loss / train.len() as f64;
        log::debug!("epoch {}: mean cross-entropy {mean:.6}", epoch + 1);
        loss_curve.push(mean);
    }

    let final_loss = -train.iter().map(|&i| ws.log_prob(&x, &layout, rows[i])).sum::<f64>() / train.len() as f64;

    let mut item_params = BTreeMap::new();
    for (id, slot) in &layout.items {
        let (a, b) = unpack_item(&x, *slot, &mut ws.steps);
        let params = ItemParams::new(id.clone(), a, b, ws.steps.clone())?;
        item_params.insert(id.clone(), params);
    }
    let abilities: BTreeMap<String, AbilityRecord> = layout
        .students
        .iter()
        .enumerate()
        .map(|(j, id)| {
            let theta = x[layout.student_offset + j];
            (
                id.clone(),
                AbilityRecord {
                    student_id: id.clone(),
                    theta,
                },
            )
        })
        .collect();
    if abilities.values().any(|a| !a.theta.is_finite()) {
        return Err(IrtError::NonFinite("fitted abilities".into()));
    }

    let holdout_qwk = if holdout.is_empty() {
        None
    } else {
        let max_c = layout.items.iter().map(|(_, s)| s.categories).max().unwrap_or(2);
        let mut observed = Vec::with_capacity(holdout.len());
        let mut predicted = Vec::with_capacity(holdout.len());
        for &i in holdout {
            let row = rows[i];
            let slot = layout.items[row.item].1;
            let (a, b) = unpack_item(&x, slot, &mut ws.steps);
            ws.scratch.resize(slot.categories, 0.0);
            log_probs_into(x[layout.student_offset + row.student], a, b, &ws.steps, &mut ws.scratch);
            observed.push(row.score);
            predicted.push(argmax_low(&ws.scratch));
        }
        metrics::qwk(&observed, &predicted, max_c).ok()
    };

    Ok(FitResult {
        item_params,
        abilities,
        holdout_qwk,
        final_loss,
        loss_curve,
        config: config.clone(),
    })
}
