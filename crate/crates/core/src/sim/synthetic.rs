//! Offline stand-ins for the generator and scorer.
//!
//! The synthetic generator samples a score from a ground-truth GPCM and
//! emits it in a parseable envelope
//! `SYNTH|item=<id>|y=<score>|f=<v1,v2,...>`, where `f` is a deterministic
//! pseudo-embedding of (item, ability, score). The synthetic scorer reads the
//! score back, and [`NoisyScorer`] perturbs it to emulate an imperfect
//! scoring model.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::{BackendError, Decoding, GeneratorBackend, Item, ScorerBackend};
use crate::irt::{score_probabilities, ItemParams};
use crate::metrics;
use crate::seed;

const PREFIX: &str = "SYNTH|item=";

#[derive(Debug, Clone, Error, PartialEq)]
pub enum EnvelopeError {
    #[error("not a synthetic envelope")]
    NotEnvelope,
    #[error("malformed envelope field `{0}`")]
    BadField(&'static str),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub item_id: String,
    pub score: usize,
    pub features: Vec<f64>,
}

fn draw_category<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    probs.len() - 1
}

/// Deterministic feature vector for (item, ability, score): a direction
/// shared by all responses of one item and score, plus a perturbation keyed
/// by the exact ability.
fn pseudo_embedding(item_id: &str, theta: f64, score: usize, dim: usize) -> Vec<f64> {
    let mut base = seed::rng_for(0, &format!("embed-base:{item_id}:{score}"));
    let mut jitter = seed::rng_for(0, &format!("embed:{item_id}:{:016x}:{score}", theta.to_bits()));
    (0..dim)
        .map(|_| base.random_range(-1.0..1.0) + 0.5 * jitter.random_range(-1.0..1.0))
        .collect()
}

fn render(item_id: &str, score: usize, features: &[f64]) -> String {
    let f: Vec<String> = features.iter().map(|v| format!("{v:.6}")).collect();
    format!("{PREFIX}{item_id}|y={score}|f={}", f.join(","))
}

/// Samples `y ~ GPCM(theta, truth)` and renders the envelope.
pub fn synthetic_oracle_generate<R: Rng + ?Sized>(
    item_id: &str,
    theta: f64,
    truth: &ItemParams,
    rng: &mut R,
    embedding_dim: usize,
) -> Result<String, BackendError> {
    let probs = score_probabilities(theta, truth).map_err(|e| BackendError::Rejected(e.to_string()))?;
    let y = draw_category(&probs, rng);
    Ok(render(item_id, y, &pseudo_embedding(item_id, theta, y, embedding_dim)))
}

pub fn parse_envelope(text: &str) -> Result<Envelope, EnvelopeError> {
    let rest = text.trim().strip_prefix(PREFIX).ok_or(EnvelopeError::NotEnvelope)?;
    let f_at = rest.rfind("|f=").ok_or(EnvelopeError::BadField("f"))?;
    let (head, f_part) = (&rest[..f_at], &rest[f_at + 3..]);
    let y_at = head.rfind("|y=").ok_or(EnvelopeError::BadField("y"))?;
    let item_id = head[..y_at].to_string();
    let score = head[y_at + 3..].parse().map_err(|_| EnvelopeError::BadField("y"))?;
    let features = if f_part.is_empty() {
        Vec::new()
    } else {
        f_part
            .split(',')
            .map(|v| v.parse::<f64>().map_err(|_| EnvelopeError::BadField("f")))
            .collect::<Result<_, _>>()?
    };
    Ok(Envelope {
        item_id,
        score,
        features,
    })
}

/// Reads the score back out of an envelope.
pub fn synthetic_oracle_score(text: &str) -> Result<usize, EnvelopeError> {
    parse_envelope(text).map(|e| e.score)
}

fn apply_noise(base: usize, num_categories: usize, flip: bool, up: bool) -> usize {
    if !flip || num_categories < 2 {
        return base;
    }
    if base == 0 {
        1
    } else if base + 1 >= num_categories {
        num_categories - 2
    } else if up {
        base + 1
    } else {
        base - 1
    }
}

/// With probability `flip_prob` moves `base` one category; at either end of
/// the scale the move is inward, otherwise up or down with equal chance.
pub fn noisy_score<R: Rng + ?Sized>(base: usize, flip_prob: f64, num_categories: usize, rng: &mut R) -> usize {
    let flip = rng.random::<f64>() < flip_prob;
    let up = rng.random::<bool>();
    apply_noise(base, num_categories, flip, up)
}

/// Flip probability whose expected QWK against `true_scores` is
/// `target_qwk`, found by bisection with common random numbers.
pub fn tune_flip_prob(true_scores: &[usize], num_categories: usize, target_qwk: f64, rng_seed: u64) -> Option<f64> {
    let mut rng = seed::rng_for(rng_seed, "tune-flip");
    let draws: Vec<(f64, bool)> = true_scores.iter().map(|_| (rng.random(), rng.random())).collect();
    let qwk_at = |p: f64| -> Option<f64> {
        let noisy: Vec<usize> = true_scores
            .iter()
            .zip(&draws)
            .map(|(&y, &(u, up))| apply_noise(y, num_categories, u < p, up))
            .collect();
        metrics::qwk(true_scores, &noisy, num_categories).ok()
    };
    let (mut lo, mut hi) = (0.0, 0.999);
    if qwk_at(hi)? > target_qwk {
        return Some(hi);
    }
    for _ in 0..50 {
        let mid = 0.5 * (lo + hi);
        if qwk_at(mid)? > target_qwk {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Generator backed by ground-truth GPCM parameters.
#[derive(Debug, Clone)]
pub struct SyntheticGenerator {
    truth: BTreeMap<String, ItemParams>,
    embedding_dim: usize,
    ignore_theta: bool,
}

impl SyntheticGenerator {
    pub fn new(truth: BTreeMap<String, ItemParams>) -> Self {
        Self {
            truth,
            embedding_dim: 16,
            ignore_theta: false,
        }
    }

    pub fn with_embedding_dim(mut self, dim: usize) -> Self {
        self.embedding_dim = dim;
        self
    }

    /// Samples every score at ability 0, whatever ability was prompted.
    pub fn ignoring_theta(mut self) -> Self {
        self.ignore_theta = true;
        self
    }
}

impl GeneratorBackend for SyntheticGenerator {
    fn generate(&self, item: &Item, theta: f64, _: &Decoding, seed: u64) -> Result<String, BackendError> {
        let truth = self
            .truth
            .get(&item.item_id)
            .ok_or_else(|| BackendError::Rejected(format!("no ground truth for item `{}`", item.item_id)))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sampling_theta = if self.ignore_theta { 0.0 } else { theta };
        let probs = score_probabilities(sampling_theta, truth).map_err(|e| BackendError::Rejected(e.to_string()))?;
        let y = draw_category(&probs, &mut rng);
        Ok(render(
            &item.item_id,
            y,
            &pseudo_embedding(&item.item_id, theta, y, self.embedding_dim),
        ))
    }
}

/// Exact scorer for synthetic envelopes.
#[derive(Debug, Clone, Copy, Default)]
pub struct SyntheticScorer;

impl ScorerBackend for SyntheticScorer {
    fn score(&self, item: &Item, text: &str, _: u64) -> Result<usize, BackendError> {
        let env = parse_envelope(text).map_err(|e| BackendError::Protocol(e.to_string()))?;
        if env.item_id != item.item_id {
            return Err(BackendError::Protocol(format!(
                "envelope for item `{}` scored as `{}`",
                env.item_id, item.item_id
            )));
        }
        Ok(env.score)
    }
}

/// Wraps a scorer and perturbs its output with [`noisy_score`].
#[derive(Debug, Clone)]
pub struct NoisyScorer<S> {
    inner: S,
    flip_prob: f64,
}

impl<S: ScorerBackend> NoisyScorer<S> {
    pub fn new(inner: S, flip_prob: f64) -> Result<Self, BackendError> {
        if !(0.0..1.0).contains(&flip_prob) {
            return Err(BackendError::Rejected(format!("flip probability {flip_prob} outside [0, 1)")));
        }
        Ok(Self { inner, flip_prob })
    }
}

impl<S: ScorerBackend> ScorerBackend for NoisyScorer<S> {
    fn score(&self, item: &Item, text: &str, seed: u64) -> Result<usize, BackendError> {
        let base = self.inner.score(item, text, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(noisy_score(base, self.flip_prob, item.num_categories, &mut rng))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn truth() -> ItemParams {
        ItemParams::new("q", 1.0, 0.0, vec![0.0, 0.5, -0.5]).unwrap()
    }

    #[test]
    fn envelope_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for k in 0..200 {
            let theta = -3.0 + 0.03 * k as f64;
            let text = synthetic_oracle_generate("q|odd", theta, &truth(), &mut rng, 4).unwrap();
            let env = parse_envelope(&text).unwrap();
            assert_eq!(env.item_id, "q|odd");
            assert_eq!(env.features.len(), 4);
            assert_eq!(synthetic_oracle_score(&text).unwrap(), env.score);
        }
    }

    #[test]
    fn pseudo_embedding_is_deterministic() {
        assert_eq!(pseudo_embedding("q", 0.3, 1, 8), pseudo_embedding("q", 0.3, 1, 8));
        assert_ne!(pseudo_embedding("q", 0.3, 1, 8), pseudo_embedding("q", 0.3, 2, 8));
    }

    #[test]
    fn malformed_envelopes() {
        assert_eq!(synthetic_oracle_score("hello"), Err(EnvelopeError::NotEnvelope));
        assert_eq!(synthetic_oracle_score("SYNTH|item=q|y=x|f="), Err(EnvelopeError::BadField("y")));
        assert_eq!(synthetic_oracle_score("SYNTH|item=q|y=1"), Err(EnvelopeError::BadField("f")));
        assert_eq!(synthetic_oracle_score("SYNTH|item=q|y=1|f=a"), Err(EnvelopeError::BadField("f")));
        assert_eq!(synthetic_oracle_score("SYNTH|item=q|y=2|f="), Ok(2));
    }

    #[test]
    fn saturated_ability_gives_top_score() {
        let sharp = ItemParams::new("q", 2.0, 0.0, vec![0.0, 0.5, -0.5]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let text = synthetic_oracle_generate("q", 12.0, &sharp, &mut rng, 2).unwrap();
            assert_eq!(synthetic_oracle_score(&text).unwrap(), 2);
        }
    }

    #[test]
    fn empirical_distribution_matches_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let probs = score_probabilities(1.0, &truth()).unwrap();
        let mut counts = [0usize; 3];
        for _ in 0..10_000 {
            let text = synthetic_oracle_generate("q", 1.0, &truth(), &mut rng, 1).unwrap();
            counts[synthetic_oracle_score(&text).unwrap()] += 1;
        }
        for (c, p) in counts.iter().zip(&probs) {
            // per-category sd at n = 10^4 is at most 0.005
            assert!((*c as f64 / 10_000.0 - p).abs() <= 0.02);
        }
    }

    #[test]
    fn noise_boundaries() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for base in 0..3 {
            assert_eq!(noisy_score(base, 0.0, 3, &mut rng), base);
        }
        for _ in 0..100 {
            assert_eq!(noisy_score(0, 1.0, 3, &mut rng), 1);
            assert_eq!(noisy_score(2, 1.0, 3, &mut rng), 1);
            let mid = noisy_score(1, 1.0, 3, &mut rng);
            assert!(mid == 0 || mid == 2);
        }
    }

    #[test]
    fn noisy_scorer_rejects_certain_flips() {
        assert!(NoisyScorer::new(SyntheticScorer, 1.0).is_err());
        assert!(NoisyScorer::new(SyntheticScorer, -0.1).is_err());
    }
}
