use serde::{Deserialize, Serialize};

use super::IrtError;

/// Sum-to-zero tolerance on the step vector.
const STEP_SUM_TOL: f64 = 1e-9;

/// GPCM parameters of one item.
///
/// The step vector always satisfies `steps[0] == 0` and `sum(steps) == 0`.
/// Internally only the `C - 2` interior steps are free; the last step is
/// determined by the others.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemParams {
    item_id: String,
    discrimination: f64,
    difficulty: f64,
    steps: Vec<f64>,
}

impl ItemParams {
    /// Builds parameters from a full step vector, checking every invariant.
    pub fn new(
        item_id: impl Into<String>,
        discrimination: f64,
        difficulty: f64,
        steps: Vec<f64>,
    ) -> Result<Self, IrtError> {
        let item_id = item_id.into();
        let invalid = |reason: String| IrtError::InvalidParams {
            item: item_id.clone(),
            reason,
        };
        if steps.len() < 2 {
            return Err(invalid(format!("need at least 2 categories, got {}", steps.len())));
        }
        if !discrimination.is_finite() || !difficulty.is_finite() || steps.iter().any(|d| !d.is_finite()) {
            return Err(IrtError::NonFinite(format!("parameters of item `{item_id}`")));
        }
        if discrimination <= 0.0 {
            return Err(invalid(format!("discrimination must be positive, got {discrimination}")));
        }
        if steps[0] != 0.0 {
            return Err(invalid(format!("first step must be 0, got {}", steps[0])));
        }
        let sum: f64 = steps.iter().sum();
        if sum.abs() > STEP_SUM_TOL {
            return Err(invalid(format!("steps must sum to 0, got {sum:e}")));
        }
        Ok(Self {
            item_id,
            discrimination,
            difficulty,
            steps,
        })
    }

    /// Builds parameters from the `C - 2` free interior steps.
    ///
    /// The full vector is `[0, free.., -sum(free)]`, which satisfies both step
    /// constraints by construction.
    pub fn from_free_steps(
        item_id: impl Into<String>,
        discrimination: f64,
        difficulty: f64,
        free: &[f64],
    ) -> Result<Self, IrtError> {
        Self::new(item_id, discrimination, difficulty, steps_from_free(free))
    }

    /// Starting point used for calibration: `a = 1`, `b = 0`, zero steps.
    pub fn neutral(item_id: impl Into<String>, num_categories: usize) -> Result<Self, IrtError> {
        Self::new(item_id, 1.0, 0.0, vec![0.0; num_categories])
    }

    pub fn item_id(&self) -> &str {
        &self.item_id
    }

    pub fn discrimination(&self) -> f64 {
        self.discrimination
    }

    pub fn difficulty(&self) -> f64 {
        self.difficulty
    }

    pub fn steps(&self) -> &[f64] {
        &self.steps
    }

    /// The interior steps `d_1..d_{C-2}`.
    pub fn free_steps(&self) -> &[f64] {
        &self.steps[1..self.steps.len() - 1]
    }

    pub fn num_categories(&self) -> usize {
        self.steps.len()
    }

    /// Returns a copy with a new difficulty, keeping every other parameter.
    pub fn with_difficulty(&self, difficulty: f64) -> Result<Self, IrtError> {
        Self::new(self.item_id.clone(), self.discrimination, difficulty, self.steps.clone())
    }
}

pub(crate) fn steps_from_free(free: &[f64]) -> Vec<f64> {
    let mut steps = Vec::with_capacity(free.len() + 2);
    steps.push(0.0);
    steps.extend_from_slice(free);
    steps.push(-free.iter().sum::<f64>());
    steps
}

/// Ability of one student on the logit scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbilityRecord {
    pub student_id: String,
    pub theta: f64,
}

/// One scored response: the atomic dataset row.
///
/// `prior_ability` carries an externally supplied ability when one exists
/// (a prior estimate for real students, the prompted ability for simulated
/// ones). It is not used by calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredResponse {
    pub item_id: String,
    pub student_id: String,
    #[serde(default)]
    pub text: String,
    pub score: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior_ability: Option<f64>,
}

impl ScoredResponse {
    pub fn new(
        item_id: impl Into<String>,
        student_id: impl Into<String>,
        text: impl Into<String>,
        score: usize,
    ) -> Self {
        Self {
            item_id: item_id.into(),
            student_id: student_id.into(),
            text: text.into(),
            score,
            prior_ability: None,
        }
    }
}

/// Writes `log P(y|theta)` for every category into `out` and returns the
/// log normalizer. Inputs are assumed finite.
pub(crate) fn log_probs_into(theta: f64, a: f64, b: f64, steps: &[f64], out: &mut [f64]) {
    debug_assert_eq!(steps.len(), out.len());
    let shift = theta - b;
    let mut acc = 0.0;
    let mut max = f64::NEG_INFINITY;
    for (o, d) in out.iter_mut().zip(steps) {
        acc += a * (shift + d);
        *o = acc;
        max = max.max(acc);
    }
    let sum: f64 = out.iter().map(|z| (z - max).exp()).sum();
    let log_norm = max + sum.ln();
    for o in out.iter_mut() {
        *o -= log_norm;
    }
}

/// Score-category probabilities `P(y|theta)` for `y = 0..C-1`.
pub fn score_probabilities(theta: f64, params: &ItemParams) -> Result<Vec<f64>, IrtError> {
    if !theta.is_finite() {
        return Err(IrtError::NonFinite("theta".into()));
    }
    let mut out = vec![0.0; params.num_categories()];
    log_probs_into(
        theta,
        params.discrimination,
        params.difficulty,
        &params.steps,
        &mut out,
    );
    for o in out.iter_mut() {
        *o = o.exp();
    }
    Ok(out)
}

/// The most likely score; ties go to the lower category.
pub fn predict_score(theta: f64, params: &ItemParams) -> Result<usize, IrtError> {
    let probs = score_probabilities(theta, params)?;
    Ok(argmax_low(&probs))
}

pub(crate) fn argmax_low(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn sigmoid(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    fn derived_item() -> ItemParams {
        ItemParams::new("q", 1.0, 0.0, vec![0.0, 0.5, -0.5]).unwrap()
    }

    #[test]
    fn uniform_when_theta_equals_difficulty_and_steps_vanish() {
        let p = ItemParams::new("q", 2.3, 0.7, vec![0.0; 3]).unwrap();
        let probs = score_probabilities(0.7, &p).unwrap();
        for v in probs {
            assert_abs_diff_eq!(v, 1.0 / 3.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn rasch_at_difficulty_is_half() {
        let p = ItemParams::new("q", 1.0, 0.0, vec![0.0, 0.0]).unwrap();
        assert_eq!(score_probabilities(0.0, &p).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn matches_high_precision_evaluation() {
        // softmax of cumulative exponents (1.0, 2.5, 3.0), evaluated at 40 digits
        let probs = score_probabilities(1.0, &derived_item()).unwrap();
        assert_abs_diff_eq!(probs[0], 0.077_695_579_148_570_588, epsilon = 1e-15);
        assert_abs_diff_eq!(probs[1], 0.348_207_427_883_734_852, epsilon = 1e-15);
        assert_abs_diff_eq!(probs[2], 0.574_096_992_967_694_560, epsilon = 1e-15);
    }

    #[test]
    fn predicted_scores() {
        let uniform = ItemParams::new("q", 1.0, 0.0, vec![0.0; 3]).unwrap();
        assert_eq!(predict_score(0.0, &uniform).unwrap(), 0);
        assert_eq!(predict_score(1.0, &derived_item()).unwrap(), 2);
        let rasch = ItemParams::new("q", 1.0, -1.0, vec![0.0, 0.0]).unwrap();
        assert_eq!(predict_score(4.0, &rasch).unwrap(), 1);
    }

    #[test]
    fn rejects_invalid_parameters() {
        assert!(ItemParams::new("q", 1.0, 0.0, vec![0.1, -0.1]).is_err());
        assert!(ItemParams::new("q", 1.0, 0.0, vec![0.0, 0.1]).is_err());
        assert!(ItemParams::new("q", 0.0, 0.0, vec![0.0, 0.0]).is_err());
        assert!(ItemParams::new("q", -1.0, 0.0, vec![0.0, 0.0]).is_err());
        assert!(ItemParams::new("q", 1.0, f64::NAN, vec![0.0, 0.0]).is_err());
        assert!(ItemParams::new("q", 1.0, 0.0, vec![0.0]).is_err());
        assert!(matches!(
            score_probabilities(f64::INFINITY, &derived_item()),
            Err(IrtError::NonFinite(_))
        ));
    }

    #[test]
    fn free_step_construction_satisfies_constraints() {
        let p = ItemParams::from_free_steps("q", 1.0, 0.0, &[0.3, -1.2, 0.4]).unwrap();
        assert_eq!(p.steps()[0], 0.0);
        assert_eq!(p.num_categories(), 5);
        assert_abs_diff_eq!(p.steps().iter().sum::<f64>(), 0.0, epsilon = 1e-15);
        assert_eq!(p.free_steps(), &[0.3, -1.2, 0.4]);
    }

    fn arb_params() -> impl Strategy<Value = ItemParams> {
        (0.2f64..3.0, -3.0f64..3.0, prop::collection::vec(-2.0f64..2.0, 0..4))
            .prop_map(|(a, b, free)| ItemParams::from_free_steps("q", a, b, &free).unwrap())
    }

    proptest! {
        #[test]
        fn probabilities_normalized(theta in -6.0f64..6.0, p in arb_params()) {
            let probs = score_probabilities(theta, &p).unwrap();
            let sum: f64 = probs.iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-12);
            prop_assert!(probs.iter().all(|v| *v > 0.0 && *v < 1.0));
        }

        #[test]
        fn shift_invariant(theta in -4.0f64..4.0, delta in -3.0f64..3.0, p in arb_params()) {
            let shifted = p.with_difficulty(p.difficulty() + delta).unwrap();
            let base = score_probabilities(theta, &p).unwrap();
            let moved = score_probabilities(theta + delta, &shifted).unwrap();
            for (x, y) in base.iter().zip(&moved) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }

        #[test]
        fn expected_score_monotone(p in arb_params()) {
            let mut prev = f64::NEG_INFINITY;
            for k in 0..=120 {
                let theta = -6.0 + 0.1 * k as f64;
                let probs = score_probabilities(theta, &p).unwrap();
                let e: f64 = probs.iter().enumerate().map(|(y, q)| y as f64 * q).sum();
                prop_assert!(e >= prev - 1e-12);
                prev = e;
            }
        }

        #[test]
        fn rasch_reduction(theta in -8.0f64..8.0, b in -4.0f64..4.0) {
            let p = ItemParams::new("q", 1.0, b, vec![0.0, 0.0]).unwrap();
            let probs = score_probabilities(theta, &p).unwrap();
            prop_assert!((probs[1] - sigmoid(theta - b)).abs() <= 1e-12);
        }
    }
}
