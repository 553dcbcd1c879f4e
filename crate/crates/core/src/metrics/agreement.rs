use super::MetricError;

/// Quadratic weighted kappa between two ratings over categories `0..C`.
///
/// `1 - sum(W * O) / sum(W * E)` with `W_ij = (i - j)^2 / (C - 1)^2`, `O` the
/// observed confusion matrix and `E` the outer product of its marginals scaled
/// to the same total.
pub fn qwk(a: &[usize], b: &[usize], num_categories: usize) -> Result<f64, MetricError> {
    if a.len() != b.len() {
        return Err(MetricError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(MetricError::TooFewSamples { needed: 1, got: 0 });
    }
    if num_categories < 2 {
        return Err(MetricError::Undefined("need at least 2 categories".into()));
    }
    let c = num_categories;
    let mut observed = vec![0.0f64; c * c];
    let mut row = vec![0.0f64; c];
    let mut col = vec![0.0f64; c];
    for (&x, &y) in a.iter().zip(b) {
        for s in [x, y] {
            if s >= c {
                return Err(MetricError::ScoreOutOfRange {
                    score: s,
                    categories: c,
                });
            }
        }
        observed[x * c + y] += 1.0;
        row[x] += 1.0;
        col[y] += 1.0;
    }
    let total = a.len() as f64;
    let denom_w = ((c - 1) * (c - 1)) as f64;
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..c {
        for j in 0..c {
            let w = ((i as f64) - (j as f64)).powi(2) / denom_w;
            num += w * observed[i * c + j];
            den += w * row[i] * col[j] / total;
        }
    }
    if den == 0.0 {
        return Err(MetricError::Undefined("expected disagreement is zero".into()));
    }
    Ok(1.0 - num / den)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn perfect_agreement() {
        let a = [0, 1, 2, 2, 1, 0];
        assert_abs_diff_eq!(qwk(&a, &a, 3).unwrap(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn maximal_disagreement_is_negative() {
        // O puts all mass on the corners; E spreads it: 1 - 2 / 1 = -1
        assert_abs_diff_eq!(qwk(&[0, 2], &[2, 0], 3).unwrap(), -1.0, epsilon = 1e-15);
    }

    #[test]
    fn hand_confusion_matrix() {
        // confusion (rows a, cols b): [[2,1,1],[1,2,1],[0,1,3]]
        // value cross-checked with scikit-learn's cohen_kappa_score(weights="quadratic")
        let a = [0, 0, 0, 0, 1, 1, 1, 2, 2, 2, 2, 1];
        let b = [0, 0, 1, 2, 1, 1, 0, 2, 2, 1, 2, 2];
        assert_abs_diff_eq!(qwk(&a, &b, 3).unwrap(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn category_permutation_changes_value() {
        let a = [0, 0, 0, 0, 1, 1, 1, 2, 2, 2, 2, 1];
        let b = [0, 0, 1, 2, 1, 1, 0, 2, 2, 1, 2, 2];
        let swap = |s: &usize| [1usize, 0, 2][*s];
        let pa: Vec<usize> = a.iter().map(swap).collect();
        let pb: Vec<usize> = b.iter().map(swap).collect();
        let base = qwk(&a, &b, 3).unwrap();
        assert!((qwk(&pa, &pb, 3).unwrap() - base).abs() > 1e-3);
    }

    #[test]
    fn errors() {
        assert!(matches!(qwk(&[1, 1], &[1, 1], 3), Err(MetricError::Undefined(_))));
        assert!(matches!(qwk(&[0, 3], &[0, 1], 3), Err(MetricError::ScoreOutOfRange { .. })));
        assert!(matches!(qwk(&[0], &[0, 1], 3), Err(MetricError::LengthMismatch(1, 2))));
        assert!(matches!(qwk(&[], &[], 3), Err(MetricError::TooFewSamples { .. })));
    }
}
