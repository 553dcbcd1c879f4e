use super::MetricError;

fn check_pair(x: &[f64], y: &[f64], min: usize) -> Result<(), MetricError> {
    if x.len() != y.len() {
        return Err(MetricError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < min {
        return Err(MetricError::TooFewSamples {
            needed: min,
            got: x.len(),
        });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(MetricError::NonFinite);
    }
    Ok(())
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Pearson correlation coefficient.
pub fn pcc(x: &[f64], y: &[f64]) -> Result<f64, MetricError> {
    check_pair(x, y, 2)?;
    let (mx, my) = (mean(x), mean(y));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(MetricError::Undefined("zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&i, &j| x[i].total_cmp(&x[j]));
    let mut ranks = vec![0.0; x.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && x[order[end]] == x[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let rank = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

/// Spearman rank correlation: Pearson correlation of average ranks.
pub fn scc(x: &[f64], y: &[f64]) -> Result<f64, MetricError> {
    check_pair(x, y, 2)?;
    pcc(&average_ranks(x), &average_ranks(y))
}

/// Root mean squared error.
pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64, MetricError> {
    check_pair(pred, truth, 1)?;
    let sq: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum();
    Ok((sq / pred.len() as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn pearson_examples() {
        let x = [1.0, 2.0, 3.0];
        assert_abs_diff_eq!(pcc(&x, &x).unwrap(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(pcc(&x, &[-1.0, -2.0, -3.0]).unwrap(), -1.0, epsilon = 1e-15);
        // cov = 1.5, sd_x = 1, sd_y = sqrt(7/3): r = 1.5 / sqrt(7/3)
        assert_abs_diff_eq!(pcc(&x, &[1.0, 2.0, 4.0]).unwrap(), 0.981_980_506_061_965_6, epsilon = 1e-14);
    }

    #[test]
    fn pearson_errors() {
        assert!(matches!(pcc(&[1.0, 1.0], &[1.0, 2.0]), Err(MetricError::Undefined(_))));
        assert!(matches!(pcc(&[1.0], &[1.0]), Err(MetricError::TooFewSamples { .. })));
        assert!(matches!(pcc(&[1.0, 2.0], &[1.0]), Err(MetricError::LengthMismatch(2, 1))));
        assert!(matches!(pcc(&[1.0, f64::NAN], &[1.0, 2.0]), Err(MetricError::NonFinite)));
    }

    #[test]
    fn spearman_examples() {
        let x = [0.3, -1.0, 2.0, 5.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| v.exp()).collect();
        assert_abs_diff_eq!(scc(&x, &y).unwrap(), 1.0, epsilon = 1e-15);
        let rev: Vec<f64> = x.iter().map(|v| -v).collect();
        assert_abs_diff_eq!(scc(&x, &rev).unwrap(), -1.0, epsilon = 1e-15);
        // ranks (1, 2.5, 2.5, 4) on both sides
        assert_eq!(average_ranks(&[1.0, 2.0, 2.0, 3.0]), vec![1.0, 2.5, 2.5, 4.0]);
        assert_abs_diff_eq!(
            scc(&[1.0, 2.0, 2.0, 3.0], &[10.0, 20.0, 20.0, 40.0]).unwrap(),
            1.0,
            epsilon = 1e-15
        );
        assert!(matches!(scc(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0]), Err(MetricError::Undefined(_))));
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(rmse(&[1.5, -0.5], &[1.0, -1.0]).unwrap(), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 12.5f64.sqrt(), epsilon = 1e-15);
        assert!(matches!(rmse(&[], &[]), Err(MetricError::TooFewSamples { .. })));
        assert!(matches!(rmse(&[1.0], &[1.0, 2.0]), Err(MetricError::LengthMismatch(1, 2))));
    }

    proptest! {
        #[test]
        fn affine_invariance(
            pairs in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 3..40),
            scale in 0.1f64..5.0,
            shift in -5.0f64..5.0,
        ) {
            let (x, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            if let (Ok(r), Ok(s)) = (pcc(&x, &y), scc(&x, &y)) {
                let tx: Vec<f64> = x.iter().map(|v| scale * v + shift).collect();
                prop_assert!((pcc(&tx, &y).unwrap() - r).abs() < 1e-9);
                prop_assert!((scc(&tx, &y).unwrap() - s).abs() < 1e-12);
                let cubed: Vec<f64> = x.iter().map(|v| v.powi(3) + v).collect();
                prop_assert!((scc(&cubed, &y).unwrap() - s).abs() < 1e-12);
                prop_assert!((-1.0..=1.0).contains(&r));
            }
        }
    }
}
