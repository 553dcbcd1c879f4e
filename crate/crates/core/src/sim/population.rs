use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use super::SimError;
use crate::seed;

/// Equal-width histogram over `[min, max]` of a set of abilities. The last
/// bin is closed on the right.
#[derive(Debug, Clone, PartialEq)]
pub struct AbilityHistogram {
    lo: f64,
    width: f64,
    counts: Vec<usize>,
}

impl AbilityHistogram {
    pub fn from_values(values: &[f64], bins: usize) -> Result<Self, SimError> {
        if values.is_empty() {
            return Err(SimError::Domain("no training abilities to sample from".into()));
        }
        if bins == 0 {
            return Err(SimError::Domain("histogram needs at least one bin".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(SimError::Domain("non-finite training ability".into()));
        }
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let width = (hi - lo) / bins as f64;
        let mut hist = Self {
            lo,
            width,
            counts: vec![0; bins],
        };
        for &v in values {
            let b = hist.bucket_of(v);
            hist.counts[b] += 1;
        }
        Ok(hist)
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    /// Index of the bucket holding `x`, clamped into range.
    pub fn bucket_of(&self, x: f64) -> usize {
        if self.width == 0.0 {
            return 0;
        }
        let idx = ((x - self.lo) / self.width).floor();
        (idx.max(0.0) as usize).min(self.counts.len() - 1)
    }

    pub fn bucket_bounds(&self, b: usize) -> (f64, f64) {
        let lo = self.lo + self.width * b as f64;
        (lo, lo + self.width)
    }

    /// CDF of the piecewise-uniform density the histogram induces.
    pub fn cdf(&self, x: f64) -> f64 {
        let total: usize = self.counts.iter().sum();
        let hi = self.lo + self.width * self.counts.len() as f64;
        if x < self.lo {
            return 0.0;
        }
        if x >= hi {
            return 1.0;
        }
        let b = self.bucket_of(x);
        let below: usize = self.counts[..b].iter().sum();
        let (lo_b, _) = self.bucket_bounds(b);
        let frac = (x - lo_b) / self.width;
        (below as f64 + frac * self.counts[b] as f64) / total as f64
    }

    /// Draws `n` abilities: a bucket with probability proportional to its
    /// count, then a uniform value inside it.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<f64> {
        if self.width == 0.0 {
            return vec![self.lo; n];
        }
        let pick = WeightedIndex::new(&self.counts).expect("histogram has positive mass");
        (0..n)
            .map(|_| {
                let (lo, hi) = self.bucket_bounds(pick.sample(rng));
                rng.random_range(lo..hi)
            })
            .collect()
    }
}

/// Simulated-student abilities matching the training ability distribution.
pub fn sample_population(train_thetas: &[f64], n: usize, bins: usize, rng_seed: u64) -> Result<Vec<f64>, SimError> {
    let hist = AbilityHistogram::from_values(train_thetas, bins)?;
    Ok(hist.sample(n, &mut seed::rng_for(rng_seed, "population")))
}

/// `prefix` followed by the ability rounded to one decimal, half to even.
/// Rounded zero is always written `0.0`.
pub(crate) fn rounded_ability_id(prefix: &str, theta: f64) -> String {
    let tenths = (theta * 10.0).round_ties_even() as i64;
    let sign = if tenths < 0 { "-" } else { "" };
    let abs = tenths.unsigned_abs();
    format!("{prefix}{sign}{}.{}", abs / 10, abs % 10)
}

/// Identifier shared by all simulated responses whose ability rounds to the
/// same tenth.
pub fn assign_student_id(theta: f64) -> String {
    rounded_ability_id("sim_", theta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn student_ids() {
        assert_eq!(assign_student_id(0.7338), "sim_0.7");
        assert_eq!(assign_student_id(-0.04), "sim_0.0");
        assert_eq!(assign_student_id(1.25), "sim_1.2");
        assert_eq!(assign_student_id(-0.3), "sim_-0.3");
        assert_eq!(assign_student_id(-12.06), "sim_-12.1");
        assert_eq!(assign_student_id(0.71), assign_student_id(0.74));
    }

    #[test]
    fn constant_abilities_stay_in_their_bucket() {
        let pop = sample_population(&[0.4; 7], 100, 50, 1).unwrap();
        assert_eq!(pop.len(), 100);
        assert!(pop.iter().all(|&t| t == 0.4));
    }

    #[test]
    fn empty_training_set_is_an_error() {
        assert!(matches!(sample_population(&[], 10, 50, 1), Err(SimError::Domain(_))));
    }

    #[test]
    fn bucket_shares_follow_counts() {
        // 70 abilities in [0, 0.5), 30 in [0.5, 1]; two buckets of width 0.5
        let mut train: Vec<f64> = (0..70).map(|i| i as f64 / 140.0).collect();
        train.extend((0..30).map(|i| 0.5 + i as f64 / 58.0));
        let hist = AbilityHistogram::from_values(&train, 2).unwrap();
        assert_eq!(hist.counts(), &[70, 30]);
        let pop = sample_population(&train, 10_000, 2, 9).unwrap();
        let low = pop.iter().filter(|&&t| t < 0.5).count() as f64 / 10_000.0;
        // binomial sd is sqrt(0.21 / 10^4) ~ 0.0046, so 0.02 is over 4 sd
        assert!((low - 0.7).abs() <= 0.02, "{low}");
    }

    #[test]
    fn ids_coalesce_into_occupied_cells() {
        let train: Vec<f64> = (0..200).map(|i| -2.0 + i as f64 * 0.02).collect();
        let pop = sample_population(&train, 1000, 50, 3).unwrap();
        let ids: BTreeSet<String> = pop.iter().map(|&t| assign_student_id(t)).collect();
        let cells: BTreeSet<i64> = pop.iter().map(|&t| (t * 10.0).round_ties_even() as i64).collect();
        assert!(ids.len() <= cells.len());
        assert!(ids.len() < pop.len());
    }

    #[test]
    fn last_bin_is_right_closed() {
        let hist = AbilityHistogram::from_values(&[0.0, 1.0, 2.0], 2).unwrap();
        assert_eq!(hist.counts(), &[1, 2]);
        assert_eq!(hist.cdf(-1.0), 0.0);
        assert_eq!(hist.cdf(2.0), 1.0);
        assert!((hist.cdf(0.5) - 1.0 / 6.0).abs() < 1e-12);
    }
}
