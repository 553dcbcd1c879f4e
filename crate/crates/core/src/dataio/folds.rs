use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::DataError;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSpec {
    pub fold_index: usize,
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

/// Items sorted by difficulty (then id) and cut into `n_buckets` contiguous
/// buckets; when the count does not divide evenly the earlier buckets hold
/// one extra item.
pub fn difficulty_buckets(item_difficulties: &BTreeMap<String, f64>, n_buckets: usize) -> Vec<Vec<String>> {
    let mut sorted: Vec<(&String, f64)> = item_difficulties.iter().map(|(k, v)| (k, *v)).collect();
    sorted.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(b.0)));
    let n = sorted.len();
    let (base, extra) = (n / n_buckets, n % n_buckets);
    let mut buckets = Vec::with_capacity(n_buckets);
    let mut it = sorted.into_iter();
    for b in 0..n_buckets {
        let size = base + usize::from(b < extra);
        buckets.push(it.by_ref().take(size).map(|(id, _)| id.clone()).collect());
    }
    buckets
}

/// The striped item list: each bucket is shuffled, then items are drawn one
/// per bucket in bucket order until every bucket is empty.
pub fn striped_order(item_difficulties: &BTreeMap<String, f64>, n_buckets: usize, rng_seed: u64) -> Vec<String> {
    let mut rng = seed::rng_for(rng_seed, "folds");
    let mut buckets = difficulty_buckets(item_difficulties, n_buckets);
    for b in &mut buckets {
        b.shuffle(&mut rng);
    }
    let rounds = buckets.iter().map(Vec::len).max().unwrap_or(0);
    let mut out = Vec::with_capacity(item_difficulties.len());
    for r in 0..rounds {
        for b in &buckets {
            if let Some(id) = b.get(r) {
                out.push(id.clone());
            }
        }
    }
    out
}

/// Difficulty-striped cross-validation folds.
///
/// Fold `f` rotates the striped list left by `round(f * N / n_folds)` and
/// cuts it into train, validation and test at `sizes.0` and
/// `sizes.0 + sizes.1`.
pub fn make_folds(
    item_difficulties: &BTreeMap<String, f64>,
    n_folds: usize,
    n_buckets: usize,
    sizes: (usize, usize, usize),
    rng_seed: u64,
) -> Result<Vec<FoldSpec>, DataError> {
    let n = item_difficulties.len();
    let (train, val, test) = sizes;
    if train + val + test != n {
        return Err(DataError::Config(format!(
            "split sizes {train}+{val}+{test} do not add up to {n} items"
        )));
    }
    if n_folds < 1 {
        return Err(DataError::Config("need at least one fold".into()));
    }
    if n_buckets < 1 || n_buckets > n {
        return Err(DataError::Config(format!("bucket count {n_buckets} must lie in 1..={n}")));
    }
    if let Some((id, _)) = item_difficulties.iter().find(|(_, b)| !b.is_finite()) {
        return Err(DataError::Invalid(format!("non-finite difficulty for item `{id}`")));
    }

    let order = striped_order(item_difficulties, n_buckets, rng_seed);
    Ok((0..n_folds)
        .map(|f| {
            let offset = ((f * n) as f64 / n_folds as f64).round() as usize % n;
            let mut rotated = order.clone();
            rotated.rotate_left(offset);
            let test_ids = rotated.split_off(train + val);
            let val_ids = rotated.split_off(train);
            FoldSpec {
                fold_index: f,
                train_ids: rotated,
                val_ids,
                test_ids,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn items(n: usize) -> BTreeMap<String, f64> {
        (0..n).map(|i| (format!("i{i:02}"), (i as f64 * 0.37).sin() * 2.0)).collect()
    }

    #[test]
    fn forty_nine_items_five_folds() {
        let diffs = items(49);
        let folds = make_folds(&diffs, 5, 10, (29, 10, 10), 7).unwrap();
        assert_eq!(folds.len(), 5);
        let all: BTreeSet<&String> = diffs.keys().collect();
        let mut seen = [BTreeSet::new(), BTreeSet::new(), BTreeSet::new()];
        for f in &folds {
            assert_eq!((f.train_ids.len(), f.val_ids.len(), f.test_ids.len()), (29, 10, 10));
            let union: BTreeSet<&String> = f.train_ids.iter().chain(&f.val_ids).chain(&f.test_ids).collect();
            assert_eq!(union, all);
            seen[0].extend(&f.train_ids);
            seen[1].extend(&f.val_ids);
            seen[2].extend(&f.test_ids);
        }
        for role in &seen {
            assert_eq!(role.len(), 49);
        }
    }

    #[test]
    fn full_rotation_of_five_items() {
        let folds = make_folds(&items(5), 5, 5, (3, 1, 1), 1).unwrap();
        let tests: BTreeSet<&String> = folds.iter().map(|f| &f.test_ids[0]).collect();
        assert_eq!(tests.len(), 5);
    }

    #[test]
    fn buckets_front_load_the_remainder() {
        let sizes: Vec<usize> = difficulty_buckets(&items(49), 10).iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![5, 5, 5, 5, 5, 5, 5, 5, 5, 4]);
    }

    #[test]
    fn striping_windows_hold_distinct_buckets() {
        let diffs = items(49);
        let bucket_of: BTreeMap<String, usize> = difficulty_buckets(&diffs, 10)
            .into_iter()
            .enumerate()
            .flat_map(|(b, ids)| ids.into_iter().map(move |id| (id, b)))
            .collect();
        for seed in 0..20 {
            let order = striped_order(&diffs, 10, seed);
            for w in order.windows(10) {
                let distinct: BTreeSet<usize> = w.iter().map(|id| bucket_of[id]).collect();
                assert_eq!(distinct.len(), 10);
            }
        }
    }

    #[test]
    fn test_sets_are_difficulty_balanced() {
        let diffs = items(49);
        let vals: Vec<f64> = diffs.values().copied().collect();
        let mean = vals.iter().sum::<f64>() / 49.0;
        let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 49.0).sqrt();
        for seed in 0..100 {
            for f in make_folds(&diffs, 5, 10, (29, 10, 10), seed).unwrap() {
                let m = f.test_ids.iter().map(|id| diffs[id]).sum::<f64>() / 10.0;
                assert!((m - mean).abs() <= 0.5 * sd, "seed {seed} fold {}", f.fold_index);
            }
        }
    }

    #[test]
    fn bad_sizes() {
        assert!(matches!(make_folds(&items(10), 5, 5, (5, 2, 2), 0), Err(DataError::Config(_))));
        assert!(matches!(make_folds(&items(10), 5, 11, (6, 2, 2), 0), Err(DataError::Config(_))));
        assert!(matches!(make_folds(&items(10), 0, 5, (6, 2, 2), 0), Err(DataError::Config(_))));
    }

    #[test]
    fn deterministic_per_seed() {
        let diffs = items(49);
        assert_eq!(
            make_folds(&diffs, 5, 10, (29, 10, 10), 3).unwrap(),
            make_folds(&diffs, 5, 10, (29, 10, 10), 3).unwrap()
        );
    }
}
