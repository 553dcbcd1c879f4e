//! Distribution-level comparisons between two sets of embedding vectors.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::MetricError;

/// Default histogram resolution for [`diversity_kl`].
pub const DIVERSITY_BINS: usize = 100;
/// Mass added to every histogram bucket before renormalizing.
pub const DIVERSITY_SMOOTHING: f64 = 1e-10;

fn check_set(set: &[Vec<f64>], min: usize) -> Result<usize, MetricError> {
    if set.len() < min {
        return Err(MetricError::TooFewSamples {
            needed: min,
            got: set.len(),
        });
    }
    let dim = set[0].len();
    if dim == 0 {
        return Err(MetricError::Undefined("zero-dimensional vectors".into()));
    }
    for v in set {
        if v.len() != dim {
            return Err(MetricError::DimensionMismatch(dim, v.len()));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(MetricError::NonFinite);
        }
    }
    Ok(dim)
}

/// Sample mean and unbiased (n - 1) covariance.
pub fn covariance(set: &[Vec<f64>]) -> Result<(DVector<f64>, DMatrix<f64>), MetricError> {
    let dim = check_set(set, 2)?;
    let n = set.len();
    let mut mean = DVector::zeros(dim);
    for v in set {
        mean += DVector::from_column_slice(v);
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(dim, dim);
    for v in set {
        let d = DVector::from_column_slice(v) - &mean;
        cov.ger(1.0, &d, &d, 1.0);
    }
    cov /= (n - 1) as f64;
    Ok((mean, cov))
}

/// Eigen-decomposes a symmetric matrix and maps its eigenvalues through `f`
/// after clamping negatives (numerical noise) to zero.
fn sym_map(m: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mapped = eig.eigenvalues.map(|l| f(l.max(0.0)));
    &eig.eigenvectors * DMatrix::from_diagonal(&mapped) * eig.eigenvectors.transpose()
}

/// Trace of `(s1 s2)^{1/2}`, computed as the trace of the square root of the
/// symmetric matrix `s1^{1/2} s2 s1^{1/2}`, which has the same spectrum.
fn trace_sqrt_product(s1: &DMatrix<f64>, s2: &DMatrix<f64>) -> f64 {
    let s1h = sym_map(s1, f64::sqrt);
    let inner = &s1h * s2 * &s1h;
    let inner = (&inner + inner.transpose()) * 0.5;
    inner.symmetric_eigen().eigenvalues.iter().map(|l| l.max(0.0).sqrt()).sum()
}

/// The principal square root of `s1 s2` for symmetric positive definite `s1`
/// and symmetric positive semidefinite `s2`:
/// `s1^{1/2} (s1^{1/2} s2 s1^{1/2})^{1/2} s1^{-1/2}`.
pub fn product_sqrt(s1: &DMatrix<f64>, s2: &DMatrix<f64>) -> Result<DMatrix<f64>, MetricError> {
    if !s1.is_square() || s1.shape() != s2.shape() {
        return Err(MetricError::DimensionMismatch(s1.nrows(), s2.nrows()));
    }
    let min_eig = s1.clone().symmetric_eigen().eigenvalues.min();
    if min_eig <= 1e-12 * s1.norm().max(1.0) {
        return Err(MetricError::Undefined("first factor is not positive definite".into()));
    }
    let s1h = sym_map(s1, f64::sqrt);
    let s1h_inv = sym_map(s1, |l| 1.0 / l.sqrt());
    let inner_sqrt = sym_map(&(&s1h * s2 * &s1h), f64::sqrt);
    Ok(&s1h * inner_sqrt * s1h_inv)
}

/// Fréchet distance between Gaussians fitted to two vector sets:
/// `|mu1 - mu2|^2 + tr(S1 + S2 - 2 (S1 S2)^{1/2})`, clamped at zero.
pub fn fid(set_a: &[Vec<f64>], set_b: &[Vec<f64>]) -> Result<f64, MetricError> {
    let dim_a = check_set(set_a, 2)?;
    let dim_b = check_set(set_b, 2)?;
    if dim_a != dim_b {
        return Err(MetricError::DimensionMismatch(dim_a, dim_b));
    }
    let (mu1, s1) = covariance(set_a)?;
    let (mu2, s2) = covariance(set_b)?;
    let mean_term = (&mu1 - &mu2).norm_squared();
    let value = mean_term + s1.trace() + s2.trace() - 2.0 * trace_sqrt_product(&s1, &s2);
    Ok(value.max(0.0))
}

fn cosine_histogram(set: &[Vec<f64>], bins: usize) -> Result<Vec<u64>, MetricError> {
    check_set(set, 2)?;
    let unit: Vec<Vec<f64>> = set
        .iter()
        .map(|v| {
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                Err(MetricError::ZeroNorm)
            } else {
                Ok(v.iter().map(|x| x / norm).collect())
            }
        })
        .collect::<Result<_, _>>()?;
    let bucket = |cos: f64| -> usize {
        let c = cos.clamp(-1.0, 1.0);
        (((c + 1.0) / 2.0 * bins as f64).floor() as usize).min(bins - 1)
    };
    let counts = (0..unit.len())
        .into_par_iter()
        .map(|i| {
            let mut row = vec![0u64; bins];
            for j in i + 1..unit.len() {
                let cos: f64 = unit[i].iter().zip(&unit[j]).map(|(x, y)| x * y).sum();
                row[bucket(cos)] += 1;
            }
            row
        })
        .reduce(
            || vec![0u64; bins],
            |mut acc, row| {
                acc.iter_mut().zip(row).for_each(|(a, r)| *a += r);
                acc
            },
        );
    Ok(counts)
}

fn smoothed(counts: &[u64], eps: f64) -> Vec<f64> {
    let total: u64 = counts.iter().sum();
    let raw: Vec<f64> = counts.iter().map(|&c| c as f64 / total as f64 + eps).collect();
    let z: f64 = raw.iter().sum();
    raw.into_iter().map(|p| p / z).collect()
}

/// KL divergence `KL(A || B)` between the histograms of within-set pairwise
/// cosine similarities, with the default bins and smoothing.
pub fn diversity_kl(set_a: &[Vec<f64>], set_b: &[Vec<f64>]) -> Result<f64, MetricError> {
    diversity_kl_with(set_a, set_b, DIVERSITY_BINS, DIVERSITY_SMOOTHING)
}

/// [`diversity_kl`] with an explicit bucket count over `[-1, 1]` and additive
/// smoothing mass.
pub fn diversity_kl_with(
    set_a: &[Vec<f64>],
    set_b: &[Vec<f64>],
    bins: usize,
    smoothing: f64,
) -> Result<f64, MetricError> {
    if bins == 0 {
        return Err(MetricError::Undefined("need at least one bin".into()));
    }
    if !(smoothing > 0.0) {
        return Err(MetricError::Undefined("smoothing must be positive".into()));
    }
    let dim_a = check_set(set_a, 2)?;
    let dim_b = check_set(set_b, 2)?;
    if dim_a != dim_b {
        return Err(MetricError::DimensionMismatch(dim_a, dim_b));
    }
    let p = smoothed(&cosine_histogram(set_a, bins)?, smoothing);
    let q = smoothed(&cosine_histogram(set_b, bins)?, smoothing);
    let kl: f64 = p.iter().zip(&q).map(|(pi, qi)| pi * (pi / qi).ln()).sum();
    Ok(kl.max(0.0))
}
