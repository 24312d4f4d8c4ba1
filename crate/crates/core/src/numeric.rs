//! Small numerical kernels shared across the crate: log-space reductions,
//! damped symmetric solves and seed derivation.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Number of times the Levenberg damping is doubled before a solve is declared failed.
pub const MAX_DAMPING_DOUBLINGS: u32 = 8;

/// `log(sum(exp(xs)))`, returning `-inf` for an empty slice or all `-inf` entries.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = xs.iter().map(|x| (x - max).exp()).sum();
    max + sum.ln()
}

/// Normalizes log weights in place so that `exp` of them sums to one.
/// Returns the log normalizer.
pub fn normalize_log_weights(log_w: &mut [f64]) -> f64 {
    let lse = log_sum_exp(log_w);
    if lse.is_finite() {
        for w in log_w.iter_mut() {
            *w -= lse;
        }
    }
    lse
}

/// Result of a damped Cholesky factorization.
pub struct DampedCholesky {
    pub factor: Cholesky<f64, Dyn>,
    /// Diagonal shift that was added, zero if the matrix factored as is.
    pub damping: f64,
}

/// Factors `a`, adding `lambda * I` with `lambda` doubling from
/// `1e-6 * trace(a) / d` when the plain factorization fails.
pub fn damped_cholesky(a: &DMatrix<f64>) -> Result<DampedCholesky> {
    if let Some(factor) = Cholesky::new(a.clone()) {
        return Ok(DampedCholesky {
            factor,
            damping: 0.0,
        });
    }
    let d = a.nrows().max(1) as f64;
    let trace = a.trace();
    let mut lambda = 1e-6 * trace.abs() / d;
    if !(lambda > 0.0) || !lambda.is_finite() {
        lambda = 1e-6;
    }
    for _ in 0..=MAX_DAMPING_DOUBLINGS {
        let mut shifted = a.clone();
        for i in 0..a.nrows() {
            shifted[(i, i)] += lambda;
        }
        if let Some(factor) = Cholesky::new(shifted) {
            return Ok(DampedCholesky {
                factor,
                damping: lambda,
            });
        }
        lambda *= 2.0;
    }
    Err(Error::Singular {
        doublings: MAX_DAMPING_DOUBLINGS,
    })
}

/// Solves `a x = b` for symmetric positive (semi)definite `a` with damping.
pub fn damped_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let chol = damped_cholesky(a)?;
    Ok(chol.factor.solve(b))
}

/// Symmetrizes a matrix in place: `(a + aᵀ) / 2`.
pub fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    let mut s = a.clone();
    symmetrize(&mut s);
    s.symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// SplitMix64 finalizer, used to derive independent stream seeds.
pub fn mix_seed(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic seed for a sub-stream identified by `parts`.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(mix_seed(base), |acc, &p| mix_seed(acc ^ mix_seed(p)))
}

/// Sample mean and unbiased covariance of row-like points.
pub fn mean_and_covariance<'a, I>(points: I, dim: usize) -> (DVector<f64>, DMatrix<f64>)
where
    I: IntoIterator<Item = &'a DVector<f64>> + Clone,
{
    let mut mean = DVector::zeros(dim);
    let mut n = 0usize;
    for p in points.clone() {
        mean += p;
        n += 1;
    }
    if n == 0 {
        return (mean, DMatrix::zeros(dim, dim));
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(dim, dim);
    if n > 1 {
        for p in points {
            let c = p - &mean;
            cov.ger(1.0, &c, &c, 1.0);
        }
        cov /= (n - 1) as f64;
    }
    (mean, cov)
}

/// Weighted mean and covariance (weights already normalized).
pub fn weighted_mean_and_covariance(
    points: &[DVector<f64>],
    weights: &[f64],
) -> (DVector<f64>, DMatrix<f64>) {
    let dim = points.first().map_or(0, |p| p.len());
    let mut mean = DVector::zeros(dim);
    for (p, &w) in points.iter().zip(weights) {
        mean.axpy(w, p, 1.0);
    }
    let mut cov = DMatrix::zeros(dim, dim);
    for (p, &w) in points.iter().zip(weights) {
        let c = p - &mean;
        cov.ger(w, &c, &c, 1.0);
    }
    (mean, cov)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_sum_exp_handles_extremes() {
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY; 3]), f64::NEG_INFINITY);
        let v = log_sum_exp(&[1000.0, 1000.0]);
        assert!((v - (1000.0 + 2f64.ln())).abs() < 1e-12);
        let v = log_sum_exp(&[-1000.0, f64::NEG_INFINITY]);
        assert!((v + 1000.0).abs() < 1e-12);
    }

    #[test]
    fn damping_rescues_singular_matrix() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let chol = damped_cholesky(&a).unwrap();
        assert!(chol.damping > 0.0);
        let x = chol.factor.solve(&DVector::from_vec(vec![1.0, 1.0]));
        assert!(x.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn damping_gives_up_on_indefinite_matrix() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -5.0]);
        assert!(matches!(damped_cholesky(&a), Err(Error::Singular { .. })));
    }

    #[test]
    fn derived_seeds_differ() {
        let a = derive_seed(7, &[1, 2]);
        let b = derive_seed(7, &[2, 1]);
        let c = derive_seed(8, &[1, 2]);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, derive_seed(7, &[1, 2]));
    }
}
