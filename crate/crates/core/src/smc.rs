//! Importance-sampling baseline with Laplace proposals and adaptive
//! systematic resampling.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::ParamVector;
use crate::numeric::{
    damped_cholesky, normalize_log_weights, symmetrize, weighted_mean_and_covariance,
};
use crate::svn::Target;

pub const LAPLACE_MAX_ITERATIONS: usize = 200;
const LAPLACE_TOLERANCE: f64 = 1e-10;
const MAX_HALVINGS: usize = 40;

/// Particles with normalized log weights.
#[derive(Clone, Debug)]
pub struct WeightedEnsemble {
    pub particles: Vec<ParamVector>,
    pub log_weights: Vec<f64>,
}

impl WeightedEnsemble {
    /// Equally weighted ensemble.
    pub fn uniform(particles: Vec<ParamVector>) -> Result<Self> {
        if particles.is_empty() {
            return Err(Error::Config(
                "a weighted ensemble needs at least one particle".into(),
            ));
        }
        let lw = -(particles.len() as f64).ln();
        let log_weights = vec![lw; particles.len()];
        Ok(Self {
            particles,
            log_weights,
        })
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.log_weights.iter().map(|w| w.exp()).collect()
    }

    pub fn ess(&self) -> f64 {
        ess(&self.log_weights)
    }

    pub fn mean_and_covariance(&self) -> (DVector<f64>, DMatrix<f64>) {
        weighted_mean_and_covariance(&self.particles, &self.weights())
    }

    /// Resamples to `n` equally weighted particles.
    pub fn resample(&self, n: usize, rng: &mut dyn RngCore) -> Self {
        let u: f64 = rng.random();
        let idx = systematic_resample(&self.weights(), n, u);
        let particles = idx.into_iter().map(|i| self.particles[i].clone()).collect();
        Self::uniform(particles).expect("n >= 1")
    }
}

/// Gaussian approximation `N(map, cov)` of a posterior.
#[derive(Clone, Debug)]
pub struct LaplaceFit {
    pub map: ParamVector,
    pub cov: DMatrix<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Quasi-Newton ascent on `log π`, with curvature started from the target's
/// Hessian approximation and refined by BFGS updates, then `cov = H(map)⁻¹`.
///
/// Non-convergence after [`LAPLACE_MAX_ITERATIONS`] is logged and the best
/// iterate is returned with `converged = false`.
pub fn laplace_fit<T: Target + ?Sized>(target: &T, init: &ParamVector) -> Result<LaplaceFit> {
    let mut theta = init.clone();
    let mut terms = target.terms(&theta)?;
    let mut converged = false;
    let mut iterations = 0;
    let mut curvature = terms.hessian.clone();
    while iterations < LAPLACE_MAX_ITERATIONS {
        iterations += 1;
        let chol = damped_cholesky(&curvature)?;
        let delta = chol.factor.solve(&terms.gradient);
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let candidate = &theta + scale * &delta;
            if let Ok(t) = target.terms(&candidate) {
                if t.log_density >= terms.log_density {
                    accepted = Some((candidate, t));
                    break;
                }
            }
            scale *= 0.5;
        }
        let Some((candidate, t)) = accepted else {
            converged = true;
            break;
        };
        let s_k = &candidate - &theta;
        let y_k = &terms.gradient - &t.gradient;
        let sy = s_k.dot(&y_k);
        if sy > 0.0 {
            let bs = &curvature * &s_k;
            let sbs = s_k.dot(&bs);
            if sbs > 0.0 {
                curvature += &y_k * y_k.transpose() / sy - &bs * bs.transpose() / sbs;
                symmetrize(&mut curvature);
            }
        }
        let moved = s_k.amax();
        theta = candidate;
        terms = t;
        if moved < LAPLACE_TOLERANCE * (1.0 + theta.amax()) {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("Laplace fit stopped after {iterations} iterations without converging");
    }
    let chol = damped_cholesky(&terms.hessian)?;
    let mut cov = chol.factor.inverse();
    symmetrize(&mut cov);
    Ok(LaplaceFit {
        map: theta,
        cov,
        iterations,
        converged,
    })
}

/// Draws `n` particles from `N(map, cov)` and weights them by `π / q`.
pub fn importance_step<T: Target + ?Sized>(
    target: &T,
    proposal: &LaplaceFit,
    n: usize,
    rng: &mut dyn RngCore,
) -> Result<WeightedEnsemble> {
    if n == 0 {
        return Err(Error::Config(
            "importance sampling needs at least one draw".into(),
        ));
    }
    let d = proposal.map.len();
    let chol = damped_cholesky(&proposal.cov)?;
    let l = chol.factor.l();
    let mut particles = Vec::with_capacity(n);
    let mut log_w = Vec::with_capacity(n);
    for _ in 0..n {
        let z = DVector::from_fn(d, |_, _| StandardNormal.sample(rng));
        let theta = &proposal.map + &l * &z;
        let log_q = -0.5 * z.norm_squared();
        let log_p = target.log_density(&theta).unwrap_or(f64::NEG_INFINITY);
        log_w.push(log_p - log_q);
        particles.push(theta);
    }
    let lse = normalize_log_weights(&mut log_w);
    if !lse.is_finite() {
        return Err(Error::WeightsVanished);
    }
    Ok(WeightedEnsemble {
        particles,
        log_weights: log_w,
    })
}

/// Effective sample size `1 / Σ w_i²` of normalized log weights.
pub fn ess(log_weights: &[f64]) -> f64 {
    1.0 / log_weights.iter().map(|w| (2.0 * w).exp()).sum::<f64>()
}

/// Systematic resampling: position `(u + k) / n_out` picks the smallest index
/// whose cumulative weight strictly exceeds it.
pub fn systematic_resample(weights: &[f64], n_out: usize, u: f64) -> Vec<usize> {
    let mut out = Vec::with_capacity(n_out);
    let mut cum = weights.first().copied().unwrap_or(0.0);
    let mut i = 0;
    let last = weights.len().saturating_sub(1);
    for k in 0..n_out {
        let p = (u + k as f64) / n_out as f64;
        while cum <= p && i < last {
            i += 1;
            cum += weights[i];
        }
        out.push(i);
    }
    out
}
