//! Random-walk Metropolis reference sampler.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::ParamVector;
use crate::numeric::mean_and_covariance;

const MIN_SCALE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChainConfig {
    pub steps: usize,
    pub proposal_scale: f64,
    pub seed: u64,
    pub burn_in_fraction: f64,
}

impl ChainConfig {
    pub fn new(
        steps: usize,
        proposal_scale: f64,
        seed: u64,
        burn_in_fraction: f64,
    ) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Config("chain needs at least one step".into()));
        }
        if !(proposal_scale >= MIN_SCALE) || !proposal_scale.is_finite() {
            return Err(Error::Config(format!(
                "proposal scale must be at least {MIN_SCALE}, got {proposal_scale}"
            )));
        }
        if !(0.0..1.0).contains(&burn_in_fraction) {
            return Err(Error::Config(format!(
                "burn-in fraction must lie in [0, 1), got {burn_in_fraction}"
            )));
        }
        Ok(Self {
            steps,
            proposal_scale,
            seed,
            burn_in_fraction,
        })
    }

    /// `2.4/√d · hint` proposal scale with 20% burn-in.
    pub fn with_defaults(steps: usize, dim: usize, scale_hint: f64, seed: u64) -> Result<Self> {
        Self::new(steps, 2.4 / (dim as f64).sqrt() * scale_hint, seed, 0.2)
    }
}

#[derive(Clone, Debug)]
pub struct Chain {
    /// Post-burn-in states, one per step.
    pub samples: Vec<ParamVector>,
    pub acceptance_rate: f64,
    /// Set when the acceptance rate falls outside `(0.05, 0.8)`.
    pub warning: Option<String>,
}

/// Metropolis chain with isotropic Gaussian proposals.
pub fn rw_metropolis<F>(log_target: F, init: &ParamVector, cfg: &ChainConfig) -> Result<Chain>
where
    F: Fn(&ParamVector) -> f64,
{
    let mut current = init.clone();
    let mut current_lp = log_target(&current);
    if !current_lp.is_finite() {
        return Err(Error::NonFinite {
            what: "log target at chain start",
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let burn = (cfg.burn_in_fraction * cfg.steps as f64).floor() as usize;
    let mut samples = Vec::with_capacity(cfg.steps - burn);
    let mut accepted = 0usize;
    let d = init.len();
    for step in 0..cfg.steps {
        let z = DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
        let proposal = &current + cfg.proposal_scale * z;
        let lp = log_target(&proposal);
        let log_u: f64 = rng.random::<f64>().ln();
        if lp.is_finite() && lp - current_lp >= log_u {
            current = proposal;
            current_lp = lp;
            accepted += 1;
        }
        if step >= burn {
            samples.push(current.clone());
        }
    }
    let acceptance_rate = accepted as f64 / cfg.steps as f64;
    let warning = if acceptance_rate <= 0.05 || acceptance_rate >= 0.8 {
        let msg = format!("acceptance rate {acceptance_rate:.3} outside (0.05, 0.8)");
        log::warn!("{msg}");
        Some(msg)
    } else {
        None
    };
    Ok(Chain {
        samples,
        acceptance_rate,
        warning,
    })
}

/// Trace of the unbiased sample covariance.
pub fn covariance_trace(samples: &[ParamVector]) -> f64 {
    let dim = samples.first().map_or(0, |s| s.len());
    mean_and_covariance(samples, dim).1.trace()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trace_closed_forms() {
        let same = vec![DVector::from_vec(vec![1.0, 2.0]); 5];
        assert_eq!(covariance_trace(&same), 0.0);
        let pair = vec![DVector::from_vec(vec![-1.0]), DVector::from_vec(vec![1.0])];
        assert!((covariance_trace(&pair) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_degenerate_configs() {
        assert!(ChainConfig::new(0, 1.0, 0, 0.2).is_err());
        assert!(ChainConfig::new(10, 1e-13, 0, 0.2).is_err());
        assert!(ChainConfig::new(10, 1.0, 0, 1.0).is_err());
    }

    #[test]
    fn flat_target_always_accepts() {
        let cfg = ChainConfig::new(500, 1.0, 4, 0.0).unwrap();
        let chain = rw_metropolis(|_| 0.0, &DVector::zeros(2), &cfg).unwrap();
        assert_eq!(chain.acceptance_rate, 1.0);
        assert!(chain.warning.is_some());
    }

    #[test]
    fn chain_replays_bit_for_bit() {
        let cfg = ChainConfig::new(1000, 1.2, 9, 0.2).unwrap();
        let target = |x: &ParamVector| -0.5 * x.norm_squared();
        let a = rw_metropolis(target, &DVector::zeros(3), &cfg).unwrap();
        let b = rw_metropolis(target, &DVector::zeros(3), &cfg).unwrap();
        assert_eq!(a.samples, b.samples);
        assert_eq!(a.samples.len(), 800);
    }
}
