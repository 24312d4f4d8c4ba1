//! The capability contract shared by every predictive model.
//!
//! The changepoint engine, the Stein samplers, the SMC baseline and the MCMC
//! oracle only ever talk to a model through [`Model`]. Parameters always live
//! in an unconstrained space; a model that needs positivity applies its own
//! transform internally.
//!
//! A segment is the data observed since a candidate changepoint. Models see
//! it as a borrowed [`Segment`], which also carries the observation that
//! immediately precedes the segment (point processes need it to know where
//! the observation window opens).

use nalgebra::{DMatrix, DVector};
use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{finite, Result};
use crate::numeric::LN_2PI;

/// A point in a model's unconstrained parameter space.
pub type ParamVector = DVector<f64>;

/// Observations `y_{τ:m}` since a candidate changepoint `τ`.
#[derive(Clone, Copy, Debug)]
pub struct Segment<'a> {
    /// 1-based index `τ` of the first observation in the segment.
    pub start: usize,
    pub observations: &'a [f64],
    /// Observation `y_{τ-1}`, or `None` when the segment starts at the beginning of the stream.
    pub left_boundary: Option<f64>,
}

impl<'a> Segment<'a> {
    pub fn new(start: usize, observations: &'a [f64], left_boundary: Option<f64>) -> Self {
        Self {
            start,
            observations,
            left_boundary,
        }
    }

    /// A segment that starts at the beginning of the stream.
    pub fn from_start(observations: &'a [f64]) -> Self {
        Self::new(1, observations, None)
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// The first `n` observations as a segment with the same start.
    pub fn prefix(&self, n: usize) -> Segment<'a> {
        Segment {
            observations: &self.observations[..n],
            ..*self
        }
    }

    /// The most recent value the segment knows about: its last observation,
    /// or the left boundary when empty.
    pub fn last_value(&self) -> Option<f64> {
        self.observations.last().copied().or(self.left_boundary)
    }
}

/// Likelihood value together with its gradient and Fisher information.
#[derive(Clone, Debug)]
pub struct LikelihoodTerms {
    pub log_likelihood: f64,
    pub gradient: ParamVector,
    pub fisher: DMatrix<f64>,
}

/// What a predictive model must provide to be tracked by the detector.
///
/// Every method is a pure function of its inputs; randomness only comes from
/// the caller-owned RNG.
pub trait Model: Send + Sync {
    /// Dimension `d` of the parameter space.
    fn dim(&self) -> usize;

    fn log_prior(&self, theta: &ParamVector) -> f64;

    fn grad_log_prior(&self, theta: &ParamVector) -> ParamVector;

    /// Diagonal of the prior's negative log-density Hessian.
    fn prior_precision_diag(&self) -> ParamVector;

    /// `log p(y_{τ:m} | θ, τ)`; zero for an empty segment.
    fn log_likelihood(&self, seg: &Segment<'_>, theta: &ParamVector) -> f64;

    fn grad_log_likelihood(&self, seg: &Segment<'_>, theta: &ParamVector) -> ParamVector;

    /// Positive semidefinite approximation of `-∇² log p(y_{τ:m} | θ, τ)`.
    fn fisher_information(&self, seg: &Segment<'_>, theta: &ParamVector) -> DMatrix<f64>;

    /// `log p(y_next | Y_τ, θ)`.
    fn log_predictive(&self, seg: &Segment<'_>, y_next: f64, theta: &ParamVector) -> f64;

    fn sample_prior(&self, rng: &mut dyn RngCore) -> ParamVector;

    /// Draws the next observation from `p(· | Y_τ, θ)`.
    fn sample_predictive(
        &self,
        seg: &Segment<'_>,
        theta: &ParamVector,
        rng: &mut dyn RngCore,
    ) -> f64;

    /// Likelihood, gradient and Fisher information in one pass. Models whose
    /// gradient and Fisher share intermediate terms should override this.
    fn likelihood_terms(&self, seg: &Segment<'_>, theta: &ParamVector) -> LikelihoodTerms {
        LikelihoodTerms {
            log_likelihood: self.log_likelihood(seg, theta),
            gradient: self.grad_log_likelihood(seg, theta),
            fisher: self.fisher_information(seg, theta),
        }
    }

    /// Closed-form posterior quantities, for models that have them.
    fn closed_form(&self) -> Option<&dyn ClosedForm> {
        None
    }
}

/// Exact posterior machinery, available for conjugate models only.
pub trait ClosedForm: Send + Sync {
    /// `log p(y_next | Y_τ)` with `θ` integrated out.
    fn log_marginal_predictive(&self, seg: &Segment<'_>, y_next: f64) -> f64;

    /// One exact draw from `p(θ | Y_τ)`.
    fn sample_posterior(&self, seg: &Segment<'_>, rng: &mut dyn RngCore) -> ParamVector;
}

/// `log p(θ) + log p(y_{τ:m} | θ, τ)`.
pub fn log_posterior_unnormalized<M: Model + ?Sized>(
    model: &M,
    seg: &Segment<'_>,
    theta: &ParamVector,
) -> Result<f64> {
    let lp = model.log_prior(theta);
    let ll = if seg.is_empty() {
        0.0
    } else {
        model.log_likelihood(seg, theta)
    };
    finite(lp + ll, "log posterior")
}

pub fn grad_log_posterior<M: Model + ?Sized>(
    model: &M,
    seg: &Segment<'_>,
    theta: &ParamVector,
) -> Result<ParamVector> {
    let mut g = model.grad_log_prior(theta);
    if !seg.is_empty() {
        g += model.grad_log_likelihood(seg, theta);
    }
    if g.iter().all(|v| v.is_finite()) {
        Ok(g)
    } else {
        Err(crate::Error::NonFinite {
            what: "log posterior gradient",
        })
    }
}

/// Gauss–Newton approximation of `-∇² log posterior`: prior precision plus Fisher information.
pub fn posterior_hessian<M: Model + ?Sized>(
    model: &M,
    seg: &Segment<'_>,
    theta: &ParamVector,
) -> DMatrix<f64> {
    let mut h = if seg.is_empty() {
        DMatrix::zeros(model.dim(), model.dim())
    } else {
        model.fisher_information(seg, theta)
    };
    for (i, p) in model.prior_precision_diag().iter().enumerate() {
        h[(i, i)] += p;
    }
    h
}

/// Log posterior, its gradient and the Gauss–Newton Hessian at `theta`.
#[derive(Clone, Debug)]
pub struct PosteriorTerms {
    pub log_density: f64,
    pub gradient: ParamVector,
    pub hessian: DMatrix<f64>,
}

pub fn posterior_terms<M: Model + ?Sized>(
    model: &M,
    seg: &Segment<'_>,
    theta: &ParamVector,
) -> Result<PosteriorTerms> {
    let d = model.dim();
    let lik = if seg.is_empty() {
        LikelihoodTerms {
            log_likelihood: 0.0,
            gradient: DVector::zeros(d),
            fisher: DMatrix::zeros(d, d),
        }
    } else {
        model.likelihood_terms(seg, theta)
    };
    let log_density = finite(model.log_prior(theta) + lik.log_likelihood, "log posterior")?;
    let gradient = model.grad_log_prior(theta) + lik.gradient;
    if !gradient.iter().all(|v| v.is_finite()) {
        return Err(crate::Error::NonFinite {
            what: "log posterior gradient",
        });
    }
    let mut hessian = lik.fisher;
    for (i, p) in model.prior_precision_diag().iter().enumerate() {
        hessian[(i, i)] += p;
    }
    Ok(PosteriorTerms {
        log_density,
        gradient,
        hessian,
    })
}

/// Isotropic Gaussian prior `N(mean·1, variance·I)` in unconstrained space.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianPrior {
    pub mean: f64,
    pub variance: f64,
}

impl GaussianPrior {
    pub fn new(mean: f64, variance: f64) -> Result<Self> {
        if !mean.is_finite() || !(variance > 0.0) || !variance.is_finite() {
            return Err(crate::Error::Config(format!(
                "prior needs finite mean and positive variance, got N({mean}, {variance})"
            )));
        }
        Ok(Self { mean, variance })
    }

    pub fn standard() -> Self {
        Self {
            mean: 0.0,
            variance: 1.0,
        }
    }

    pub fn log_density(&self, theta: &ParamVector) -> f64 {
        let d = theta.len() as f64;
        let sq: f64 = theta.iter().map(|t| (t - self.mean).powi(2)).sum();
        -0.5 * d * (LN_2PI + self.variance.ln()) - 0.5 * sq / self.variance
    }

    pub fn gradient(&self, theta: &ParamVector) -> ParamVector {
        theta.map(|t| -(t - self.mean) / self.variance)
    }

    pub fn precision_diag(&self, dim: usize) -> ParamVector {
        DVector::from_element(dim, 1.0 / self.variance)
    }

    pub fn sample(&self, dim: usize, rng: &mut dyn RngCore) -> ParamVector {
        let sd = self.variance.sqrt();
        DVector::from_fn(dim, |_, _| {
            let z: f64 = StandardNormal.sample(rng);
            self.mean + sd * z
        })
    }
}

/// Unknown-mean Gaussian with known noise variance and a Gaussian prior on the mean.
///
/// Conjugate, so every posterior and evidence term has a closed form. It exists
/// to check the detector and the samplers against exact answers.
#[derive(Clone, Copy, Debug)]
pub struct GaussianMeanModel {
    pub prior: GaussianPrior,
    pub noise_variance: f64,
}

impl GaussianMeanModel {
    pub fn new(prior: GaussianPrior, noise_variance: f64) -> Result<Self> {
        if !(noise_variance > 0.0) || !noise_variance.is_finite() {
            return Err(crate::Error::Config(format!(
                "noise variance must be positive, got {noise_variance}"
            )));
        }
        Ok(Self {
            prior,
            noise_variance,
        })
    }

    /// Exact posterior `(mean, variance)` of the unknown mean.
    pub fn posterior(&self, seg: &Segment<'_>) -> (f64, f64) {
        let n = seg.len() as f64;
        let sum: f64 = seg.observations.iter().sum();
        let precision = 1.0 / self.prior.variance + n / self.noise_variance;
        let mean = (self.prior.mean / self.prior.variance + sum / self.noise_variance) / precision;
        (mean, 1.0 / precision)
    }

    fn normal_log_pdf(x: f64, mean: f64, var: f64) -> f64 {
        -0.5 * (LN_2PI + var.ln()) - 0.5 * (x - mean).powi(2) / var
    }
}

impl Model for GaussianMeanModel {
    fn dim(&self) -> usize {
        1
    }

    fn log_prior(&self, theta: &ParamVector) -> f64 {
        self.prior.log_density(theta)
    }

    fn grad_log_prior(&self, theta: &ParamVector) -> ParamVector {
        self.prior.gradient(theta)
    }

    fn prior_precision_diag(&self) -> ParamVector {
        self.prior.precision_diag(1)
    }

    fn log_likelihood(&self, seg: &Segment<'_>, theta: &ParamVector) -> f64 {
        seg.observations
            .iter()
            .map(|&y| Self::normal_log_pdf(y, theta[0], self.noise_variance))
            .sum()
    }

    fn grad_log_likelihood(&self, seg: &Segment<'_>, theta: &ParamVector) -> ParamVector {
        let g: f64 = seg
            .observations
            .iter()
            .map(|&y| (y - theta[0]) / self.noise_variance)
            .sum();
        DVector::from_element(1, g)
    }

    fn fisher_information(&self, seg: &Segment<'_>, _theta: &ParamVector) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, seg.len() as f64 / self.noise_variance)
    }

    fn log_predictive(&self, _seg: &Segment<'_>, y_next: f64, theta: &ParamVector) -> f64 {
        Self::normal_log_pdf(y_next, theta[0], self.noise_variance)
    }

    fn sample_prior(&self, rng: &mut dyn RngCore) -> ParamVector {
        self.prior.sample(1, rng)
    }

    fn sample_predictive(
        &self,
        _seg: &Segment<'_>,
        theta: &ParamVector,
        rng: &mut dyn RngCore,
    ) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        theta[0] + self.noise_variance.sqrt() * z
    }

    fn closed_form(&self) -> Option<&dyn ClosedForm> {
        Some(self)
    }
}

impl ClosedForm for GaussianMeanModel {
    fn log_marginal_predictive(&self, seg: &Segment<'_>, y_next: f64) -> f64 {
        let (mean, var) = self.posterior(seg);
        Self::normal_log_pdf(y_next, mean, var + self.noise_variance)
    }

    fn sample_posterior(&self, seg: &Segment<'_>, rng: &mut dyn RngCore) -> ParamVector {
        let (mean, var) = self.posterior(seg);
        let z: f64 = StandardNormal.sample(rng);
        DVector::from_element(1, mean + var.sqrt() * z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> GaussianMeanModel {
        GaussianMeanModel::new(GaussianPrior::standard(), 0.5).unwrap()
    }

    #[test]
    fn empty_segment_posterior_is_prior() {
        let m = model();
        let seg = Segment::from_start(&[]);
        let lp = log_posterior_unnormalized(&m, &seg, &DVector::from_element(1, 0.0)).unwrap();
        assert!((lp + 0.5 * LN_2PI).abs() < 1e-15);
    }

    #[test]
    fn prior_gradient_at_two() {
        let m = model();
        let seg = Segment::from_start(&[]);
        let g = grad_log_posterior(&m, &seg, &DVector::from_element(1, 2.0)).unwrap();
        assert_eq!(g[0], -2.0);
    }

    #[test]
    fn posterior_matches_sum_of_predictives() {
        let m = model();
        let ys = [0.3, -1.2, 2.5, 0.7];
        let theta = DVector::from_element(1, 0.4);
        let seg = Segment::from_start(&ys);
        let chain: f64 = (0..ys.len())
            .map(|i| m.log_predictive(&seg.prefix(i), ys[i], &theta))
            .sum();
        assert!((chain - m.log_likelihood(&seg, &theta)).abs() < 1e-12);
    }

    #[test]
    fn closed_form_evidence_matches_direct_integral() {
        // p(y) = ∫ N(y; θ, σ²) N(θ; 0, 1) dθ by trapezoid on a wide grid
        let m = model();
        let y = 1.3;
        let seg = Segment::from_start(&[]);
        let h = 1e-3;
        let mut acc = 0.0;
        let mut t = -12.0;
        while t <= 12.0 {
            let theta = DVector::from_element(1, t);
            acc += (m.log_prior(&theta) + m.log_predictive(&seg, y, &theta)).exp() * h;
            t += h;
        }
        assert!((acc.ln() - m.log_marginal_predictive(&seg, y)).abs() < 1e-6);
    }

    #[test]
    fn rejects_bad_prior() {
        assert!(GaussianPrior::new(0.0, 0.0).is_err());
        assert!(GaussianPrior::new(f64::NAN, 1.0).is_err());
        assert!(GaussianMeanModel::new(GaussianPrior::standard(), -1.0).is_err());
    }
}
