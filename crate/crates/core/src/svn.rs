//! Stein variational particle transport.
//!
//! An [`Ensemble`] of particles is pushed towards a target density by
//! repeatedly applying `θ ← θ + ε Q(θ)`, where `Q` lives in the RKHS of a
//! Gaussian kernel. [`svgd_direction`] uses the functional gradient of the KL
//! divergence only. [`svn_direction`] additionally solves, for every particle,
//! the block-diagonal Newton system built from the functional Hessian:
//!
//! ```text
//! g_k = -(1/N) Σ_j [ ∇log π(θ_j) k(θ_j, θ_k) + ∇_{θ_j} k(θ_j, θ_k) ]
//! H_k =  (1/N) Σ_j [ A(θ_j) k(θ_j, θ_k)² + ∇_{θ_j} k ∇_{θ_j} kᵀ ]
//! H_k Q_k = -g_k
//! ```
//!
//! where `A(θ)` is a positive definite approximation of `-∇² log π(θ)`.

use nalgebra::{DMatrix, DVector};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{posterior_terms, Model, ParamVector, PosteriorTerms, Segment};
use crate::numeric::{damped_cholesky, mean_and_covariance};

/// A set of equally weighted particles approximating one density.
///
/// Index `k` identifies the same particle across transport iterations.
#[derive(Clone, Debug, PartialEq)]
pub struct Ensemble {
    pub particles: Vec<ParamVector>,
    pub seed: u64,
}

impl Ensemble {
    pub fn new(particles: Vec<ParamVector>, seed: u64) -> Result<Self> {
        let Some(first) = particles.first() else {
            return Err(Error::Config(
                "an ensemble needs at least one particle".into(),
            ));
        };
        let dim = first.len();
        for p in &particles {
            if p.len() != dim {
                return Err(Error::Dimension {
                    expected: dim,
                    got: p.len(),
                });
            }
            if !p.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite { what: "particle" });
            }
        }
        Ok(Self { particles, seed })
    }

    /// `n` independent prior draws from a stream seeded with `seed`.
    pub fn from_prior<M: Model + ?Sized>(model: &M, n: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let particles = (0..n).map(|_| model.sample_prior(&mut rng)).collect();
        Self::new(particles, seed)
    }

    /// `n` draws produced by `draw`, using a stream seeded with `seed`.
    pub fn from_fn(
        n: usize,
        seed: u64,
        mut draw: impl FnMut(&mut dyn RngCore) -> ParamVector,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let particles = (0..n).map(|_| draw(&mut rng)).collect();
        Self::new(particles, seed)
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.particles[0].len()
    }

    pub fn mean(&self) -> ParamVector {
        mean_and_covariance(&self.particles, self.dim()).0
    }

    /// Unbiased sample covariance (zero for a single particle).
    pub fn covariance(&self) -> DMatrix<f64> {
        mean_and_covariance(&self.particles, self.dim()).1
    }
}

/// Gaussian kernel `k(x, y) = exp(-(x-y)ᵀ M (x-y) / (2 s))`.
#[derive(Clone, Debug)]
pub struct KernelSpec {
    metric: DMatrix<f64>,
    scale: f64,
}

impl KernelSpec {
    /// Rejects a metric that is not symmetric positive definite or a non-positive scale.
    pub fn new(metric: DMatrix<f64>, scale: f64) -> Result<Self> {
        if !metric.is_square() {
            return Err(Error::Config("kernel metric must be square".into()));
        }
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::Config(format!(
                "kernel scale must be positive, got {scale}"
            )));
        }
        let n = metric.nrows();
        let tol = 1e-10 * metric.amax().max(1.0);
        for i in 0..n {
            for j in (i + 1)..n {
                if (metric[(i, j)] - metric[(j, i)]).abs() > tol {
                    return Err(Error::Config("kernel metric must be symmetric".into()));
                }
            }
        }
        if metric.iter().any(|v| !v.is_finite()) || metric.clone().cholesky().is_none() {
            return Err(Error::Config(
                "kernel metric must be positive definite".into(),
            ));
        }
        Ok(Self { metric, scale })
    }

    /// Identity metric with the given scale (squared bandwidth).
    pub fn isotropic(dim: usize, scale: f64) -> Result<Self> {
        Self::new(DMatrix::identity(dim, dim), scale)
    }

    /// Identity metric, scale set to the median pairwise squared distance (floored at `1e-8`).
    pub fn median_heuristic(particles: &[ParamVector]) -> Result<Self> {
        let dim = particles.first().map_or(1, |p| p.len());
        let mut sq: Vec<f64> = Vec::with_capacity(particles.len() * particles.len() / 2);
        for i in 0..particles.len() {
            for j in (i + 1)..particles.len() {
                sq.push((&particles[i] - &particles[j]).norm_squared());
            }
        }
        let median = if sq.is_empty() {
            0.0
        } else {
            sq.sort_by(f64::total_cmp);
            let mid = sq.len() / 2;
            if sq.len().is_multiple_of(2) {
                0.5 * (sq[mid - 1] + sq[mid])
            } else {
                sq[mid]
            }
        };
        Self::isotropic(dim, median.max(1e-8))
    }

    /// Metric equal to the mean of the Hessian approximations, scale `d`.
    pub fn from_hessians(hessians: &[DMatrix<f64>]) -> Result<Self> {
        let Some(first) = hessians.first() else {
            return Err(Error::Config("no Hessians to build a kernel metric".into()));
        };
        let d = first.nrows();
        let mut metric = DMatrix::zeros(d, d);
        for h in hessians {
            metric += h;
        }
        metric /= hessians.len() as f64;
        crate::numeric::symmetrize(&mut metric);
        Self::new(metric, d as f64)
    }

    pub fn metric(&self) -> &DMatrix<f64> {
        &self.metric
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn dim(&self) -> usize {
        self.metric.nrows()
    }
}

/// Kernel value and its gradient with respect to the first argument.
pub fn kernel_eval(x: &ParamVector, y: &ParamVector, spec: &KernelSpec) -> (f64, ParamVector) {
    let diff = x - y;
    let m_diff = &spec.metric * &diff;
    let value = (-diff.dot(&m_diff) / (2.0 * spec.scale)).exp();
    let grad = m_diff * (-value / spec.scale);
    (value, grad)
}

/// Shared per-iteration quantities: `M θ_j` row after row and the symmetric
/// kernel matrix `k(θ_j, θ_k)`.
struct KernelCache {
    products: Vec<f64>,
    values: Vec<f64>,
}

impl KernelCache {
    fn new(particles: &[ParamVector], spec: &KernelSpec) -> Self {
        let n = particles.len();
        let d = spec.dim();
        let mut products = Vec::with_capacity(n * d);
        for p in particles {
            products.extend((&spec.metric * p).iter());
        }
        let rows: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|j| {
                let xj = particles[j].as_slice();
                let mj = &products[j * d..(j + 1) * d];
                (0..j)
                    .map(|k| {
                        let xk = particles[k].as_slice();
                        let mk = &products[k * d..(k + 1) * d];
                        let quad: f64 = (0..d).map(|i| (xj[i] - xk[i]) * (mj[i] - mk[i])).sum();
                        (-0.5 * quad / spec.scale).exp()
                    })
                    .collect()
            })
            .collect();
        let mut values = vec![1.0; n * n];
        for (j, row) in rows.into_iter().enumerate() {
            for (k, v) in row.into_iter().enumerate() {
                values[j * n + k] = v;
                values[k * n + j] = v;
            }
        }
        Self { products, values }
    }
}

/// The empirical functional gradient `g_k` and Newton block `H_k` for particle `k`.
fn stein_terms(
    k: usize,
    grads: &[ParamVector],
    hessians: Option<&[DMatrix<f64>]>,
    spec: &KernelSpec,
    cache: &KernelCache,
) -> (ParamVector, Option<DMatrix<f64>>) {
    let n = grads.len();
    let d = spec.dim();
    let products = &cache.products;
    let mk = &products[k * d..(k + 1) * d];
    let mut g = vec![0.0; d];
    let mut h = hessians.map(|_| vec![0.0; d * d]);
    let mut kgrad = vec![0.0; d];
    let inv_scale = 1.0 / spec.scale;
    for j in 0..n {
        let kv = cache.values[j * n + k];
        if kv == 0.0 {
            continue;
        }
        let mj = &products[j * d..(j + 1) * d];
        let gj = grads[j].as_slice();
        for i in 0..d {
            kgrad[i] = -kv * inv_scale * (mj[i] - mk[i]);
            g[i] += kv * gj[i] + kgrad[i];
        }
        if let (Some(h), Some(hess)) = (h.as_mut(), hessians) {
            let w = kv * kv;
            let hj = hess[j].as_slice();
            for a in 0..d {
                for b in 0..d {
                    h[a * d + b] += w * hj[a * d + b] + kgrad[a] * kgrad[b];
                }
            }
        }
    }
    let nf = n as f64;
    let g = DVector::from_iterator(d, g.into_iter().map(|v| -v / nf));
    let h = h.map(|h| DMatrix::from_iterator(d, d, h.into_iter().map(|v| v / nf)));
    (g, h)
}

/// SVGD directions `-g_k` for every particle.
pub fn svgd_direction(
    particles: &[ParamVector],
    grads: &[ParamVector],
    spec: &KernelSpec,
) -> Vec<ParamVector> {
    let cache = KernelCache::new(particles, spec);
    (0..particles.len())
        .into_par_iter()
        .map(|k| -stein_terms(k, grads, None, spec, &cache).0)
        .collect()
}

/// Outcome of one particle's Newton solve.
#[derive(Clone, Debug)]
pub struct NewtonDirection {
    pub direction: ParamVector,
    /// Diagonal shift needed to factor `H_k` (zero when none was needed).
    pub damping: f64,
}

/// SVN directions solving `H_k Q_k = -g_k` for every particle.
///
/// A particle whose block stays singular after damping yields an error in its
/// slot; the others are unaffected.
pub fn svn_direction(
    particles: &[ParamVector],
    grads: &[ParamVector],
    hessians: &[DMatrix<f64>],
    spec: &KernelSpec,
) -> Vec<Result<NewtonDirection>> {
    let cache = KernelCache::new(particles, spec);
    (0..particles.len())
        .into_par_iter()
        .map(|k| {
            let (g, h) = stein_terms(k, grads, Some(hessians), spec, &cache);
            let h = h.expect("hessian block requested");
            let chol = damped_cholesky(&h)?;
            Ok(NewtonDirection {
                direction: chol.factor.solve(&(-g)),
                damping: chol.damping,
            })
        })
        .collect()
}

/// A density the samplers can be pointed at.
pub trait Target: Sync {
    fn dim(&self) -> usize;

    fn log_density(&self, theta: &ParamVector) -> Result<f64>;

    fn gradient(&self, theta: &ParamVector) -> Result<ParamVector>;

    /// Log density, gradient and a positive definite approximation of `-∇² log π`.
    fn terms(&self, theta: &ParamVector) -> Result<PosteriorTerms>;
}

/// Posterior `p(θ | Y_τ)` of a model on one segment.
pub struct PosteriorTarget<'a, M: ?Sized> {
    pub model: &'a M,
    pub segment: Segment<'a>,
}

impl<'a, M: Model + ?Sized> PosteriorTarget<'a, M> {
    pub fn new(model: &'a M, segment: Segment<'a>) -> Self {
        Self { model, segment }
    }
}

impl<M: Model + ?Sized> Target for PosteriorTarget<'_, M> {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn log_density(&self, theta: &ParamVector) -> Result<f64> {
        crate::model::log_posterior_unnormalized(self.model, &self.segment, theta)
    }

    fn gradient(&self, theta: &ParamVector) -> Result<ParamVector> {
        crate::model::grad_log_posterior(self.model, &self.segment, theta)
    }

    fn terms(&self, theta: &ParamVector) -> Result<PosteriorTerms> {
        posterior_terms(self.model, &self.segment, theta)
    }
}

/// Multivariate Gaussian target given by its mean and precision matrix.
#[derive(Clone, Debug)]
pub struct GaussianTarget {
    pub mean: ParamVector,
    pub precision: DMatrix<f64>,
}

impl GaussianTarget {
    pub fn new(mean: ParamVector, covariance: DMatrix<f64>) -> Result<Self> {
        let precision = covariance
            .cholesky()
            .ok_or_else(|| Error::Config("covariance must be positive definite".into()))?
            .inverse();
        Ok(Self { mean, precision })
    }
}

impl Target for GaussianTarget {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn log_density(&self, theta: &ParamVector) -> Result<f64> {
        let c = theta - &self.mean;
        Ok(-0.5 * c.dot(&(&self.precision * &c)))
    }

    fn gradient(&self, theta: &ParamVector) -> Result<ParamVector> {
        Ok(-(&self.precision * (theta - &self.mean)))
    }

    fn terms(&self, theta: &ParamVector) -> Result<PosteriorTerms> {
        Ok(PosteriorTerms {
            log_density: self.log_density(theta)?,
            gradient: self.gradient(theta)?,
            hessian: self.precision.clone(),
        })
    }
}

/// Which Stein direction drives the transport.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Transport {
    /// Block-diagonal Stein variational Newton.
    Newton,
    /// Stein variational gradient descent.
    Gradient,
}

#[derive(Clone, Copy, Debug)]
pub struct TransportConfig {
    pub iterations: usize,
    /// Step `ε ∈ (0, 1]`.
    pub step: f64,
    pub transport: Transport,
}

impl TransportConfig {
    pub fn newton(iterations: usize, step: f64) -> Self {
        Self {
            iterations,
            step,
            transport: Transport::Newton,
        }
    }

    pub fn gradient(iterations: usize, step: f64) -> Self {
        Self {
            iterations,
            step,
            transport: Transport::Gradient,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step <= 1.0) {
            return Err(Error::Config(format!(
                "step must lie in (0, 1], got {}",
                self.step
            )));
        }
        Ok(())
    }
}

/// Diagnostics collected over one transport run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TransportStats {
    pub iterations: usize,
    /// Particle-iterations where `H_k` needed a diagonal shift.
    pub damped_solves: usize,
    /// Particle-iterations that fell back to the SVGD direction.
    pub fallbacks: usize,
}

/// Transports `ensemble` towards `target`.
///
/// With zero iterations the ensemble is returned unchanged. In Newton mode the
/// kernel metric is refreshed every iteration from the mean Hessian; a particle
/// whose Newton block cannot be factored moves along its SVGD direction instead.
pub fn svn_run<T: Target + ?Sized>(
    ensemble: &Ensemble,
    target: &T,
    config: &TransportConfig,
) -> Result<(Ensemble, TransportStats)> {
    config.validate()?;
    if ensemble.dim() != target.dim() {
        return Err(Error::Dimension {
            expected: target.dim(),
            got: ensemble.dim(),
        });
    }
    let mut particles = ensemble.particles.clone();
    let mut stats = TransportStats::default();
    for _ in 0..config.iterations {
        let directions = match config.transport {
            Transport::Newton => {
                let terms: Vec<PosteriorTerms> = particles
                    .par_iter()
                    .map(|p| target.terms(p))
                    .collect::<Result<_>>()?;
                let (grads, hessians): (Vec<_>, Vec<_>) =
                    terms.into_iter().map(|t| (t.gradient, t.hessian)).unzip();
                let spec = KernelSpec::from_hessians(&hessians)?;
                let newton = svn_direction(&particles, &grads, &hessians, &spec);
                let mut out = Vec::with_capacity(particles.len());
                for (k, res) in newton.into_iter().enumerate() {
                    match res {
                        Ok(nd) => {
                            if nd.damping > 0.0 {
                                stats.damped_solves += 1;
                            }
                            out.push(nd.direction);
                        }
                        Err(_) => {
                            stats.fallbacks += 1;
                            out.push(
                                -stein_terms(
                                    k,
                                    &grads,
                                    None,
                                    &spec,
                                    &KernelCache::new(&particles, &spec),
                                )
                                .0,
                            );
                        }
                    }
                }
                out
            }
            Transport::Gradient => {
                let grads: Vec<ParamVector> = particles
                    .par_iter()
                    .map(|p| target.gradient(p))
                    .collect::<Result<_>>()?;
                let spec = KernelSpec::median_heuristic(&particles)?;
                svgd_direction(&particles, &grads, &spec)
            }
        };
        for (p, q) in particles.iter_mut().zip(&directions) {
            p.axpy(config.step, q, 1.0);
        }
        if particles.iter().any(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite {
                what: "transported particle",
            });
        }
        stats.iterations += 1;
    }
    Ok((
        Ensemble {
            particles,
            seed: ensemble.seed,
        },
        stats,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn v(xs: &[f64]) -> ParamVector {
        DVector::from_row_slice(xs)
    }

    #[test]
    fn kernel_at_coincident_points() {
        let spec = KernelSpec::isotropic(3, 0.7).unwrap();
        let x = v(&[0.3, -1.0, 2.0]);
        let (k, g) = kernel_eval(&x, &x, &spec);
        assert_eq!(k, 1.0);
        assert!(g.iter().all(|&c| c == 0.0));
    }

    #[test]
    fn kernel_closed_form() {
        let spec = KernelSpec::isotropic(1, 1.0).unwrap();
        let (k, _) = kernel_eval(&v(&[0.0]), &v(&[2f64.sqrt()]), &spec);
        assert_relative_eq!(k, (-1.0f64).exp(), max_relative = 1e-14);
    }

    #[test]
    fn kernel_gradient_matches_finite_differences() {
        let metric =
            DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.1, 0.3, 1.5, -0.2, 0.1, -0.2, 1.0]);
        let spec = KernelSpec::new(metric, 1.7).unwrap();
        let x = v(&[0.4, -0.3, 0.9]);
        let y = v(&[-0.2, 0.5, 0.1]);
        let (_, g) = kernel_eval(&x, &y, &spec);
        for i in 0..3 {
            let h = 1e-6;
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            let fd = (kernel_eval(&xp, &y, &spec).0 - kernel_eval(&xm, &y, &spec).0) / (2.0 * h);
            assert_relative_eq!(g[i], fd, max_relative = 1e-6);
        }
    }

    #[test]
    fn kernel_spec_rejects_indefinite_metric() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(KernelSpec::new(m, 1.0).is_err());
        assert!(KernelSpec::isotropic(2, 0.0).is_err());
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        assert!(KernelSpec::new(asym, 1.0).is_err());
    }

    #[test]
    fn single_particle_newton_step_is_exact() {
        let spec = KernelSpec::isotropic(1, 1.0).unwrap();
        let p = vec![v(&[2.0])];
        let g = vec![v(&[-2.0])];
        let h = vec![DMatrix::identity(1, 1)];
        let q = svn_direction(&p, &g, &h, &spec).pop().unwrap().unwrap();
        assert_relative_eq!(q.direction[0], -2.0, max_relative = 1e-14);
        let s = svgd_direction(&p, &g, &spec);
        assert_relative_eq!(s[0][0], -2.0, max_relative = 1e-14);
    }

    #[test]
    fn stationary_particle_does_not_move() {
        let target = GaussianTarget::new(DVector::zeros(3), DMatrix::identity(3, 3)).unwrap();
        let ens = Ensemble::new(vec![DVector::zeros(3)], 0).unwrap();
        let (out, _) = svn_run(&ens, &target, &TransportConfig::newton(3, 1.0)).unwrap();
        assert!(out.particles[0].norm() < 1e-15);
    }

    #[test]
    fn collapsed_particles_follow_the_score() {
        let spec = KernelSpec::isotropic(2, 0.5).unwrap();
        let p = vec![v(&[1.0, -1.0]); 4];
        let g = vec![v(&[-1.0, 1.0]); 4];
        for d in svgd_direction(&p, &g, &spec) {
            assert_relative_eq!(d[0], -1.0, max_relative = 1e-14);
            assert_relative_eq!(d[1], 1.0, max_relative = 1e-14);
        }
    }

    #[test]
    fn zero_iterations_is_identity() {
        let target = GaussianTarget::new(DVector::zeros(2), DMatrix::identity(2, 2)).unwrap();
        let ens = Ensemble::new(vec![v(&[1.0, 2.0]), v(&[-3.0, 0.5])], 9).unwrap();
        let (out, stats) = svn_run(&ens, &target, &TransportConfig::newton(0, 1.0)).unwrap();
        assert_eq!(out, ens);
        assert_eq!(stats.iterations, 0);
    }

    #[test]
    fn rejects_bad_step_and_empty_ensemble() {
        let target = GaussianTarget::new(DVector::zeros(1), DMatrix::identity(1, 1)).unwrap();
        let ens = Ensemble::new(vec![v(&[1.0])], 0).unwrap();
        assert!(svn_run(&ens, &target, &TransportConfig::newton(1, 0.0)).is_err());
        assert!(svn_run(&ens, &target, &TransportConfig::newton(1, 1.5)).is_err());
        assert!(Ensemble::new(vec![], 0).is_err());
    }

    #[test]
    fn median_heuristic_floor() {
        let spec = KernelSpec::median_heuristic(&[v(&[1.0]), v(&[1.0])]).unwrap();
        assert_eq!(spec.scale(), 1e-8);
    }
}
