//! Online changepoint engine.
//!
//! The state at time `m` holds one [`Hypothesis`] per candidate start `τ` of
//! the current segment, each carrying the joint `log p(τ, y_{1:m})` and a
//! particle approximation of `p(θ | y_{τ:m})`. Every [`DetectorState::step`]
//! checks the new observation against the predictive interval formed at the
//! previous step, then runs the evidence, recursion, pruning and particle
//! update phases and forms the predictive interval for the next observation.

use std::time::Instant;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{Model, ParamVector, Segment};
use crate::numeric::{derive_seed, log_sum_exp};
use crate::smc::{importance_step, laplace_fit, WeightedEnsemble};
use crate::svn::{svn_run, Ensemble, PosteriorTarget, TransportConfig};

/// Constant changepoint prior `p_cp = 1/H`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HazardSpec {
    expected_run_length: f64,
}

impl HazardSpec {
    pub fn new(expected_run_length: f64) -> Result<Self> {
        if !(expected_run_length > 1.0) {
            return Err(Error::Config(format!(
                "expected run length must exceed 1, got {expected_run_length}"
            )));
        }
        Ok(Self {
            expected_run_length,
        })
    }

    /// No changepoints at all: `p_cp = 0`.
    pub fn never() -> Self {
        Self {
            expected_run_length: f64::INFINITY,
        }
    }

    pub fn expected_run_length(&self) -> f64 {
        self.expected_run_length
    }

    pub fn p_cp(&self) -> f64 {
        1.0 / self.expected_run_length
    }

    fn log_p_cp(&self) -> f64 {
        self.p_cp().ln()
    }

    fn log_continue(&self) -> f64 {
        (-self.p_cp()).ln_1p()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sampler {
    /// Stein variational Newton transport.
    Svn,
    /// Stein variational gradient descent.
    Svgd,
    /// Laplace-proposal importance sampling with adaptive resampling.
    Smc,
    /// Exact posterior draws; requires a model with a closed form.
    Exact,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvidenceMode {
    /// Particle average of predictive densities.
    MonteCarlo,
    /// Closed-form marginal predictive; requires a model with a closed form.
    Exact,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sidedness {
    OneSidedUpper,
    TwoSided,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrunePolicy {
    pub max_hypotheses: usize,
    pub mass_floor: f64,
}

impl Default for PrunePolicy {
    fn default() -> Self {
        Self {
            max_hypotheses: 50,
            mass_floor: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DetectorConfig {
    pub hazard: HazardSpec,
    /// Particles per hypothesis, `N_θ`.
    pub particles: usize,
    /// Predictive draws per step, `N_y`.
    pub predictive_draws: usize,
    pub iterations: usize,
    pub step: f64,
    pub sampler: Sampler,
    pub evidence: EvidenceMode,
    pub lower_level: f64,
    pub upper_level: f64,
    pub sidedness: Sidedness,
    pub prune: PrunePolicy,
    /// Alerts are suppressed while `m <= min_segment`.
    pub min_segment: usize,
    pub seed: u64,
    pub retain_samples: bool,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            hazard: HazardSpec::new(100.0).expect("valid"),
            particles: 100,
            predictive_draws: 100,
            iterations: 30,
            step: 0.5,
            sampler: Sampler::Svn,
            evidence: EvidenceMode::MonteCarlo,
            lower_level: 0.025,
            upper_level: 0.975,
            sidedness: Sidedness::TwoSided,
            prune: PrunePolicy::default(),
            min_segment: 5,
            seed: 0,
            retain_samples: false,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.particles == 0 || self.predictive_draws == 0 {
            return Err(Error::Config(
                "particle and predictive draw counts must be at least 1".into(),
            ));
        }
        if self.prune.max_hypotheses == 0 {
            return Err(Error::Config(
                "pruning must keep at least one hypothesis".into(),
            ));
        }
        if !(self.prune.mass_floor >= 0.0 && self.prune.mass_floor < 1.0) {
            return Err(Error::Config(format!(
                "mass floor must lie in [0, 1), got {}",
                self.prune.mass_floor
            )));
        }
        let level_ok = |l: f64| l > 0.0 && l < 1.0;
        if !level_ok(self.lower_level)
            || !level_ok(self.upper_level)
            || self.lower_level > self.upper_level
        {
            return Err(Error::Config(format!(
                "quantile levels must satisfy 0 < lower <= upper < 1, got {} and {}",
                self.lower_level, self.upper_level
            )));
        }
        if !(self.step > 0.0 && self.step <= 1.0) {
            return Err(Error::Config(format!(
                "step must lie in (0, 1], got {}",
                self.step
            )));
        }
        Ok(())
    }
}

/// A candidate start `τ` of the current segment.
#[derive(Clone, Debug)]
pub struct Hypothesis {
    pub tau: usize,
    pub log_joint: f64,
    pub ensemble: Ensemble,
    /// Normalized importance weights; `None` means equal weights.
    pub log_weights: Option<Vec<f64>>,
    /// Last Laplace mode, used to warm-start the next fit.
    pub map: Option<ParamVector>,
}

impl Hypothesis {
    /// Prior draws seeded from `(config.seed, tau)`.
    pub fn fresh<M: Model + ?Sized>(
        model: &M,
        tau: usize,
        log_joint: f64,
        config: &DetectorConfig,
    ) -> Result<Self> {
        let ensemble = Ensemble::from_prior(
            model,
            config.particles,
            derive_seed(config.seed, &[tau as u64]),
        )?;
        Ok(Self {
            tau,
            log_joint,
            ensemble,
            log_weights: None,
            map: None,
        })
    }

    fn pick_particle(&self, rng: &mut dyn RngCore) -> &ParamVector {
        let n = self.ensemble.len();
        let idx = match &self.log_weights {
            None => rng.random_range(0..n),
            Some(lw) => {
                let u: f64 = rng.random();
                let mut cum = 0.0;
                lw.iter()
                    .position(|w| {
                        cum += w.exp();
                        cum > u
                    })
                    .unwrap_or(n - 1)
            }
        };
        &self.ensemble.particles[idx]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictiveSummary {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
    pub samples: Option<Vec<f64>>,
}

/// Nearest-rank empirical quantile of sorted data: element `⌈level·n⌉ − 1`.
pub fn quantile(sorted: &[f64], level: f64) -> f64 {
    let n = sorted.len();
    let rank = (level * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

/// Mean and nearest-rank quantiles of predictive draws.
pub fn summarize(samples: &[f64], lower_level: f64, upper_level: f64) -> PredictiveSummary {
    assert!(!samples.is_empty(), "summarize needs at least one sample");
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    PredictiveSummary {
        mean,
        lower: quantile(&sorted, lower_level),
        upper: quantile(&sorted, upper_level),
        samples: None,
    }
}

/// Whether `y_obs` falls outside the credible interval.
pub fn detect(y_obs: f64, summary: &PredictiveSummary, mode: Sidedness) -> bool {
    match mode {
        Sidedness::OneSidedUpper => y_obs > summary.upper,
        Sidedness::TwoSided => y_obs < summary.lower || y_obs > summary.upper,
    }
}

/// `log (1/N) Σ_k p(y_new | Y_τ, θ_k)`, or the weighted average when weights are given.
pub fn evidence_mc<M: Model + ?Sized>(
    model: &M,
    seg: &Segment<'_>,
    particles: &[ParamVector],
    log_weights: Option<&[f64]>,
    y_new: f64,
) -> f64 {
    let terms: Vec<f64> = match log_weights {
        None => particles
            .iter()
            .map(|p| model.log_predictive(seg, y_new, p))
            .collect(),
        Some(lw) => particles
            .iter()
            .zip(lw)
            .map(|(p, w)| w + model.log_predictive(seg, y_new, p))
            .collect(),
    };
    let lse = log_sum_exp(&terms);
    if log_weights.is_some() {
        lse
    } else {
        lse - (particles.len() as f64).ln()
    }
}

/// Advances the joints by one observation given per-hypothesis log evidences.
///
/// Returns the log joint of the new changepoint hypothesis, which the caller
/// appends.
pub fn recursion_update(log_joints: &mut [f64], evidences: &[f64], hazard: &HazardSpec) -> f64 {
    let grown: Vec<f64> = log_joints
        .iter()
        .zip(evidences)
        .map(|(lj, ev)| lj + ev)
        .collect();
    let spawn = log_sum_exp(&grown) + hazard.log_p_cp();
    let cont = hazard.log_continue();
    for (lj, g) in log_joints.iter_mut().zip(grown) {
        *lj = g + cont;
    }
    spawn
}

/// Indices of hypotheses to keep: mass at least `mass_floor` and among the
/// `max_hypotheses` heaviest. The last entry is always kept.
pub fn prune_indices(log_joints: &[f64], policy: &PrunePolicy) -> Vec<usize> {
    let n = log_joints.len();
    if n == 0 {
        return Vec::new();
    }
    let total = log_sum_exp(log_joints);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| log_joints[b].total_cmp(&log_joints[a]).then(a.cmp(&b)));
    let log_floor = policy.mass_floor.ln();
    let mut keep = vec![false; n];
    for (rank, &i) in order.iter().enumerate() {
        let mass = log_joints[i] - total;
        keep[i] =
            rank < policy.max_hypotheses && mass >= log_floor && log_joints[i] > f64::NEG_INFINITY;
    }
    keep[n - 1] = true;
    (0..n).filter(|&i| keep[i]).collect()
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepTimings {
    pub evidence_ms: f64,
    pub update_ms: f64,
    pub predict_ms: f64,
}

/// Everything the detector reports for one observation.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    /// 1-based index `m` of the observation just consumed.
    pub t: usize,
    pub y: f64,
    pub alert: bool,
    /// Interval the observation was checked against.
    pub prediction: PredictiveSummary,
    /// Normalized `p(τ | y_{1:m})` over live hypotheses, by increasing `τ`.
    pub posterior: Vec<(usize, f64)>,
    pub timings: StepTimings,
    pub fallbacks: usize,
}

impl StepRecord {
    /// The `k` most probable starts, most probable first.
    pub fn top_posterior(&self, k: usize) -> Vec<(usize, f64)> {
        let mut v = self.posterior.clone();
        v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        v.truncate(k);
        v
    }

    pub fn map_tau(&self) -> usize {
        self.top_posterior(1)[0].0
    }
}

/// Moves a hypothesis's particles to `p(θ | seg)` with the configured
/// sampler, starting from its current particles. `m` labels the random stream.
///
/// Returns the number of particle-iterations that fell back to the gradient
/// direction.
pub fn update_hypothesis<M: Model + ?Sized>(
    model: &M,
    config: &DetectorConfig,
    seg: Segment<'_>,
    h: &mut Hypothesis,
    m: u64,
) -> Result<usize> {
    let cfg = config;
    match cfg.sampler {
        Sampler::Svn | Sampler::Svgd => {
            let target = PosteriorTarget::new(model, seg);
            let transport = if cfg.sampler == Sampler::Svn {
                TransportConfig::newton(cfg.iterations, cfg.step)
            } else {
                TransportConfig::gradient(cfg.iterations, cfg.step)
            };
            let (ens, stats) = svn_run(&h.ensemble, &target, &transport)?;
            h.ensemble = ens;
            Ok(stats.fallbacks)
        }
        Sampler::Smc => {
            let target = PosteriorTarget::new(model, seg);
            let init = h.map.clone().unwrap_or_else(|| h.ensemble.mean());
            let fit = laplace_fit(&target, &init)?;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(h.ensemble.seed, &[m]));
            let mut weighted = importance_step(&target, &fit, cfg.particles, &mut rng)?;
            if weighted.ess() < cfg.particles as f64 / 2.0 {
                weighted = weighted.resample(cfg.particles, &mut rng);
            }
            let WeightedEnsemble {
                particles,
                log_weights,
            } = weighted;
            let uniform = log_weights.iter().all(|w| *w == log_weights[0]);
            h.ensemble = Ensemble::new(particles, h.ensemble.seed)?;
            h.log_weights = if uniform { None } else { Some(log_weights) };
            h.map = Some(fit.map);
            Ok(0)
        }
        Sampler::Exact => {
            let cf = model.closed_form().ok_or(Error::Unsupported(
                "exact sampling needs a closed-form model",
            ))?;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(h.ensemble.seed, &[m]));
            let particles = (0..cfg.particles)
                .map(|_| cf.sample_posterior(&seg, &mut rng))
                .collect();
            h.ensemble = Ensemble::new(particles, h.ensemble.seed)?;
            Ok(0)
        }
    }
}

/// Detector state at time `m`.
#[derive(Clone)]
pub struct DetectorState<M> {
    model: M,
    config: DetectorConfig,
    observations: Vec<f64>,
    hypotheses: Vec<Hypothesis>,
    prediction: PredictiveSummary,
}

fn segment_of(observations: &[f64], tau: usize) -> Segment<'_> {
    let left = if tau >= 2 {
        Some(observations[tau - 2])
    } else {
        None
    };
    Segment::new(tau, &observations[tau - 1..], left)
}

impl<M: Model> DetectorState<M> {
    pub fn new(model: M, config: DetectorConfig) -> Result<Self> {
        config.validate()?;
        if (config.sampler == Sampler::Exact || config.evidence == EvidenceMode::Exact)
            && model.closed_form().is_none()
        {
            return Err(Error::Unsupported(
                "exact sampling or evidence needs a closed-form model",
            ));
        }
        let first = Hypothesis::fresh(&model, 1, 0.0, &config)?;
        let mut state = Self {
            model,
            config,
            observations: Vec::new(),
            hypotheses: vec![first],
            prediction: PredictiveSummary {
                mean: 0.0,
                lower: 0.0,
                upper: 0.0,
                samples: None,
            },
        };
        state.prediction = state.predict()?;
        Ok(state)
    }

    pub fn model(&self) -> &M {
        &self.model
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    /// Swaps the configuration used by subsequent steps. Live hypotheses keep
    /// their particles; the pending prediction is not recomputed.
    pub fn reconfigure(&mut self, config: DetectorConfig) -> Result<()> {
        config.validate()?;
        if (config.sampler == Sampler::Exact || config.evidence == EvidenceMode::Exact)
            && self.model.closed_form().is_none()
        {
            return Err(Error::Unsupported(
                "exact sampling or evidence needs a closed-form model",
            ));
        }
        self.config = config;
        Ok(())
    }

    /// Number of observations consumed.
    pub fn time(&self) -> usize {
        self.observations.len()
    }

    pub fn observations(&self) -> &[f64] {
        &self.observations
    }

    pub fn hypotheses(&self) -> &[Hypothesis] {
        &self.hypotheses
    }

    /// Interval for the next observation.
    pub fn prediction(&self) -> &PredictiveSummary {
        &self.prediction
    }

    pub fn segment(&self, tau: usize) -> Segment<'_> {
        segment_of(&self.observations, tau)
    }

    /// Normalized changepoint posterior by increasing `τ`.
    pub fn posterior(&self) -> Vec<(usize, f64)> {
        let lj: Vec<f64> = self.hypotheses.iter().map(|h| h.log_joint).collect();
        let total = log_sum_exp(&lj);
        self.hypotheses
            .iter()
            .map(|h| (h.tau, (h.log_joint - total).exp()))
            .collect()
    }

    /// Total `log p(y_{1:m})` carried by the live hypotheses.
    pub fn log_evidence(&self) -> f64 {
        let lj: Vec<f64> = self.hypotheses.iter().map(|h| h.log_joint).collect();
        log_sum_exp(&lj)
    }

    /// One predictive draw: `τ` from the posterior, a particle of that
    /// hypothesis, then the model's predictive.
    pub fn predictive_sample(&self, rng: &mut dyn RngCore) -> f64 {
        let post = self.posterior();
        let u: f64 = rng.random();
        let mut cum = 0.0;
        let idx = post
            .iter()
            .position(|(_, p)| {
                cum += p;
                cum > u
            })
            .unwrap_or_else(|| {
                post.iter()
                    .rposition(|(_, p)| *p > 0.0)
                    .unwrap_or(post.len() - 1)
            });
        let h = &self.hypotheses[idx];
        let theta = h.pick_particle(rng);
        self.model
            .sample_predictive(&self.segment(h.tau), theta, rng)
    }

    fn predict(&self) -> Result<PredictiveSummary> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
            self.config.seed,
            &[u64::MAX, self.time() as u64],
        ));
        let draws: Vec<f64> = (0..self.config.predictive_draws)
            .map(|_| self.predictive_sample(&mut rng))
            .collect();
        if draws.iter().any(|y| !y.is_finite()) {
            return Err(Error::NonFinite {
                what: "predictive draw",
            });
        }
        let mut summary = summarize(&draws, self.config.lower_level, self.config.upper_level);
        if self.config.retain_samples {
            summary.samples = Some(draws);
        }
        Ok(summary)
    }

    fn evidences(&self, y_new: f64) -> Vec<f64> {
        let exact = self.config.evidence == EvidenceMode::Exact;
        self.hypotheses
            .par_iter()
            .map(|h| {
                let seg = self.segment(h.tau);
                if exact {
                    let cf = self.model.closed_form().expect("checked at construction");
                    cf.log_marginal_predictive(&seg, y_new)
                } else {
                    evidence_mc(
                        &self.model,
                        &seg,
                        &h.ensemble.particles,
                        h.log_weights.as_deref(),
                        y_new,
                    )
                }
            })
            .collect()
    }

    /// Consumes one observation.
    pub fn step(&mut self, y_new: f64) -> Result<StepRecord> {
        let t = self.time() + 1;
        let prediction = self.prediction.clone();
        let alert =
            t > self.config.min_segment && detect(y_new, &prediction, self.config.sidedness);

        let clock = Instant::now();
        let evidences = self.evidences(y_new);
        let mut log_joints: Vec<f64> = self.hypotheses.iter().map(|h| h.log_joint).collect();
        let spawn = recursion_update(&mut log_joints, &evidences, &self.config.hazard);
        for (h, lj) in self.hypotheses.iter_mut().zip(log_joints) {
            h.log_joint = lj;
        }
        let evidence_ms = clock.elapsed().as_secs_f64() * 1e3;

        let clock = Instant::now();
        self.observations.push(y_new);
        let fresh = Hypothesis::fresh(&self.model, t + 1, spawn, &self.config)?;
        self.hypotheses.push(fresh);
        self.prune();
        if !self.log_evidence().is_finite() {
            return Err(Error::MassVanished { t });
        }
        let mut continuing = std::mem::take(&mut self.hypotheses);
        let fresh = continuing.pop().expect("fresh hypothesis present");
        let outcomes: Vec<Result<usize>> = continuing
            .par_iter_mut()
            .map(|h| {
                update_hypothesis(
                    &self.model,
                    &self.config,
                    segment_of(&self.observations, h.tau),
                    h,
                    t as u64,
                )
            })
            .collect();
        let mut fallbacks = 0;
        for (h, res) in continuing.iter_mut().zip(outcomes) {
            match res {
                Ok(f) => fallbacks += f,
                Err(e) => {
                    log::warn!("hypothesis τ={} dropped at m={t}: {e}", h.tau);
                    h.log_joint = f64::NEG_INFINITY;
                }
            }
        }
        continuing.retain(|h| h.log_joint > f64::NEG_INFINITY);
        continuing.push(fresh);
        self.hypotheses = continuing;
        if !self.log_evidence().is_finite() {
            return Err(Error::MassVanished { t });
        }
        let update_ms = clock.elapsed().as_secs_f64() * 1e3;

        let clock = Instant::now();
        self.prediction = self.predict()?;
        let predict_ms = clock.elapsed().as_secs_f64() * 1e3;

        Ok(StepRecord {
            t,
            y: y_new,
            alert,
            prediction,
            posterior: self.posterior(),
            timings: StepTimings {
                evidence_ms,
                update_ms,
                predict_ms,
            },
            fallbacks,
        })
    }

    /// Applies the prune policy to the live hypotheses.
    pub fn prune(&mut self) {
        let lj: Vec<f64> = self.hypotheses.iter().map(|h| h.log_joint).collect();
        let keep = prune_indices(&lj, &self.config.prune);
        if keep.len() == self.hypotheses.len() {
            return;
        }
        let mut kept = Vec::with_capacity(keep.len());
        let mut it = keep.into_iter().peekable();
        for (i, h) in std::mem::take(&mut self.hypotheses).into_iter().enumerate() {
            if it.peek() == Some(&i) {
                kept.push(h);
                it.next();
            }
        }
        self.hypotheses = kept;
    }

    /// Runs the detector over a whole series.
    pub fn run(&mut self, ys: &[f64]) -> Result<Vec<StepRecord>> {
        ys.iter().map(|&y| self.step(y)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{GaussianMeanModel, GaussianPrior};

    fn gaussian() -> GaussianMeanModel {
        GaussianMeanModel::new(GaussianPrior::new(0.0, 4.0).unwrap(), 1.0).unwrap()
    }

    #[test]
    fn quantile_and_summary_examples() {
        let s = summarize(&[3.0, 1.0, 2.0], 0.5, 0.5);
        assert_eq!(s.lower, 2.0);
        assert_eq!(s.mean, 2.0);
        let c = summarize(&[4.0; 7], 0.025, 0.975);
        assert_eq!((c.mean, c.lower, c.upper), (4.0, 4.0, 4.0));
    }

    #[test]
    fn detect_boundaries() {
        let s = PredictiveSummary {
            mean: 0.0,
            lower: -1.0,
            upper: 1.0,
            samples: None,
        };
        assert!(!detect(0.5, &s, Sidedness::TwoSided));
        assert!(!detect(1.0, &s, Sidedness::OneSidedUpper));
        assert!(detect(-1.5, &s, Sidedness::TwoSided));
        assert!(!detect(-1.5, &s, Sidedness::OneSidedUpper));
    }

    #[test]
    fn prune_examples() {
        let policy = PrunePolicy::default();
        let lj = [0.999f64.ln(), 1e-9f64.ln(), 0.5f64.ln()];
        assert_eq!(prune_indices(&lj, &policy), vec![0, 2]);
        let lj = [0.999f64.ln(), 1e-9f64.ln()];
        assert_eq!(
            prune_indices(&lj, &policy),
            vec![0, 1],
            "newest always kept"
        );
        let geometric: Vec<f64> = (0..100).map(|i| -(i as f64) * 0.1).collect();
        let kept = prune_indices(
            &geometric,
            &PrunePolicy {
                max_hypotheses: 10,
                mass_floor: 0.0,
            },
        );
        assert_eq!(kept, (0..10).chain([99]).collect::<Vec<_>>());
    }

    #[test]
    fn first_step_spawns_one_hypothesis() {
        let cfg = DetectorConfig {
            particles: 10,
            predictive_draws: 10,
            iterations: 2,
            ..DetectorConfig::default()
        };
        let mut state = DetectorState::new(gaussian(), cfg).unwrap();
        assert_eq!(state.posterior(), vec![(1, 1.0)]);
        let rec = state.step(0.3).unwrap();
        assert_eq!(
            rec.posterior.iter().map(|p| p.0).collect::<Vec<_>>(),
            vec![1, 2]
        );
        assert!((rec.posterior[1].1 - 0.01).abs() < 1e-12);
    }

    #[test]
    fn zero_hazard_keeps_all_mass_on_first_segment() {
        let cfg = DetectorConfig {
            hazard: HazardSpec::never(),
            particles: 8,
            predictive_draws: 8,
            iterations: 1,
            ..DetectorConfig::default()
        };
        let mut state = DetectorState::new(gaussian(), cfg).unwrap();
        for y in [0.1, 5.0, -3.0, 0.4] {
            let rec = state.step(y).unwrap();
            assert_eq!(rec.posterior[0], (1, 1.0));
        }
    }
}
