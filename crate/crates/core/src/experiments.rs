//! Experiment runners: changepoint scoring, the synthetic Hawkes benchmark,
//! the posterior-tracking MSE study and the LSTM sinusoid validation.

use std::path::PathBuf;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;

use crate::blstm::{self, BlstmModel};
use crate::bocpd::{
    update_hypothesis, DetectorConfig, DetectorState, Hypothesis, Sampler, Sidedness,
};
use crate::error::{Error, Result};
use crate::hawkes::{synth_benchmark, HawkesModel, SynthTrajectory};
use crate::mcmc::{covariance_trace, rw_metropolis, ChainConfig};
use crate::model::{log_posterior_unnormalized, GaussianPrior, Model, Segment};
use crate::numeric::{derive_seed, weighted_mean_and_covariance};
use crate::smc::laplace_fit;
use crate::svn::{svn_run, Ensemble, PosteriorTarget, TransportConfig};

/// Greedy one-to-one matching of alerts to true changepoints.
///
/// Each truth takes the earliest unmatched alert in `[truth, truth + window]`.
/// Alerts at or before `burn_in` are ignored. Returns `(false positives, false negatives)`.
pub fn score_changepoints(
    alerts: &[usize],
    truths: &[usize],
    window: usize,
    burn_in: usize,
) -> (usize, usize) {
    let alerts: Vec<usize> = alerts.iter().copied().filter(|&a| a > burn_in).collect();
    let mut used = vec![false; alerts.len()];
    let mut missed = 0;
    for &truth in truths {
        let hit = alerts
            .iter()
            .enumerate()
            .find(|&(i, &a)| !used[i] && a >= truth && a <= truth + window);
        match hit {
            Some((i, _)) => used[i] = true,
            None => missed += 1,
        }
    }
    (used.iter().filter(|u| !**u).count(), missed)
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Clone, Debug)]
pub struct SynthBenchConfig {
    pub runs: usize,
    /// Run `r` uses seed `seed + r` for both data and detector.
    pub seed: u64,
    pub window: usize,
    pub prior: GaussianPrior,
    pub detector: DetectorConfig,
}

impl SynthBenchConfig {
    /// Thirty runs, `N_θ = N_y = 100`, 30 iterations, `H = 100`, two-sided 95% interval.
    pub fn standard(sampler: Sampler, seed: u64) -> Self {
        Self {
            runs: 30,
            seed,
            window: 3,
            prior: GaussianPrior::standard(),
            detector: DetectorConfig {
                sampler,
                sidedness: Sidedness::TwoSided,
                ..DetectorConfig::default()
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutcome {
    pub run: usize,
    pub seed: u64,
    pub alerts: Vec<usize>,
    pub truths: Vec<usize>,
    pub false_positives: usize,
    pub false_negatives: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkReport {
    pub runs: Vec<RunOutcome>,
    pub fp_mean: f64,
    pub fp_std: f64,
    pub fn_mean: f64,
    pub fn_std: f64,
}

impl BenchmarkReport {
    pub fn from_runs(runs: Vec<RunOutcome>) -> Self {
        let fp: Vec<f64> = runs.iter().map(|r| r.false_positives as f64).collect();
        let fneg: Vec<f64> = runs.iter().map(|r| r.false_negatives as f64).collect();
        let (fp_mean, fp_std) = mean_std(&fp);
        let (fn_mean, fn_std) = mean_std(&fneg);
        Self {
            runs,
            fp_mean,
            fp_std,
            fn_mean,
            fn_std,
        }
    }
}

/// Detects changepoints on one trajectory and scores the alerts.
pub fn score_run(
    traj: &SynthTrajectory,
    model: HawkesModel,
    detector: DetectorConfig,
    window: usize,
) -> Result<(Vec<usize>, usize, usize)> {
    let burn_in = detector.min_segment;
    let mut state = DetectorState::new(model, detector)?;
    let records = state.run(&traj.events)?;
    let alerts: Vec<usize> = records.iter().filter(|r| r.alert).map(|r| r.t).collect();
    let (fp, fneg) = score_changepoints(&alerts, &traj.changepoints, window, burn_in);
    Ok((alerts, fp, fneg))
}

pub fn run_synth_benchmark(cfg: &SynthBenchConfig) -> Result<BenchmarkReport> {
    let runs: Vec<RunOutcome> = (0..cfg.runs)
        .into_par_iter()
        .map(|r| {
            let seed = cfg.seed.wrapping_add(r as u64);
            let traj = synth_benchmark(&mut ChaCha8Rng::seed_from_u64(seed));
            let detector = DetectorConfig {
                seed,
                ..cfg.detector.clone()
            };
            let (alerts, fp, fneg) =
                score_run(&traj, HawkesModel::new(cfg.prior), detector, cfg.window)?;
            Ok(RunOutcome {
                run: r,
                seed,
                alerts,
                truths: traj.changepoints.clone(),
                false_positives: fp,
                false_negatives: fneg,
            })
        })
        .collect::<Result<_>>()?;
    Ok(BenchmarkReport::from_runs(runs))
}

#[derive(Clone, Debug)]
pub struct MseStudyConfig {
    /// Seed of the fixed synthetic trajectory.
    pub trajectory_seed: u64,
    pub seed: u64,
    pub svn_grid: Vec<usize>,
    pub smc_grid: Vec<usize>,
    /// 1-based observation indices at which traces are compared.
    pub checkpoints: Vec<usize>,
    pub repetitions: usize,
    pub mcmc_steps: usize,
    pub iterations: usize,
    pub step: f64,
    /// Directory holding cached oracle traces.
    pub oracle_cache: Option<PathBuf>,
}

impl Default for MseStudyConfig {
    fn default() -> Self {
        Self {
            trajectory_seed: 0,
            seed: 0,
            svn_grid: vec![10, 30, 50, 100, 300, 500, 1000],
            smc_grid: vec![10, 30, 50, 100, 300, 500, 1000, 5000, 10000],
            checkpoints: vec![15, 25, 35],
            repetitions: 30,
            mcmc_steps: 500_000,
            iterations: 30,
            step: 0.5,
            oracle_cache: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MseRow {
    pub sampler: Sampler,
    pub particles: usize,
    pub checkpoint: usize,
    pub oracle_trace: f64,
    /// Mean of the squared trace errors over repetitions.
    pub mse: f64,
    /// Variance of the squared trace errors over repetitions.
    pub variance: f64,
}

fn checkpoint_segment(traj: &SynthTrajectory, checkpoint: usize) -> Result<(usize, Segment<'_>)> {
    if checkpoint == 0 || checkpoint > traj.events.len() {
        return Err(Error::Config(format!(
            "checkpoint {checkpoint} outside 1..={}",
            traj.events.len()
        )));
    }
    let start = traj.segment_start(checkpoint);
    let left = (start >= 2).then(|| traj.events[start - 2]);
    Ok((
        start,
        Segment::new(start, &traj.events[start - 1..checkpoint], left),
    ))
}

/// Covariance trace of the true-segment posterior at `checkpoint`, from a
/// random-walk Metropolis chain started at the Laplace mode.
pub fn oracle_trace(
    traj: &SynthTrajectory,
    model: &HawkesModel,
    checkpoint: usize,
    steps: usize,
    seed: u64,
) -> Result<f64> {
    let (_, seg) = checkpoint_segment(traj, checkpoint)?;
    let target = PosteriorTarget::new(model, seg);
    let fit = laplace_fit(&target, &DVector::zeros(model.dim()))?;
    let hint = (fit.cov.trace() / model.dim() as f64).sqrt();
    let cfg = ChainConfig::with_defaults(
        steps,
        model.dim(),
        hint,
        derive_seed(seed, &[checkpoint as u64]),
    )?;
    let chain = rw_metropolis(
        |theta| log_posterior_unnormalized(model, &seg, theta).unwrap_or(f64::NEG_INFINITY),
        &fit.map,
        &cfg,
    )?;
    Ok(covariance_trace(&chain.samples))
}

fn cached_oracle_trace(
    cfg: &MseStudyConfig,
    traj: &SynthTrajectory,
    model: &HawkesModel,
    checkpoint: usize,
) -> Result<f64> {
    let path = cfg.oracle_cache.as_ref().map(|dir| {
        dir.join(format!(
            "oracle-t{}-c{}-n{}-s{}.txt",
            cfg.trajectory_seed, checkpoint, cfg.mcmc_steps, cfg.seed
        ))
    });
    if let Some(p) = &path {
        if let Ok(text) = std::fs::read_to_string(p) {
            if let Ok(v) = text.trim().parse::<f64>() {
                return Ok(v);
            }
        }
    }
    let trace = oracle_trace(traj, model, checkpoint, cfg.mcmc_steps, cfg.seed)?;
    if let Some(p) = &path {
        if let Some(dir) = p.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(p, format!("{trace}\n"))?;
    }
    Ok(trace)
}

/// Tracks the true-segment posterior from its first observation to
/// `checkpoint`, one observation at a time, and returns the covariance trace.
#[allow(clippy::too_many_arguments)]
pub fn tracked_trace(
    traj: &SynthTrajectory,
    model: &HawkesModel,
    checkpoint: usize,
    sampler: Sampler,
    particles: usize,
    iterations: usize,
    step: f64,
    seed: u64,
) -> Result<f64> {
    let (start, _) = checkpoint_segment(traj, checkpoint)?;
    let cfg = DetectorConfig {
        sampler,
        particles,
        iterations,
        step,
        seed,
        ..DetectorConfig::default()
    };
    let mut h = Hypothesis::fresh(model, start, 0.0, &cfg)?;
    for j in start..=checkpoint {
        let left = (start >= 2).then(|| traj.events[start - 2]);
        let seg = Segment::new(start, &traj.events[start - 1..j], left);
        update_hypothesis(model, &cfg, seg, &mut h, j as u64)?;
    }
    Ok(match &h.log_weights {
        Some(lw) => {
            let w: Vec<f64> = lw.iter().map(|v| v.exp()).collect();
            weighted_mean_and_covariance(&h.ensemble.particles, &w)
                .1
                .trace()
        }
        None => h.ensemble.covariance().trace(),
    })
}

pub fn run_mse_study(cfg: &MseStudyConfig) -> Result<Vec<MseRow>> {
    if cfg.repetitions == 0 {
        return Err(Error::Config(
            "the study needs at least one repetition".into(),
        ));
    }
    let traj = synth_benchmark(&mut ChaCha8Rng::seed_from_u64(cfg.trajectory_seed));
    let model = HawkesModel::standard();
    let mut rows = Vec::new();
    for &checkpoint in &cfg.checkpoints {
        let oracle = cached_oracle_trace(cfg, &traj, &model, checkpoint)?;
        for (sampler, grid) in [(Sampler::Svn, &cfg.svn_grid), (Sampler::Smc, &cfg.smc_grid)] {
            for &n in grid {
                let errors: Vec<f64> = (0..cfg.repetitions)
                    .into_par_iter()
                    .map(|r| {
                        let seed = derive_seed(cfg.seed, &[checkpoint as u64, n as u64, r as u64]);
                        let trace = tracked_trace(
                            &traj,
                            &model,
                            checkpoint,
                            sampler,
                            n,
                            cfg.iterations,
                            cfg.step,
                            seed,
                        )?;
                        Ok((trace - oracle).powi(2))
                    })
                    .collect::<Result<_>>()?;
                let (mse, sd) = mean_std(&errors);
                rows.push(MseRow {
                    sampler,
                    particles: n,
                    checkpoint,
                    oracle_trace: oracle,
                    mse,
                    variance: sd * sd,
                });
            }
        }
    }
    Ok(rows)
}

#[derive(Clone, Debug)]
pub struct SinusoidConfig {
    pub points: usize,
    pub noise_sd: f64,
    pub sigma: f64,
    pub particles: usize,
    pub iterations: usize,
    pub step: f64,
    /// Standard deviation of the particle cloud placed around the mode.
    pub init_spread: f64,
    pub restarts: usize,
    /// Predictive noise draws per particle when forming the band.
    pub draws_per_particle: usize,
    pub seed: u64,
}

impl Default for SinusoidConfig {
    fn default() -> Self {
        Self {
            points: 51,
            noise_sd: 0.15,
            sigma: 0.3,
            particles: 30,
            iterations: 100,
            step: 0.2,
            init_spread: 0.01,
            restarts: 5,
            draws_per_particle: 40,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SinusoidReport {
    /// Index `j` of every reconstructed point.
    pub index: Vec<usize>,
    pub observed: Vec<f64>,
    pub clean: Vec<f64>,
    pub mean: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub mode: Vec<f64>,
    pub rmse_mean: f64,
    pub rmse_mode: f64,
    /// Fraction of observations inside the 95% predictive band.
    pub coverage: f64,
}

fn rmse(a: &[f64], b: &[f64]) -> f64 {
    (a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64).sqrt()
}

/// Fits the LSTM to a noisy sinusoid: mode by damped Gauss–Newton with
/// restarts, then Stein variational Newton from a tight cloud around it.
pub fn run_sinusoid_validation(cfg: &SinusoidConfig) -> Result<SinusoidReport> {
    if cfg.points < 3 {
        return Err(Error::Config(
            "the sinusoid needs at least three points".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let data = blstm::sinusoid_data(cfg.points, cfg.noise_sd, &mut rng);
    let ys = &data[1..];
    let model = BlstmModel::new(GaussianPrior::standard(), cfg.sigma)?;
    let seg = Segment::from_start(ys);
    let target = PosteriorTarget::new(&model, seg);

    let mut best: Option<(f64, DVector<f64>)> = None;
    for r in 0..cfg.restarts.max(1) {
        let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[1, r as u64]));
        let init = DVector::from_fn(blstm::PARAMS, |_, _| {
            let z: f64 = StandardNormal.sample(&mut init_rng);
            0.5 * z
        });
        let fit = laplace_fit(&target, &init)?;
        let lp = log_posterior_unnormalized(&model, &seg, &fit.map)?;
        if best.as_ref().is_none_or(|(b, _)| lp > *b) {
            best = Some((lp, fit.map));
        }
    }
    let (_, map) = best.expect("at least one restart");

    let spread = Normal::new(0.0, cfg.init_spread).map_err(|e| Error::Config(e.to_string()))?;
    let ens = Ensemble::from_fn(cfg.particles, derive_seed(cfg.seed, &[2]), |rng| {
        DVector::from_fn(blstm::PARAMS, |i, _| map[i] + spread.sample(rng))
    })?;
    let (ens, _) = svn_run(
        &ens,
        &target,
        &TransportConfig::newton(cfg.iterations, cfg.step),
    )?;

    let n = ys.len();
    let curves: Vec<Vec<f64>> = ens
        .particles
        .iter()
        .map(|p| blstm::forward_many(&ys[..n - 1], p.as_slice()))
        .collect();
    let mode = blstm::forward_many(&ys[..n - 1], map.as_slice());
    let mut band_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[3]));
    let mut mean = Vec::with_capacity(n);
    let mut lower = Vec::with_capacity(n);
    let mut upper = Vec::with_capacity(n);
    for i in 0..n {
        let centers: Vec<f64> = curves.iter().map(|c| c[i]).collect();
        mean.push(centers.iter().sum::<f64>() / centers.len() as f64);
        let mut draws = Vec::with_capacity(centers.len() * cfg.draws_per_particle);
        for &c in &centers {
            for _ in 0..cfg.draws_per_particle {
                let z: f64 = StandardNormal.sample(&mut band_rng);
                draws.push(c + cfg.sigma * z);
            }
        }
        let s = crate::bocpd::summarize(&draws, 0.025, 0.975);
        lower.push(s.lower);
        upper.push(s.upper);
    }
    let index: Vec<usize> = (1..cfg.points).collect();
    let clean: Vec<f64> = index.iter().map(|&j| (j as f64).sin()).collect();
    let inside = ys
        .iter()
        .zip(lower.iter().zip(&upper))
        .filter(|(y, (l, u))| *y >= *l && *y <= *u)
        .count();
    Ok(SinusoidReport {
        rmse_mean: rmse(&mean, &clean),
        rmse_mode: rmse(&mode, &clean),
        coverage: inside as f64 / n as f64,
        index,
        observed: ys.to_vec(),
        clean,
        mean,
        lower,
        upper,
        mode,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scoring_examples() {
        let truths = [10, 20, 30, 40, 50, 60];
        assert_eq!(score_changepoints(&truths, &truths, 3, 5), (0, 0));
        assert_eq!(score_changepoints(&[], &truths, 3, 5), (0, 6));
        assert_eq!(score_changepoints(&[11, 12], &[10], 3, 5), (1, 0));
        assert_eq!(score_changepoints(&[3, 14], &[10], 3, 5), (1, 1));
    }

    #[test]
    fn mean_std_population() {
        let (m, s) = mean_std(&[0.0, 1.0, 1.0, 0.0]);
        assert_eq!((m, s), (0.5, 0.5));
    }
}
