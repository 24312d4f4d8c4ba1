//! Flat `key = value` run configuration shared by every subcommand.

use std::path::{Path, PathBuf};

use svocd::bocpd::{DetectorConfig, EvidenceMode, HazardSpec, PrunePolicy, Sampler, Sidedness};
use svocd::{Error, GaussianPrior, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Hawkes,
    Blstm,
    GaussianTest,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelKind,
    pub sampler: Sampler,
    pub evidence: EvidenceMode,
    pub particles: usize,
    pub predictive_draws: usize,
    pub iterations: usize,
    pub step: f64,
    /// Expected run length `H`; infinite means no changepoints.
    pub hazard: f64,
    /// Interval settings; `None` takes the model default from [`RunConfig::interval`].
    pub lower_level: Option<f64>,
    pub upper_level: Option<f64>,
    pub sidedness: Option<Sidedness>,
    pub prune_k: usize,
    pub mass_floor: f64,
    pub min_segment: usize,
    pub seed: u64,
    pub prior_mean: f64,
    pub prior_variance: f64,
    /// Observation noise standard deviation of the LSTM likelihood.
    pub sigma: f64,
    /// Observation noise variance of the Gaussian test model.
    pub noise_variance: f64,
    pub input: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub rolling_window: usize,
    pub standardize: bool,
    pub top_k: usize,
    pub timings: bool,
    pub runs: usize,
    pub match_window: usize,
    pub svn_grid: Vec<usize>,
    pub smc_grid: Vec<usize>,
    pub checkpoints: Vec<usize>,
    pub repetitions: usize,
    pub mcmc_steps: usize,
    pub trajectory_seed: u64,
    pub oracle_cache: Option<PathBuf>,
    pub points: usize,
    pub noise_sd: f64,
    pub init_spread: f64,
    pub restarts: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Hawkes,
            sampler: Sampler::Svn,
            evidence: EvidenceMode::MonteCarlo,
            particles: 100,
            predictive_draws: 100,
            iterations: 30,
            step: 0.5,
            hazard: 100.0,
            lower_level: None,
            upper_level: None,
            sidedness: None,
            prune_k: 50,
            mass_floor: 1e-6,
            min_segment: 5,
            seed: 0,
            prior_mean: 0.0,
            prior_variance: 1.0,
            sigma: 0.3,
            noise_variance: 1.0,
            input: None,
            out: None,
            rolling_window: 1,
            standardize: false,
            top_k: 5,
            timings: false,
            runs: 30,
            match_window: 3,
            svn_grid: vec![10, 30, 50, 100, 300, 500, 1000],
            smc_grid: vec![10, 30, 50, 100, 300, 500, 1000, 5000, 10000],
            checkpoints: vec![15, 25, 35],
            repetitions: 30,
            mcmc_steps: 500_000,
            trajectory_seed: 0,
            oracle_cache: None,
            points: 51,
            noise_sd: 0.15,
            init_spread: 0.01,
            restarts: 5,
        }
    }
}

fn bad(key: &str, value: &str) -> Error {
    Error::Config(format!("invalid value {value:?} for {key}"))
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| bad(key, value))
}

fn list(key: &str, value: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| num(key, s))
        .collect()
}

fn flag(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(bad(key, value)),
    }
}

impl RunConfig {
    /// Defaults for a subcommand. The sinusoid validation uses 30 particles,
    /// 100 iterations and 40 predictive draws per particle. The synthetic
    /// benchmark alerts on both tails.
    pub fn for_command(command: &str) -> Self {
        let base = Self::default();
        match command {
            "validate-blstm" => Self {
                model: ModelKind::Blstm,
                particles: 30,
                iterations: 100,
                step: 0.2,
                predictive_draws: 40,
                ..base
            },
            "bench-synth" => Self {
                lower_level: Some(0.025),
                upper_level: Some(0.975),
                sidedness: Some(Sidedness::TwoSided),
                ..base
            },
            _ => base,
        }
    }

    /// Sets one field by its configuration key. Dashes and underscores are interchangeable.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let key = key.trim().replace('_', "-");
        let k = key.as_str();
        match k {
            "model" => {
                self.model = match value {
                    "hawkes" => ModelKind::Hawkes,
                    "blstm" => ModelKind::Blstm,
                    "gaussian-test" => ModelKind::GaussianTest,
                    _ => return Err(bad(k, value)),
                }
            }
            "sampler" => {
                self.sampler = match value {
                    "svn" => Sampler::Svn,
                    "svgd" => Sampler::Svgd,
                    "smc" => Sampler::Smc,
                    "exact" => Sampler::Exact,
                    _ => return Err(bad(k, value)),
                }
            }
            "evidence" => {
                self.evidence = match value {
                    "mc" | "monte-carlo" => EvidenceMode::MonteCarlo,
                    "exact" => EvidenceMode::Exact,
                    _ => return Err(bad(k, value)),
                }
            }
            "particles" => self.particles = num(k, value)?,
            "predictive-draws" => self.predictive_draws = num(k, value)?,
            "iterations" => self.iterations = num(k, value)?,
            "step" => self.step = num(k, value)?,
            "hazard" => {
                self.hazard = match value {
                    "inf" | "never" => f64::INFINITY,
                    _ => num(k, value)?,
                }
            }
            "lower-level" => self.lower_level = Some(num(k, value)?),
            "upper-level" => self.upper_level = Some(num(k, value)?),
            "sidedness" => {
                self.sidedness = Some(match value {
                    "two-sided" => Sidedness::TwoSided,
                    "upper" | "one-sided-upper" => Sidedness::OneSidedUpper,
                    _ => return Err(bad(k, value)),
                })
            }
            "prune-k" => self.prune_k = num(k, value)?,
            "mass-floor" => self.mass_floor = num(k, value)?,
            "min-segment" => self.min_segment = num(k, value)?,
            "seed" => self.seed = num(k, value)?,
            "prior-mean" => self.prior_mean = num(k, value)?,
            "prior-variance" => self.prior_variance = num(k, value)?,
            "sigma" => self.sigma = num(k, value)?,
            "noise-variance" => self.noise_variance = num(k, value)?,
            "input" => self.input = Some(PathBuf::from(value)),
            "out" => self.out = Some(PathBuf::from(value)),
            "rolling-window" => self.rolling_window = num(k, value)?,
            "standardize" => self.standardize = flag(k, value)?,
            "top-k" => self.top_k = num(k, value)?,
            "timings" => self.timings = flag(k, value)?,
            "runs" => self.runs = num(k, value)?,
            "match-window" => self.match_window = num(k, value)?,
            "svn-grid" => self.svn_grid = list(k, value)?,
            "smc-grid" => self.smc_grid = list(k, value)?,
            "checkpoints" => self.checkpoints = list(k, value)?,
            "repetitions" => self.repetitions = num(k, value)?,
            "mcmc-steps" => self.mcmc_steps = num(k, value)?,
            "trajectory-seed" => self.trajectory_seed = num(k, value)?,
            "oracle-cache" => self.oracle_cache = Some(PathBuf::from(value)),
            "points" => self.points = num(k, value)?,
            "noise-sd" => self.noise_sd = num(k, value)?,
            "init-spread" => self.init_spread = num(k, value)?,
            "restarts" => self.restarts = num(k, value)?,
            _ => return Err(Error::Config(format!("unknown configuration key {k:?}"))),
        }
        Ok(())
    }

    /// Applies a `key = value` file. Blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("config line {}: expected key = value", i + 1))
            })?;
            self.set(key, value)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        self.apply_text(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("particles", self.particles),
            ("predictive-draws", self.predictive_draws),
            ("iterations", self.iterations),
            ("prune-k", self.prune_k),
            ("rolling-window", self.rolling_window),
            ("top-k", self.top_k),
            ("runs", self.runs),
            ("repetitions", self.repetitions),
            ("mcmc-steps", self.mcmc_steps),
            ("restarts", self.restarts),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        if self.hazard.is_nan() || self.hazard <= 1.0 {
            return Err(Error::Config(format!(
                "hazard must exceed 1, got {}",
                self.hazard
            )));
        }
        self.prior()?;
        self.detector()?.validate()
    }

    pub fn prior(&self) -> Result<GaussianPrior> {
        GaussianPrior::new(self.prior_mean, self.prior_variance)
    }

    pub fn hazard_spec(&self) -> Result<HazardSpec> {
        if self.hazard.is_infinite() {
            Ok(HazardSpec::never())
        } else {
            HazardSpec::new(self.hazard)
        }
    }

    /// Credible-interval levels and sidedness. Event streams default to the
    /// one-sided 95th percentile, value series to the two-sided 95% band.
    pub fn interval(&self) -> (f64, f64, Sidedness) {
        let (lower, upper, side) = match self.model {
            ModelKind::Hawkes => (0.05, 0.95, Sidedness::OneSidedUpper),
            ModelKind::Blstm | ModelKind::GaussianTest => (0.025, 0.975, Sidedness::TwoSided),
        };
        (
            self.lower_level.unwrap_or(lower),
            self.upper_level.unwrap_or(upper),
            self.sidedness.unwrap_or(side),
        )
    }

    pub fn detector(&self) -> Result<DetectorConfig> {
        let (lower_level, upper_level, sidedness) = self.interval();
        Ok(DetectorConfig {
            hazard: self.hazard_spec()?,
            particles: self.particles,
            predictive_draws: self.predictive_draws,
            iterations: self.iterations,
            step: self.step,
            sampler: self.sampler,
            evidence: self.evidence,
            lower_level,
            upper_level,
            sidedness,
            prune: PrunePolicy {
                max_hypotheses: self.prune_k,
                mass_floor: self.mass_floor,
            },
            min_segment: self.min_segment,
            seed: self.seed,
            retain_samples: false,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_and_overrides() {
        let mut cfg = RunConfig::default();
        cfg.apply_text("# run\nmodel = gaussian-test\nparticles=20 # inline\nsvn_grid = 10, 30\nhazard = inf\n")
            .unwrap();
        assert_eq!(cfg.model, ModelKind::GaussianTest);
        assert_eq!(cfg.particles, 20);
        assert_eq!(cfg.svn_grid, vec![10, 30]);
        assert!(cfg.hazard.is_infinite());
        assert_eq!(cfg.hazard_spec().unwrap().p_cp(), 0.0);
        cfg.validate().unwrap();
    }

    #[test]
    fn rejects_bad_values() {
        let mut cfg = RunConfig::default();
        assert!(cfg.set("sampler", "gibbs").is_err());
        assert!(cfg.set("colour", "red").is_err());
        assert!(cfg.apply_text("particles 3").is_err());
        cfg.set("hazard", "1").unwrap();
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.set("particles", "0").unwrap();
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.set("upper-level", "1.0").unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn interval_defaults_follow_model() {
        let mut cfg = RunConfig::default();
        assert_eq!(cfg.interval(), (0.05, 0.95, Sidedness::OneSidedUpper));
        cfg.set("model", "blstm").unwrap();
        assert_eq!(cfg.interval(), (0.025, 0.975, Sidedness::TwoSided));
        cfg.set("upper-level", "0.99").unwrap();
        assert_eq!(cfg.interval().1, 0.99);
        let bench = RunConfig::for_command("bench-synth");
        assert_eq!(bench.interval(), (0.025, 0.975, Sidedness::TwoSided));
    }
}
