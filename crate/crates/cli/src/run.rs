//! Subcommand runners and their output formats.

use std::fs::File;
use std::io::{self, BufWriter, Write};

use serde_json::{json, Value};
use svocd::blstm::BlstmModel;
use svocd::bocpd::{DetectorState, Sampler, StepRecord};
use svocd::experiments::{
    run_mse_study, run_sinusoid_validation, run_synth_benchmark, BenchmarkReport, MseRow,
    MseStudyConfig, SinusoidConfig, SinusoidReport, SynthBenchConfig,
};
use svocd::hawkes::HawkesModel;
use svocd::ingest::{load_events, load_series, rolling_average, standardize};
use svocd::{Error, GaussianMeanModel, Model, Result};

use crate::config::{ModelKind, RunConfig};

fn output(cfg: &RunConfig) -> Result<Box<dyn Write>> {
    Ok(match &cfg.out {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            Box::new(BufWriter::new(File::create(path)?))
        }
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

pub fn sampler_name(s: Sampler) -> &'static str {
    match s {
        Sampler::Svn => "svn",
        Sampler::Svgd => "svgd",
        Sampler::Smc => "smc",
        Sampler::Exact => "exact",
    }
}

/// Observations for the configured model: arrival times for Hawkes,
/// otherwise a value series after smoothing and optional standardization.
pub fn load_observations(cfg: &RunConfig) -> Result<Vec<f64>> {
    let path = cfg
        .input
        .as_ref()
        .ok_or_else(|| Error::Config("detect needs an input file (--input)".into()))?;
    if let Err(e) = std::fs::metadata(path) {
        return Err(Error::Data(format!("cannot read {}: {e}", path.display())));
    }
    match cfg.model {
        ModelKind::Hawkes => {
            if cfg.rolling_window != 1 || cfg.standardize {
                return Err(Error::Config(
                    "event streams take no smoothing or standardization".into(),
                ));
            }
            let events = load_events(path)?;
            if events.first().is_some_and(|&t| t <= 0.0) {
                return Err(Error::Data("arrival times must be positive".into()));
            }
            Ok(events)
        }
        ModelKind::Blstm | ModelKind::GaussianTest => {
            let series = load_series(path)?;
            let mut values = rolling_average(&series.values, cfg.rolling_window)?;
            if cfg.standardize {
                values = standardize(&values)?.0;
            }
            Ok(values)
        }
    }
}

fn record_json(rec: &StepRecord, cfg: &RunConfig) -> Value {
    let top: Vec<Value> = rec
        .top_posterior(cfg.top_k)
        .into_iter()
        .map(|(tau, p)| json!([tau, p]))
        .collect();
    let mut v = json!({
        "t": rec.t,
        "y": rec.y,
        "alert": rec.alert,
        "mean": rec.prediction.mean,
        "lower": rec.prediction.lower,
        "upper": rec.prediction.upper,
        "map_tau": rec.map_tau(),
        "hypotheses": rec.posterior.len(),
        "top": top,
        "fallbacks": rec.fallbacks,
    });
    if cfg.timings {
        v["timings_ms"] = json!({
            "evidence": rec.timings.evidence_ms,
            "update": rec.timings.update_ms,
            "predict": rec.timings.predict_ms,
        });
    }
    v
}

fn detect_with<M: Model>(model: M, cfg: &RunConfig, ys: &[f64]) -> Result<()> {
    let mut state = DetectorState::new(model, cfg.detector()?)?;
    let mut out = output(cfg)?;
    let mut alerts = Vec::new();
    let mut step_ms = Vec::with_capacity(ys.len());
    for &y in ys {
        let rec = state.step(y)?;
        if rec.alert {
            alerts.push(rec.t);
        }
        step_ms.push(rec.timings.evidence_ms + rec.timings.update_ms + rec.timings.predict_ms);
        writeln!(out, "{}", record_json(&rec, cfg))?;
    }
    let mut summary = json!({ "steps": ys.len(), "alerts": alerts });
    if cfg.timings {
        summary["step_ms"] = json!(step_ms);
    }
    writeln!(out, "{}", json!({ "summary": summary }))?;
    out.flush()?;
    Ok(())
}

pub fn detect(cfg: &RunConfig) -> Result<()> {
    let ys = load_observations(cfg)?;
    let prior = cfg.prior()?;
    match cfg.model {
        ModelKind::Hawkes => detect_with(HawkesModel::new(prior), cfg, &ys),
        ModelKind::Blstm => detect_with(BlstmModel::new(prior, cfg.sigma)?, cfg, &ys),
        ModelKind::GaussianTest => {
            detect_with(GaussianMeanModel::new(prior, cfg.noise_variance)?, cfg, &ys)
        }
    }
}

fn require_model(cfg: &RunConfig, kind: ModelKind, name: &str) -> Result<()> {
    if cfg.model != kind {
        return Err(Error::Config(format!(
            "{name} runs only with model {kind:?}"
        )));
    }
    Ok(())
}

fn joined(xs: &[usize]) -> String {
    xs.iter()
        .map(usize::to_string)
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn write_benchmark(report: &BenchmarkReport, out: &mut dyn Write) -> io::Result<()> {
    writeln!(
        out,
        "run,seed,false_positives,false_negatives,alerts,truths"
    )?;
    for r in &report.runs {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.run,
            r.seed,
            r.false_positives,
            r.false_negatives,
            joined(&r.alerts),
            joined(&r.truths)
        )?;
    }
    Ok(())
}

pub fn bench_synth(cfg: &RunConfig) -> Result<BenchmarkReport> {
    require_model(cfg, ModelKind::Hawkes, "bench-synth")?;
    let bench = SynthBenchConfig {
        runs: cfg.runs,
        seed: cfg.seed,
        window: cfg.match_window,
        prior: cfg.prior()?,
        detector: cfg.detector()?,
    };
    let report = run_synth_benchmark(&bench)?;
    let mut out = output(cfg)?;
    write_benchmark(&report, &mut out)?;
    out.flush()?;
    eprintln!(
        "{}: FP {:.2} ({:.2}), FN {:.2} ({:.2}) over {} runs",
        sampler_name(cfg.sampler),
        report.fp_mean,
        report.fp_std,
        report.fn_mean,
        report.fn_std,
        report.runs.len()
    );
    Ok(report)
}

pub fn write_mse(rows: &[MseRow], out: &mut dyn Write) -> io::Result<()> {
    writeln!(
        out,
        "sampler,particles,checkpoint,oracle_trace,mse,variance"
    )?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            sampler_name(r.sampler),
            r.particles,
            r.checkpoint,
            r.oracle_trace,
            r.mse,
            r.variance
        )?;
    }
    Ok(())
}

pub fn bench_mse(cfg: &RunConfig) -> Result<Vec<MseRow>> {
    require_model(cfg, ModelKind::Hawkes, "bench-mse")?;
    let study = MseStudyConfig {
        trajectory_seed: cfg.trajectory_seed,
        seed: cfg.seed,
        svn_grid: cfg.svn_grid.clone(),
        smc_grid: cfg.smc_grid.clone(),
        checkpoints: cfg.checkpoints.clone(),
        repetitions: cfg.repetitions,
        mcmc_steps: cfg.mcmc_steps,
        iterations: cfg.iterations,
        step: cfg.step,
        oracle_cache: cfg.oracle_cache.clone(),
    };
    let rows = run_mse_study(&study)?;
    let mut out = output(cfg)?;
    write_mse(&rows, &mut out)?;
    out.flush()?;
    Ok(rows)
}

pub fn write_sinusoid(report: &SinusoidReport, out: &mut dyn Write) -> io::Result<()> {
    writeln!(out, "index,observed,clean,mean,lower,upper,mode")?;
    for i in 0..report.index.len() {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            report.index[i],
            report.observed[i],
            report.clean[i],
            report.mean[i],
            report.lower[i],
            report.upper[i],
            report.mode[i]
        )?;
    }
    Ok(())
}

pub fn validate_blstm(cfg: &RunConfig) -> Result<SinusoidReport> {
    require_model(cfg, ModelKind::Blstm, "validate-blstm")?;
    let sc = SinusoidConfig {
        points: cfg.points,
        noise_sd: cfg.noise_sd,
        sigma: cfg.sigma,
        particles: cfg.particles,
        iterations: cfg.iterations,
        step: cfg.step,
        init_spread: cfg.init_spread,
        restarts: cfg.restarts,
        draws_per_particle: cfg.predictive_draws,
        seed: cfg.seed,
    };
    let report = run_sinusoid_validation(&sc)?;
    let mut out = output(cfg)?;
    write_sinusoid(&report, &mut out)?;
    out.flush()?;
    eprintln!(
        "rmse(mean) {:.4}, rmse(mode) {:.4}, coverage {:.3}",
        report.rmse_mean, report.rmse_mode, report.coverage
    );
    Ok(report)
}
