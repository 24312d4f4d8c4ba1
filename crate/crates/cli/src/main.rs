use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use svocd::{Error, Result};
use svocd_cli::{exit_code, run, RunConfig};

#[derive(Parser)]
#[command(
    name = "svocd",
    version,
    about = "Online changepoint detection with Stein variational particle transport"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Stream observations through the detector and emit JSON-lines step records.
    Detect(Opts),
    /// Score detections on seeded synthetic Hawkes trajectories.
    BenchSynth(Opts),
    /// Compare tracked posterior covariance traces against an MCMC oracle.
    BenchMse(Opts),
    /// Fit the LSTM to a noisy sinusoid and report reconstructions.
    ValidateBlstm(Opts),
}

#[derive(Args)]
struct Opts {
    /// Configuration file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override any configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    sampler: Option<String>,
    #[arg(long)]
    particles: Option<String>,
    #[arg(long)]
    predictive_draws: Option<String>,
    #[arg(long)]
    iterations: Option<String>,
    #[arg(long)]
    step: Option<String>,
    #[arg(long)]
    hazard: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    input: Option<String>,
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    runs: Option<String>,
    #[arg(long)]
    top_k: Option<String>,
    /// Include wall-clock timings in step records.
    #[arg(long)]
    timings: bool,
}

impl Opts {
    fn resolve(&self, command: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::for_command(command);
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        let flags = [
            ("model", &self.model),
            ("sampler", &self.sampler),
            ("particles", &self.particles),
            ("predictive-draws", &self.predictive_draws),
            ("iterations", &self.iterations),
            ("step", &self.step),
            ("hazard", &self.hazard),
            ("seed", &self.seed),
            ("input", &self.input),
            ("out", &self.out),
            ("runs", &self.runs),
            ("top-k", &self.top_k),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        if self.timings {
            cfg.timings = true;
        }
        for kv in &self.sets {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Detect(o) => run::detect(&o.resolve("detect")?),
        Command::BenchSynth(o) => run::bench_synth(&o.resolve("bench-synth")?).map(drop),
        Command::BenchMse(o) => run::bench_mse(&o.resolve("bench-mse")?).map(drop),
        Command::ValidateBlstm(o) => run::validate_blstm(&o.resolve("validate-blstm")?).map(drop),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
