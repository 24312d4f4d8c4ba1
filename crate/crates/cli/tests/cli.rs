use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn svocd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_svocd"))
        .args(args)
        .output()
        .unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn json_lines(out: &Output) -> Vec<Value> {
    String::from_utf8_lossy(&out.stdout)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn exit_codes_separate_config_and_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let events = write(dir.path(), "e.csv", "0.5\n1.0\n");
    assert_eq!(
        svocd(&["detect", "--input", &events, "--sampler", "gibbs"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        svocd(&["detect", "--input", &events, "--hazard", "0.5"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        svocd(&["detect", "--input", &events, "--set", "nonsense=1"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(svocd(&["detect"]).status.code(), Some(2));
    assert_eq!(
        svocd(&["detect", "--input", &events, "--sampler", "exact"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        svocd(&["bench-synth", "--model", "blstm"]).status.code(),
        Some(2)
    );
    let unsorted = write(dir.path(), "u.csv", "2.0\n1.0\n");
    assert_eq!(
        svocd(&["detect", "--input", &unsorted]).status.code(),
        Some(3)
    );
    let text = write(dir.path(), "t.csv", "1.0\nabc\n");
    assert_eq!(svocd(&["detect", "--input", &text]).status.code(), Some(3));
    let missing = dir.path().join("missing.csv");
    assert_eq!(
        svocd(&["detect", "--input", missing.to_str().unwrap()])
            .status
            .code(),
        Some(3)
    );
}

#[test]
fn exact_gaussian_run_reports_full_posterior() {
    let dir = tempfile::tempdir().unwrap();
    let series = write(dir.path(), "s.csv", "0.1\n-0.3\n0.2\n5.0\n5.3\n4.8\n");
    let config = write(
        dir.path(),
        "run.cfg",
        "model = gaussian-test\nsampler = exact\nevidence = exact\nprior_variance = 4\nhazard = 10\nprune_k = 100\nmass_floor = 0\ntop_k = 100\n",
    );
    let out = svocd(&["detect", "--config", &config, "--input", &series]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let lines = json_lines(&out);
    assert_eq!(lines.len(), 7);
    for (m, rec) in lines[..6].iter().enumerate() {
        assert_eq!(rec["t"], m + 1);
        let top = rec["top"].as_array().unwrap();
        assert_eq!(top.len(), m + 2);
        let total: f64 = top.iter().map(|p| p[1].as_f64().unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-10);
        assert!(rec.get("timings_ms").is_none());
    }
    assert_eq!(lines[5]["map_tau"], 4);
    assert_eq!(lines[6]["summary"]["steps"], 6);
}

#[test]
fn never_hazard_puts_no_mass_on_new_segments() {
    let dir = tempfile::tempdir().unwrap();
    let series = write(dir.path(), "s.csv", "0.0\n8.0\n-8.0\n");
    let out = svocd(&[
        "detect",
        "--model",
        "gaussian-test",
        "--sampler",
        "exact",
        "--hazard",
        "inf",
        "--input",
        &series,
        "--timings",
    ]);
    assert!(out.status.success());
    let lines = json_lines(&out);
    for rec in &lines[..3] {
        let top = rec["top"].as_array().unwrap();
        assert_eq!(top[0], serde_json::json!([1, 1.0]));
        assert!(rec["timings_ms"]["update"].as_f64().unwrap() >= 0.0);
    }
}

#[test]
fn series_preprocessing_flows_through() {
    let dir = tempfile::tempdir().unwrap();
    let series = write(
        dir.path(),
        "p.csv",
        "day,price\n1,10\n2,12\n3,11\n4,13\n5,30\n6,31\n",
    );
    let out_path = dir.path().join("records.jsonl");
    let out = svocd(&[
        "detect",
        "--model",
        "gaussian-test",
        "--sampler",
        "exact",
        "--input",
        &series,
        "--set",
        "rolling_window=2",
        "--set",
        "standardize=true",
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(out.stdout.is_empty());
    let text = std::fs::read_to_string(&out_path).unwrap();
    let first: Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert!(first["y"].as_f64().unwrap() < 0.0);
    assert_eq!(text.lines().count(), 7);
}

#[test]
fn benchmark_tables_have_expected_shape() {
    let dir = tempfile::tempdir().unwrap();
    let synth = dir.path().join("synth.csv");
    let out = svocd(&[
        "bench-synth",
        "--runs",
        "2",
        "--particles",
        "10",
        "--predictive-draws",
        "20",
        "--iterations",
        "3",
        "--sampler",
        "smc",
        "--out",
        synth.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = std::fs::read_to_string(&synth).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(
        rows[0],
        "run,seed,false_positives,false_negatives,alerts,truths"
    );
    assert_eq!(rows.len(), 3);
    assert!(rows[1].ends_with(",10 20 30 40 50 60"));

    let mse = dir.path().join("mse.csv");
    let out = svocd(&[
        "bench-mse",
        "--set",
        "svn_grid=5,10",
        "--set",
        "smc_grid=5",
        "--set",
        "checkpoints=12,15",
        "--set",
        "repetitions=2",
        "--set",
        "mcmc_steps=5000",
        "--iterations",
        "3",
        "--out",
        mse.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = std::fs::read_to_string(&mse).unwrap();
    let grid: Vec<(String, String, String)> = text
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].to_string(), f[1].to_string(), f[2].to_string())
        })
        .collect();
    let expected: Vec<(String, String, String)> = [
        ("svn", "5", "12"),
        ("svn", "10", "12"),
        ("smc", "5", "12"),
        ("svn", "5", "15"),
        ("svn", "10", "15"),
        ("smc", "5", "15"),
    ]
    .iter()
    .map(|(a, b, c)| (a.to_string(), b.to_string(), c.to_string()))
    .collect();
    assert_eq!(grid, expected);
}

#[test]
fn sinusoid_report_has_mean_and_mode() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sin.csv");
    let out = svocd(&[
        "validate-blstm",
        "--iterations",
        "5",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(
        text.lines().next().unwrap(),
        "index,observed,clean,mean,lower,upper,mode"
    );
    assert_eq!(text.lines().count(), 51);
    assert!(String::from_utf8_lossy(&out.stderr).contains("coverage"));
}
