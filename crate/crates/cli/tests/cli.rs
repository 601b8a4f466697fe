//! End-to-end tests of the `ikern` binary: every subcommand is exercised
//! through a real process, checking exit codes, outputs, and determinism
//! across thread counts.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use interaction_kernels::config::{
    ExperimentConfig, LearningBlock, MeasureBlock, SystemBlock, TypeBlock, VelocityConfig,
};
use interaction_kernels::io::{read_estimator_json, write_results_csv, ResultRow};
use interaction_kernels::kernels::{InitialSampler, KernelSpec};

fn ikern() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ikern"))
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("failed to spawn ikern")
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "command failed with {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        stdout_of(out),
        stderr_of(out),
    );
}

/// A consensus system small enough that a full study runs in about a
/// second.
fn tiny_config(dir: &Path) -> PathBuf {
    let cfg = ExperimentConfig {
        name: "tiny".into(),
        system: SystemBlock {
            d: 1,
            types: vec![TypeBlock {
                size: 4,
                sampler: InitialSampler::UniformInterval { lo: 0.0, hi: 4.0 },
            }],
            kernels: vec![KernelSpec::Opinion],
            t_start: 0.0,
            t_split: 0.5,
            t_end: 2.0,
            l_nodes: 6,
        },
        learning: LearningBlock {
            degree: 0,
            smoothness: 1,
            multiplier: 10.0,
            r_max: Some(5.0),
            m_values: vec![8, 16, 32],
            trials: 2,
            velocity: VelocityConfig::Exact,
            noise: None,
        },
        measure: MeasureBlock {
            m_rho: 120,
            bins: 64,
        },
        seed: 97,
    };
    let path = dir.join("tiny.json");
    cfg.save(&path).unwrap();
    path
}

#[test]
fn help_succeeds_and_usage_errors_exit_one() {
    let help = run(ikern().arg("--help"));
    assert_eq!(help.status.code(), Some(0));
    assert!(stdout_of(&help).contains("noise-sweep"));

    let unknown = run(ikern().arg("frobnicate"));
    assert_eq!(unknown.status.code(), Some(1));

    let missing = run(ikern().args(["learn"]));
    assert_eq!(missing.status.code(), Some(1));

    // --traj and --out-dir are mutually exclusive modes.
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let conflict = run(ikern().args([
        "learn",
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        "x",
        "--traj",
        "y.csv",
        "--out",
        "z.json",
    ]));
    assert_eq!(conflict.status.code(), Some(1));
}

#[test]
fn runtime_failures_exit_two() {
    let missing_file = run(ikern().args([
        "learn",
        "--config",
        "/nonexistent/config.json",
        "--out-dir",
        "x",
    ]));
    assert_eq!(missing_file.status.code(), Some(2));
    assert!(stderr_of(&missing_file).contains("cannot load configuration"));

    let dir = tempfile::tempdir().unwrap();
    let no_rows = dir.path().join("results.csv");
    write_results_csv(&no_rows, &[]).unwrap();
    let no_match = run(ikern().args([
        "rate",
        "--in",
        no_rows.to_str().unwrap(),
        "--metric",
        "kernel_error",
    ]));
    assert_eq!(no_match.status.code(), Some(2));
    assert!(stderr_of(&no_match).contains("no rows"));
}

#[test]
fn generate_learn_evaluate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let cfg = cfg.to_str().unwrap();
    let traj = dir.path().join("traj.csv");
    let est = dir.path().join("est.json");
    let report = dir.path().join("report.json");

    let gen = run(ikern().args([
        "generate",
        "--config",
        cfg,
        "--out",
        traj.to_str().unwrap(),
        "--m",
        "16",
    ]));
    assert_ok(&gen);
    assert!(traj.exists());
    assert!(dir.path().join("traj.meta.json").exists());

    let learn = run(ikern().args([
        "learn",
        "--config",
        cfg,
        "--traj",
        traj.to_str().unwrap(),
        "--out",
        est.to_str().unwrap(),
    ]));
    assert_ok(&learn);
    let estimator = read_estimator_json(&est).unwrap();
    assert!(estimator.smoothed_kernels().is_some());
    assert!(estimator.coeffs().iter().all(|c| c.is_finite()));

    let eval = run(ikern().args([
        "evaluate",
        "--config",
        cfg,
        "--estimator",
        est.to_str().unwrap(),
        "--predict",
        "2",
        "--out",
        report.to_str().unwrap(),
    ]));
    assert_ok(&eval);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    let aggregate = report["raw"]["aggregate"].as_f64().unwrap();
    assert!(aggregate.is_finite() && aggregate > 0.0 && aggregate < 10.0);
    assert!(report["smoothed"]["aggregate"].as_f64().is_some());
    let classes: Vec<&str> = report["prediction"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| p["class"].as_str().unwrap())
        .collect();
    assert_eq!(classes, ["random_ic", "large_n"]);
}

#[test]
fn bundles_are_identical_whatever_the_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let cfg = cfg.to_str().unwrap();
    let one = dir.path().join("one");
    let many = dir.path().join("many");

    let first = run(ikern().args([
        "learn",
        "--config",
        cfg,
        "--out-dir",
        one.to_str().unwrap(),
        "--threads",
        "1",
    ]));
    assert_ok(&first);
    // Thread count set through the environment instead of the flag.
    let second = run(ikern()
        .args(["learn", "--config", cfg, "--out-dir", many.to_str().unwrap()])
        .env("IKERN_THREADS", "3"));
    assert_ok(&second);

    for file in ["results.csv", "cells.json", "measure.csv", "summaries.json"] {
        let a = fs::read(one.join(file)).unwrap();
        let b = fs::read(many.join(file)).unwrap();
        assert_eq!(a, b, "{file} differs between thread counts");
    }
    assert!(one.join("curves/kernel_error_raw.csv").exists());
    assert!(one.join("config.json").exists());
}

#[test]
fn rate_recovers_planted_slopes() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("results.csv");
    let mut rows = Vec::new();
    for &m in &[16usize, 64, 256, 1024] {
        for trial in 0..3 {
            rows.push(ResultRow {
                experiment: "synthetic".into(),
                m,
                trial,
                metric: "kernel_error_raw".into(),
                window: String::new(),
                value: 2.0 * (m as f64).powf(-0.5),
            });
            rows.push(ResultRow {
                experiment: "synthetic".into(),
                m,
                trial,
                metric: "kernel_error_smoothed".into(),
                window: String::new(),
                value: 0.7 * (m as f64).powf(-0.25),
            });
        }
    }
    write_results_csv(&path, &rows).unwrap();

    // The prefix matches both metrics; each gets its own exact fit.
    let out = run(ikern().args([
        "rate",
        "--in",
        path.to_str().unwrap(),
        "--metric",
        "kernel_error",
        "--stat",
        "median",
    ]));
    assert_ok(&out);
    let text = stdout_of(&out);
    assert!(text.contains("kernel_error_raw: rate 0.5000"), "{text}");
    assert!(text.contains("kernel_error_smoothed: rate 0.2500"), "{text}");
}

#[test]
fn coercivity_prints_a_row_per_partition_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let report = dir.path().join("coercivity.json");
    let out = run(ikern().args([
        "coercivity",
        "--config",
        cfg.to_str().unwrap(),
        "--partitions",
        "4,8",
        "--out",
        report.to_str().unwrap(),
    ]));
    assert_ok(&out);
    let text = stdout_of(&out);
    assert!(text.contains("lambda_min"), "{text}");

    let records: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    let records = records.as_array().unwrap();
    assert_eq!(records.len(), 2);
    for record in records {
        let lambda = record["lambda_min"].as_f64().unwrap();
        assert!(lambda > 0.0 && lambda < 2.0);
    }
}

#[test]
fn noise_sweep_degrades_errors_and_writes_summaries() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let sweep = dir.path().join("sweep");
    let out = run(ikern().args([
        "noise-sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--sigmas",
        "0,0.4",
        "--kind",
        "additive",
        "--out-dir",
        sweep.to_str().unwrap(),
    ]));
    assert_ok(&out);
    assert!(sweep.join("sigma_0.000/results.csv").exists());
    assert!(sweep.join("sigma_0.400/results.csv").exists());
    assert!(sweep.join("sweep.json").exists());

    // Parse the summary and check the clean level beats the noisy one at
    // every matched (metric, M).
    let csv = fs::read_to_string(sweep.join("sweep.csv")).unwrap();
    let mut clean = std::collections::BTreeMap::new();
    let mut noisy = std::collections::BTreeMap::new();
    for line in csv.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        let sigma: f64 = fields[0].parse().unwrap();
        let key = (fields[1].to_string(), fields[2].to_string());
        let median: f64 = fields[4].parse().unwrap();
        if sigma == 0.0 {
            clean.insert(key, median);
        } else {
            noisy.insert(key, median);
        }
    }
    assert_eq!(clean.len(), 6);
    assert_eq!(clean.len(), noisy.len());
    for (key, clean_value) in &clean {
        assert!(
            noisy[key] > *clean_value,
            "noise did not degrade {key:?}: {} <= {clean_value}",
            noisy[key],
        );
    }
}
