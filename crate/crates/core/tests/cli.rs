use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn chaosrl(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_chaosrl"))
        .args(args)
        .current_dir(cwd)
        .env_remove("CHAOSRL_OUTPUT_ROOT")
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> serde_json::Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("one JSON line on stdout")
}

fn error_line(out: &Output) -> serde_json::Value {
    assert!(!out.status.success());
    let text = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(text.lines().last().expect("an error line")).expect("JSON error line")
}

#[test]
fn lyapunov_reports_ln2_for_full_logistic() {
    let tmp = tempfile::tempdir().unwrap();
    let v = stdout_json(&chaosrl(&["lyapunov", "--system", "logistic", "--m", "4.0", "--steps", "200000"], tmp.path()));
    let lam = v["lambda_max"].as_f64().unwrap();
    assert!((lam - std::f64::consts::LN_2).abs() < 0.01, "{lam}");
    assert_eq!(v["horizon"], 200000);
}

#[test]
fn invariant_csv_has_golden_header_and_one_row_per_bin() {
    let tmp = tempfile::tempdir().unwrap();
    let out = chaosrl(
        &["invariant", "--system", "logistic", "--m", "4.0", "--bins", "40", "--samples", "100000", "--out", "h.csv"],
        tmp.path(),
    );
    stdout_json(&out);
    let text = fs::read_to_string(tmp.path().join("h.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("bin_left,bin_right,density"));
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 40);
    let mass: f64 = rows.iter().map(|r| r[2] * (r[1] - r[0])).sum();
    assert!((mass - 1.0).abs() < 1e-9);
}

#[test]
fn failures_print_a_machine_readable_line() {
    let tmp = tempfile::tempdir().unwrap();
    let e = error_line(&chaosrl(&["lyapunov", "--system", "lorenz"], tmp.path()));
    assert_eq!(e["error"], "invalid_argument");
    let e = error_line(&chaosrl(&["invariant", "--system", "logistic", "--m", "7"], tmp.path()));
    assert_eq!(e["error"], "config");
    let e = error_line(&chaosrl(&["train", "--config", "missing.toml"], tmp.path()));
    assert_eq!(e["error"], "io");
    let out = chaosrl(&["frobnicate"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_line(&out)["error"], "usage");
    let e = error_line(&chaosrl(&["probe", "landscape", "--env", "logistic"], tmp.path()));
    assert_eq!(e["error"], "invalid_argument");
}

#[test]
fn zero_step_train_writes_manifest_under_output_root() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(
        tmp.path().join("run.toml"),
        "agent = \"dqn\"\nseeds = [1]\ntotal_steps = 0\noutput_dir = \"runs/zero\"\n[env]\nname = \"logistic\"\n",
    )
    .unwrap();
    let root = tmp.path().join("root");
    let out = Command::new(env!("CARGO_BIN_EXE_chaosrl"))
        .args(["train", "--config", "run.toml"])
        .current_dir(tmp.path())
        .env("CHAOSRL_OUTPUT_ROOT", &root)
        .output()
        .unwrap();
    let v = stdout_json(&out);
    assert_eq!(v["aggregate_rows"], 0);
    let run = root.join("runs/zero");
    let manifest = fs::read_to_string(run.join("manifest.toml")).unwrap();
    assert!(manifest.contains("code_version"));
    assert_eq!(fs::read_to_string(run.join("aggregate.csv")).unwrap(), "env_step,mean_return,q10,q90\n");
    assert!(run.join("seed_1/checkpoint_final.json").is_file());
}

#[test]
fn seed_flag_and_overrides_reach_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("run.toml"), "agent = \"dqn\"\n[env]\nname = \"logistic\"\n").unwrap();
    let out = chaosrl(
        &[
            "train",
            "--config",
            "run.toml",
            "--seed",
            "9",
            "--override",
            "total_steps=400",
            "--override",
            "output_dir=o",
            "--override",
            "agent_config.warmup_steps=100",
            "--override",
            "agent_config.hidden=[8]",
        ],
        tmp.path(),
    );
    let v = stdout_json(&out);
    assert_eq!(v["seeds"][0]["seed"], 9);
    let log = fs::read_to_string(tmp.path().join("o/seed_9/train_log.csv")).unwrap();
    assert!(log.starts_with("env_step,episode,return,length,epsilon,loss,grad_norm\n"));
    // the aggregate subcommand reproduces the run's own aggregate file
    let before = fs::read(tmp.path().join("o/aggregate.csv")).unwrap();
    stdout_json(&chaosrl(&["aggregate", "--runs", "o"], tmp.path()));
    assert_eq!(fs::read(tmp.path().join("o/aggregate.csv")).unwrap(), before);
}

#[test]
fn lookahead_lipcurve_needs_no_checkpoint_and_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let args = |out: &'static str| {
        vec![
            "probe",
            "lipcurve",
            "--env",
            "logistic",
            "--override",
            "policy=lookahead",
            "--override",
            "curve.anchors=8",
            "--override",
            "curve.mc_samples=16",
            "--out",
            out,
        ]
    };
    stdout_json(&chaosrl(&args("a"), tmp.path()));
    stdout_json(&chaosrl(&args("b"), tmp.path()));
    let a = fs::read_to_string(tmp.path().join("a/lipcurve.csv")).unwrap();
    assert!(a.starts_with("T,scalar_ratio,w1_ratio,bound_scalar,bound_w1\n"));
    assert_eq!(a.lines().count(), 16);
    assert_eq!(a, fs::read_to_string(tmp.path().join("b/lipcurve.csv")).unwrap());
    let probe: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("a/lipprobe.json")).unwrap()).unwrap();
    assert!(probe["k_f_hat"].as_f64().unwrap() > 1.0);
}

#[test]
fn baseline_prints_means() {
    let tmp = tempfile::tempdir().unwrap();
    let v = stdout_json(&chaosrl(&["baseline", "--env", "logistic", "--episodes", "20", "--out", "b.json"], tmp.path()));
    assert!(v["mean_terminal_distance"].as_f64().unwrap() > 0.0);
    let full: serde_json::Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("b.json")).unwrap()).unwrap();
    assert_eq!(full["returns"].as_array().unwrap().len(), 20);
}
