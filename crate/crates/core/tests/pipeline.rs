//! CLI-level contract tests: exit codes, dry runs, empty inputs, manifest
//! emission and partial-output cleanup.

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_semcert")
}

fn tmp(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join("semcert-pipeline-tests").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run_ok(args: &[&str]) -> String {
    let out = Command::new(bin()).args(args).output().expect("spawn semcert");
    assert!(
        out.status.success(),
        "semcert {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn gen_small(data: &Path) {
    run_ok(&[
        "gen-data", "--out", data.to_str().unwrap(),
        "--train-examples", "120", "--test-examples", "40", "--seed", "7",
    ]);
}

fn train_small(data: &Path, model: &Path) {
    run_ok(&[
        "train", "--data", data.to_str().unwrap(), "--out", model.to_str().unwrap(),
        "--phase1-epochs", "1", "--epochs", "1", "--seed", "7",
    ]);
}

#[test]
fn certify_on_empty_dataset_exits_zero_with_empty_report() {
    let root = tmp("empty-cert");
    let data = root.join("data");
    let model = root.join("model");
    gen_small(&data);
    train_small(&data, &model);
    // empty out the test split
    std::fs::write(data.join("test.tsv"), "").unwrap();
    let cert = root.join("cert");
    run_ok(&[
        "certify", "--checkpoint", model.join("checkpoint.json").to_str().unwrap(),
        "--data", data.to_str().unwrap(), "--out", cert.to_str().unwrap(),
        "--t1", "5", "--t2", "20", "--alpha", "0.05", "--seed", "7",
    ]);
    let report = std::fs::read_to_string(cert.join("certification.jsonl")).unwrap();
    let lines: Vec<&str> = report.lines().collect();
    assert_eq!(lines.len(), 1, "empty dataset leaves only the summary object");
    let summary: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
    assert_eq!(summary["examples"], 0);
    assert_eq!(summary["certified_accuracy"], 0.0);
    assert!(cert.join("manifest.json").exists());
}

#[test]
fn dry_run_validates_without_side_effects() {
    let root = tmp("dry-run");
    let out = root.join("data");
    let stdout = run_ok(&[
        "gen-data", "--out", out.to_str().unwrap(), "--seed", "3", "--dry-run",
    ]);
    assert!(stdout.contains("dry run"));
    assert!(!out.exists(), "dry run must not create the output directory");
}

#[test]
fn missing_input_fails_nonzero_without_partial_outputs() {
    let root = tmp("missing-input");
    let cert = root.join("cert");
    let out = Command::new(bin())
        .args([
            "certify", "--checkpoint", root.join("nope.json").to_str().unwrap(),
            "--data", root.join("nodata").to_str().unwrap(),
            "--out", cert.to_str().unwrap(), "--seed", "1",
        ])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
    assert!(
        !cert.join("certification.jsonl").exists() && !cert.join("manifest.json").exists(),
        "failed runs must not leave partial outputs"
    );
}

#[test]
fn unknown_flags_and_methods_fail_nonzero() {
    let status = Command::new(bin())
        .args(["certify", "--no-such-flag"])
        .output()
        .unwrap();
    assert!(!status.status.success());

    let root = tmp("bad-method");
    let data = root.join("data");
    let model = root.join("model");
    gen_small(&data);
    train_small(&data, &model);
    let out = Command::new(bin())
        .args([
            "attack", "--checkpoint", model.join("checkpoint.json").to_str().unwrap(),
            "--data", data.to_str().unwrap(),
            "--out", root.join("atk").to_str().unwrap(), "--method", "quantum",
        ])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("quantum"));
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let root = tmp("config-file");
    let data = root.join("data");
    gen_small(&data);
    let model = root.join("model");
    train_small(&data, &model);
    let conf = root.join("run.conf");
    std::fs::write(&conf, "t1=5\nt2=30\nalpha=0.05\nseed=7\n").unwrap();
    // flag --t2 overrides the config's t2=30
    run_ok(&[
        "certify", "--checkpoint", model.join("checkpoint.json").to_str().unwrap(),
        "--data", data.to_str().unwrap(),
        "--out", root.join("cert").to_str().unwrap(),
        "--config", conf.to_str().unwrap(), "--t2", "40",
    ]);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(root.join("cert/manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["config"]["t1"], 5);
    assert_eq!(manifest["config"]["t2"], 40);
    assert_eq!(manifest["config"]["alpha"], 0.05);
    assert_eq!(manifest["seed"], 7);
}

#[test]
fn tradeoff_and_alpha_sweep_emit_csv() {
    let root = tmp("sweeps");
    let data = root.join("data");
    run_ok(&[
        "gen-data", "--out", data.to_str().unwrap(),
        "--train-examples", "150", "--test-examples", "40", "--seed", "7",
    ]);
    run_ok(&[
        "tradeoff", "--data", data.to_str().unwrap(),
        "--out", root.join("tradeoff").to_str().unwrap(),
        "--gammas", "0,4", "--phase1-epochs", "1", "--epochs", "2",
        "--t1", "10", "--t2", "60", "--alpha", "0.05", "--seed", "7",
    ]);
    let csv = std::fs::read_to_string(root.join("tradeoff/tradeoff.csv")).unwrap();
    assert!(csv.starts_with("gamma,clean_accuracy,certified_accuracy"));
    assert_eq!(csv.lines().count(), 3);

    let model = root.join("tradeoff").join("checkpoint_gamma_4.json");
    run_ok(&[
        "alpha-sweep", "--checkpoint", model.to_str().unwrap(),
        "--data", data.to_str().unwrap(),
        "--out", root.join("sweep").to_str().unwrap(),
        "--pairs", "100:0.01,50:0.05", "--seed", "7",
    ]);
    let csv = std::fs::read_to_string(root.join("sweep/alpha_sweep.csv")).unwrap();
    assert!(csv.starts_with("t2,alpha,certified_accuracy"));
    assert_eq!(csv.lines().count(), 3);
}
