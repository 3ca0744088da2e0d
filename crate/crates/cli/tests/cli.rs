use std::path::Path;
use std::process::Command;

use serde_json::Value;

fn steady(dir: &Path, args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_steady"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("spawn steady");
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn small_config(dir: &Path) -> String {
    let path = dir.join("config.json");
    let cfg = serde_json::json!({
        "cohort": { "n_per_modality": 4 },
        "eval_runs": 3,
        "master_seed": 11
    });
    std::fs::write(&path, cfg.to_string()).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn run_experiment_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    steady(dir.path(), &["run-experiment", "--config", &cfg, "--seed", "3", "--out", "a.csv"]);
    steady(dir.path(), &["run-experiment", "--config", &cfg, "--seed", "3", "--out", "b.csv"]);
    let a = std::fs::read(dir.path().join("a.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b.csv")).unwrap();
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("condition,teacher_id,mean_return\n"));
    // 6 conditions x 4 teachers plus a mean and sd row per condition
    assert_eq!(text.lines().count(), 1 + 24 + 12);
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    steady(dir.path(), &["run-experiment", "--config", &cfg, "--seed", "5", "--format", "json", "--out", "r.json"]);
    let v: Value = serde_json::from_slice(&std::fs::read(dir.path().join("r.json")).unwrap()).unwrap();
    assert_eq!(v["master_seed"], 5);
    assert_eq!(v["schema_version"], 1);
    assert_eq!(v["rows"].as_array().unwrap().len(), 24);
}

#[test]
fn simulated_logs_reingest_to_the_same_results() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    steady(dir.path(), &["simulate-teachers", "--config", &cfg, "--out", "fb.csv", "--profiles", "p.json"]);
    steady(dir.path(), &["run-experiment", "--config", &cfg, "--out", "sim.csv"]);
    steady(dir.path(), &["run-experiment", "--config", &cfg, "--logs", "fb.csv", "--out", "ing.csv"]);
    assert_eq!(
        std::fs::read(dir.path().join("sim.csv")).unwrap(),
        std::fs::read(dir.path().join("ing.csv")).unwrap()
    );
    let profiles: Value = serde_json::from_slice(&std::fs::read(dir.path().join("p.json")).unwrap()).unwrap();
    assert_eq!(profiles.as_array().unwrap().len(), 8);

    steady(dir.path(), &["analyze", "--config", &cfg, "--logs", "fb.csv", "--out", "an.json"]);
    let an: Value = serde_json::from_slice(&std::fs::read(dir.path().join("an.json")).unwrap()).unwrap();
    assert_eq!(an["correlations"].as_array().unwrap().len(), 8);
    assert_eq!(an["agreement"]["teachers"].as_array().unwrap().len(), 8);
}

#[test]
fn oracle_and_session_files() {
    let dir = tempfile::tempdir().unwrap();
    steady(dir.path(), &["train-oracle", "--out", "q.csv"]);
    let q = std::fs::read_to_string(dir.path().join("q.csv")).unwrap();
    assert_eq!(q.lines().count(), 1 + 3500);
    steady(dir.path(), &["gen-sessions", "--seed", "2", "--out", "s.json"]);
    let s: Value = serde_json::from_slice(&std::fs::read(dir.path().join("s.json")).unwrap()).unwrap();
    assert_eq!(s["session"]["clips"].as_array().unwrap().len(), 200);
    assert_eq!(s["session"]["trajectories"].as_array().unwrap().len(), 6);
}

#[test]
fn bad_config_fails() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.json"), r#"{"eval_runs": 0}"#).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_steady"))
        .args(["run-experiment", "--config", "bad.json", "--out", "x.csv"])
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("eval_runs"));
}
