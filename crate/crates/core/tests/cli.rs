use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"{
  "version": 1,
  "grid": {"n": 16},
  "noise": {"epsilon": 0.5, "seed": 4, "ladyzhenskaya_trials": 20},
  "integration": {"t_final": 0.2, "sample_every": 20, "checkpoint_every": 5}
}"#;

fn viscoflow(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_viscoflow"))
        .args(args)
        .current_dir(dir)
        .env_remove("VISCOFLOW_CONFIG")
        .env_remove("VISCOFLOW_SEED")
        .env_remove("VISCOFLOW_OUT")
        .output()
        .expect("binary runs")
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn unknown_key_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("bad.json"),
        r#"{"version": 1, "physics": {"viscosity": 1.0}}"#,
    )
    .unwrap();
    let out = viscoflow(&["simulate", "--config", "bad.json"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("viscosity"));
}

#[test]
fn simulate_writes_outputs_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("small.json"), SMALL).unwrap();
    let out = viscoflow(&["simulate", "--config", "small.json", "--out", "a"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let a = dir.path().join("a");
    for name in [
        "manifest.json",
        "trajectory.csv",
        "ledger.json",
        "final.state",
        "timing.json",
    ] {
        assert!(a.join(name).is_file(), "{name} missing");
    }
    assert!(a.join("checkpoints").read_dir().unwrap().count() >= 2);
    let manifest = read_json(&a.join("manifest.json"));
    assert_eq!(manifest["command"], "simulate");
    assert_eq!(manifest["passed"], true);
    assert_eq!(manifest["config"]["noise"]["seed"], 4);

    let rows = fs::read_to_string(a.join("trajectory.csv")).unwrap();
    assert_eq!(rows.lines().count(), 1 + 200 / 20 + 1);

    let out = viscoflow(
        &["simulate", "--config", "a/manifest.json", "--out", "b"],
        dir.path(),
    );
    assert!(out.status.success());
    assert!(viscoflow::cli::outputs_identical(&a, &dir.path().join("b")).unwrap());
}

#[test]
fn seed_flag_changes_the_run() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("small.json"), SMALL).unwrap();
    assert!(
        viscoflow(&["simulate", "--config", "small.json", "--out", "a"], dir.path())
            .status
            .success()
    );
    let out = viscoflow(
        &["simulate", "--config", "small.json", "--seed", "9", "--out", "b"],
        dir.path(),
    );
    assert!(out.status.success());
    assert_eq!(
        read_json(&dir.path().join("b/manifest.json"))["config"]["noise"]["seed"],
        9
    );
    assert!(!viscoflow::cli::outputs_identical(&dir.path().join("a"), &dir.path().join("b")).unwrap());
}

#[test]
fn oracle_command_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = viscoflow(&["oracle", "--out", "o"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(read_json(&dir.path().join("o/manifest.json"))["passed"], true);
}
