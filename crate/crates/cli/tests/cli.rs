use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn dadi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dadi"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stderr_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().expect("an error line");
    serde_json::from_str(line).expect("machine-readable error")
}

const TINY: &str = r#"
schema_version = 1
output_dir = "runs"
gamma_grid = [0.0, 0.5]
n_folds = 4
folds = [1]

[dataset]
kind = "synthetic"
n = 200
d_noise = 1

[pretrain]
iterations = 10
validation_every = 5
validation_size = 40

[joint]
iterations = 6
n_agents = 4
epsilon_anneal_iters = 3
target_sync_every = 3
classifier_batch = 8
checkpoint_every = 3
validation_every = 3
validation_size = 20
"#;

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("exp.toml");
    std::fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn invalid_config_lists_every_issue() {
    let dir = tempfile::tempdir().unwrap();
    let text = TINY.replace("[0.0, 0.5]", "[0.0, 1.5]").replace("n = 200", "n = 200\nbogus = 1");
    let cfg = write_config(dir.path(), &text);
    let out = dadi(&["ingest", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_json(&out);
    assert_eq!(err["status"], "error");
    assert_eq!(err["kind"], "config");
    let keys: Vec<&str> = err["issues"].as_array().unwrap().iter().map(|i| i["key"].as_str().unwrap()).collect();
    assert_eq!(keys, vec!["gamma_grid[1]", "dataset.bogus"]);
}

#[test]
fn missing_config_file_is_an_io_error() {
    let out = dadi(&["report", "--config", "/no/such/file.toml"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_json(&out)["kind"], "io");
}

#[test]
fn usage_errors_are_machine_readable() {
    let out = dadi(&["train", "--config", "x.toml", "--workers", "0"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["kind"], "usage");
    let out = dadi(&["frobnicate"]);
    assert_eq!(stderr_json(&out)["kind"], "usage");
}

#[test]
fn report_before_training_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = dadi(&["report", "--config", &cfg]);
    assert_ne!(out.status.code(), Some(0));
    assert!(stderr_json(&out)["message"].as_str().unwrap().contains("fold_1"));
}

#[test]
fn stages_run_one_by_one_and_overrides_apply() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out_dir = dir.path().join("elsewhere");
    let out_arg = out_dir.to_string_lossy().into_owned();
    for stage in ["ingest", "pretrain", "train", "evaluate", "report"] {
        let out = dadi(&[stage, "--config", &cfg, "--out", &out_arg, "--seed", "3", "--workers", "2"]);
        assert!(out.status.success(), "{stage}: {}", String::from_utf8_lossy(&out.stderr));
        let v: Value = serde_json::from_slice(&out.stdout).unwrap();
        assert_eq!(v["command"], stage);
    }
    let report = std::fs::read_to_string(out_dir.join("synthetic/report.csv")).unwrap();
    assert_eq!(report.lines().count(), 3);
    assert!(!dir.path().join("runs").exists());

    let out = dadi(&["run-all", "--config", &cfg, "--out", &out_arg, "--seed", "3", "--resume"]);
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["rows"], 2);
    assert_eq!(std::fs::read_to_string(out_dir.join("synthetic/report.csv")).unwrap(), report);
}
