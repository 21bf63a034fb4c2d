use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const FAST: &str = r#"
seed = 3

[model]
hidden = [16, 8]

[train]
epochs = 5

[sweep]
hidden = [16, 8]

[sweep.base_train]
epochs = 5

[sweep.update_train]
epochs = 5
"#;

fn weldwatch(dir: &Path, args: &[&str]) -> Output {
    let config = dir.join("fast.toml");
    if !config.exists() {
        fs::write(&config, FAST).unwrap();
    }
    Command::new(env!("CARGO_BIN_EXE_weldwatch"))
        .arg("--config")
        .arg(&config)
        .arg("--out")
        .arg(dir)
        .args(args)
        .output()
        .unwrap()
}

fn ok(out: Output) -> Output {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    out
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = weldwatch(dir.path(), &["train", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = weldwatch(dir.path(), &["train", "--data", "missing.csv"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.csv"));
}

#[test]
fn bad_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[train]\nlearning_rat = 0.1\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_weldwatch"))
        .arg("--config")
        .arg(&bad)
        .arg("--out")
        .arg(dir.path())
        .arg("simulate")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rat"));
}

#[test]
fn training_is_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for dir in [a.path(), b.path()] {
        ok(weldwatch(dir, &["simulate"]));
        ok(weldwatch(dir, &["train"]));
    }
    let model = |d: &Path| fs::read(d.join("model.txt")).unwrap();
    assert_eq!(model(a.path()), model(b.path()));
    assert_eq!(fs::read(a.path().join("dataset.csv")).unwrap(), fs::read(b.path().join("dataset.csv")).unwrap());
}

#[test]
fn pipeline_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for step in ["simulate", "train", "fit-detector", "detect"] {
        ok(weldwatch(d, &[step]));
    }
    for f in ["dataset.csv", "train.csv", "test.csv", "model.txt", "bank.txt", "decisions.csv", "flagged.csv", "metrics.json"] {
        assert!(d.join(f).exists(), "{f} missing");
    }
    let decisions = fs::read_to_string(d.join("decisions.csv")).unwrap();
    assert!(decisions.starts_with("sample_id,outcome,class,accepted_by,truth"));
}

#[test]
fn sweep_covers_full_grid() {
    let dir = tempfile::tempdir().unwrap();
    ok(weldwatch(dir.path(), &["sweep", "--classes", "1..3", "--shots", "2..6", "--repeats", "20"]));
    let trials = fs::read_to_string(dir.path().join("sweep_trials.csv")).unwrap();
    assert_eq!(trials.lines().count(), 301);
    let summary = fs::read_to_string(dir.path().join("sweep_summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 16);
}
