use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = "n_trials = 2\nreduced_repeats = 1\n\n[sim]\nn_logs = 40\n\n[train]\nmax_iterations = 15\n\n[prune]\nretrain_iterations = 3\nmax_removals = 5\n";

fn millreduce(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_millreduce")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = millreduce(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn config(dir: &Path) -> String {
    let path = dir.join("small.toml");
    fs::write(&path, SMALL).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn simulate_writes_traces() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    let out = dir.path().join("sim");
    let stdout = ok(&["simulate", "--config", &cfg, "--seed", "4", "--out", out.to_str().unwrap()]);
    assert!(stdout.contains("products: 280"));
    let traces = fs::read_to_string(out.join("traces.csv")).unwrap();
    assert_eq!(traces.lines().count(), 281);
    assert!(out.join("bottlenecks.json").exists());
}

#[test]
fn prune_then_reduce_with_saved_model() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    let out = dir.path().join("prune");
    let out_s = out.to_str().unwrap();
    let stdout = ok(&["prune", "--config", &cfg, "--scheme", "a2", "--split", "chrono", "--out", out_s]);
    assert!(stdout.contains("scheme a2"));
    for f in ["model.json", "train_history.csv", "removal_log.csv"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let model = out.join("model.json");
    let model_s = model.to_str().unwrap();
    let ambiguous = millreduce(&["reduce", "--config", &cfg, "--model", model_s, "--repeats", "1"]);
    assert!(!ambiguous.status.success());
    let stdout = ok(&["reduce", "--config", &cfg, "--model", model_s, "--scheme", "a2", "--repeats", "1"]);
    assert!(stdout.contains("arrival-time MAE"));
}

#[test]
fn train_skips_pruning() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    let out = dir.path().join("train");
    ok(&["train", "--config", &cfg, "--seed", "9", "--out", out.to_str().unwrap()]);
    assert!(out.join("model.json").exists());
    assert!(!out.join("removal_log.csv").exists());
}

#[test]
fn study_and_report_agree() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    let out = dir.path().join("study");
    let out_s = out.to_str().unwrap();
    let stdout = ok(&["study", "--config", &cfg, "--scheme", "a3", "--trials", "1", "--out", out_s]);
    assert!(out.join("a3/summary.csv").exists());
    assert!(!out.join("a1").exists());
    let report = ok(&["report", "--out", out_s]);
    assert!(stdout.starts_with(&report));
    assert_eq!(report, fs::read_to_string(out.join("report.txt")).unwrap());
}

#[test]
fn bad_arguments_fail() {
    assert!(!millreduce(&["study", "--scheme", "a4"]).status.success());
    assert!(!millreduce(&["train", "--split", "sideways"]).status.success());
    assert!(!millreduce(&["simulate", "--config", "/nonexistent/config.toml"]).status.success());
    assert!(!millreduce(&["report", "--out", "/nonexistent/dir"]).status.success());
}
