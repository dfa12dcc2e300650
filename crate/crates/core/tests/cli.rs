use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn hetmarl(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hetmarl")).args(args).current_dir(cwd).output().unwrap()
}

const TINY_B: &str = "seed = 3
[scenario]
scenario_id = \"B\"
horizon = 30
[model]
sharing_mode = \"hetgppo\"
width = 8
[train]
iterations = 2
batch_size = 120
minibatch_size = 40
sgd_iters = 2
envs_per_worker = 4
[eval]
normalization_anchor = 1.0
[io]
checkpoint_every = 1
";

fn trained(dir: &Path) -> std::path::PathBuf {
    fs::write(dir.join("b.toml"), TINY_B).unwrap();
    let out = hetmarl(&["train", "--config", "b.toml", "--out", "run"], dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    dir.join("run")
}

#[test]
fn unknown_subcommand_exits_with_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = hetmarl(&["frobnicate"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_writes_metrics_checkpoints_and_snapshot() {
    let tmp = tempfile::tempdir().unwrap();
    let run = trained(tmp.path());
    let metrics = fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 3);
    assert!(run.join("ck_000000.bin").exists());
    assert!(run.join("ck_000002.bin").exists());
    let snap = fs::read_to_string(run.join("config.toml")).unwrap();
    assert!(snap.contains("seed = 3"), "{snap}");

    let out = hetmarl(&["inspect-checkpoint", "--checkpoint", "run"], tmp.path());
    assert!(out.status.success());
    let manifest: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(manifest["iteration"], 2);
}

#[test]
fn seed_flag_overrides_config() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("b.toml"), TINY_B).unwrap();
    let out = hetmarl(&["train", "--config", "b.toml", "--out", "run", "--seed", "9"], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let snap = fs::read_to_string(tmp.path().join("run/config.toml")).unwrap();
    assert!(snap.contains("seed = 9"), "{snap}");
}

#[test]
fn misspelled_key_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("bad.toml"), TINY_B.replace("sgd_iters", "sgd_iter")).unwrap();
    let out = hetmarl(&["train", "--config", "bad.toml", "--out", "run"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("train.sgd_iter"), "{err}");
    assert!(!tmp.path().join("run/metrics.csv").exists());
}

#[test]
fn vector_field_rejects_scenario_b() {
    let tmp = tempfile::tempdir().unwrap();
    trained(tmp.path());
    let out = hetmarl(&["vector-field", "--checkpoint", "run", "--out", "vf.csv"], tmp.path());
    assert!(!out.status.success());
    assert!(!tmp.path().join("vf.csv").exists());
}

#[test]
fn sweep_writes_one_row_per_level() {
    let tmp = tempfile::tempdir().unwrap();
    trained(tmp.path());
    let args = ["sweep", "--checkpoint", "run", "--config", "b.toml", "--levels", "0:2:50", "--runs", "100", "--out", "s.csv"];
    let out = hetmarl(&args, tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(tmp.path().join("s.csv")).unwrap();
    assert_eq!(csv.lines().count(), 51);
    assert!(tmp.path().join("s.csv.config.toml").exists());
}

#[test]
fn evaluate_and_rollout_write_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    trained(tmp.path());
    let out = hetmarl(&["evaluate", "--checkpoint", "run", "--runs", "3", "--out", "e.json"], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("e.json")).unwrap()).unwrap();
    assert_eq!(summary["n_runs"], 3);

    let out = hetmarl(&["rollout", "--checkpoint", "run", "--out", "r.jsonl"], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let lines = fs::read_to_string(tmp.path().join("r.jsonl")).unwrap().lines().count();
    assert_eq!(lines, 31);
}
