//! The `lacon` binary end to end: artifacts, exit codes and reproducibility.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn lacon(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lacon")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Synthetic corpus written by the binary itself; returns (data.jsonl, labels.txt).
fn synth(dir: &TempDir, name: &str, extra: &[&str]) -> (PathBuf, PathBuf) {
    let out = dir.path().join(name);
    let mut args = vec!["synth", "--out", p(&out)];
    args.extend_from_slice(extra);
    let o = lacon(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    (out.join("data.jsonl"), out.join("labels.txt"))
}

fn train(dir: &TempDir, data: &Path, name: &str, extra: &[&str]) -> PathBuf {
    let out = dir.path().join(name);
    let mut args = vec!["train", "--dataset", p(data), "--out", p(&out)];
    args.extend_from_slice(extra);
    if !extra.contains(&"--epochs") {
        args.extend_from_slice(&["--epochs", "8"]);
    }
    let o = lacon(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    out
}

#[test]
fn missing_dataset_exits_with_data_code() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("absent.jsonl");
    let o = lacon(&["train", "--dataset", p(&missing), "--out", p(dir.path())]);
    assert_eq!(code(&o), 2);
}

#[test]
fn empty_dataset_exits_with_data_code() {
    let dir = TempDir::new().unwrap();
    let empty = dir.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    assert_eq!(code(&lacon(&["train", "--dataset", p(&empty), "--out", p(dir.path())])), 2);
}

#[test]
fn invalid_configuration_exits_with_config_code() {
    let dir = TempDir::new().unwrap();
    let (data, _) = synth(&dir, "d", &[]);
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "tau = 0.2\nbatch_size = zero\n").unwrap();
    let out = dir.path().join("o");
    assert_eq!(code(&lacon(&["train", "--dataset", p(&data), "--out", p(&out), "--config", p(&cfg)])), 1);
    assert_eq!(code(&lacon(&["train", "--dataset", p(&data), "--out", p(&out), "--tau", "-1"])), 1);
    assert_eq!(code(&lacon(&["train", "--no-such-flag"])), 1);
    assert!(!out.join("metrics.json").exists());
}

#[test]
fn training_writes_three_artifacts_and_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let (data, labels) = synth(&dir, "d", &["--seed", "4"]);
    let a = train(&dir, &data, "a", &["--runs", "1", "--seed", "7", "--labels", p(&labels)]);
    let b = train(&dir, &data, "b", &["--runs", "1", "--seed", "7", "--labels", p(&labels)]);
    for f in ["metrics.json", "checkpoint.json", "config.txt"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let m = read_json(&a.join("metrics.json"));
    assert_eq!(m["config"]["seed"], 7);
    assert_eq!(m["runs"].as_array().unwrap().len(), 1);
    assert_eq!(m["summary"]["best_dev"]["std"], 0.0);
    let cfg = fs::read_to_string(a.join("config.txt")).unwrap();
    assert!(cfg.contains("seed = 7"), "{cfg}");
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = TempDir::new().unwrap();
    let (data, _) = synth(&dir, "d", &["--per-class", "30"]);
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "# small run\ntau = 0.3\nruns = 1\nepochs = 2\n").unwrap();
    let out = train(&dir, &data, "o", &["--config", p(&cfg), "--tau", "0.25", "--epochs", "3"]);
    let m = read_json(&out.join("metrics.json"));
    assert_eq!(m["config"]["loss"]["tau"], 0.25);
    assert_eq!(m["config"]["epochs"], 3);
    assert_eq!(m["config"]["runs"], 1);
}

#[test]
fn eval_on_dev_reproduces_best_dev_metrics() {
    let dir = TempDir::new().unwrap();
    let (data, _) = synth(&dir, "d", &["--seed", "2"]);
    let out = train(&dir, &data, "t", &["--runs", "2", "--mode", "lacon-fusion"]);
    let m = read_json(&out.join("metrics.json"));
    let seed = m["checkpoint_seed"].as_u64().unwrap();
    let run = m["runs"].as_array().unwrap().iter().find(|r| r["config"]["seed"].as_u64() == Some(seed)).unwrap();
    let o = lacon(&["eval", "--checkpoint", p(&out.join("checkpoint.json")), "--dataset", p(&data), "--split", "dev"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let e: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(e["metrics"], run["best_dev"]);
}

#[test]
fn eval_rejects_checkpoint_with_other_class_count() {
    let dir = TempDir::new().unwrap();
    let (two, _) = synth(&dir, "two", &[]);
    let (three, _) = synth(&dir, "three", &["--classes", "3", "--per-class", "20"]);
    let out = train(&dir, &two, "t", &["--runs", "1", "--epochs", "1"]);
    let ck = out.join("checkpoint.json");
    assert_eq!(code(&lacon(&["eval", "--checkpoint", p(&ck), "--dataset", p(&three)])), 4);
    let broken = dir.path().join("broken.json");
    fs::write(&broken, "{\"format\": \"something-else\"}").unwrap();
    assert_eq!(code(&lacon(&["eval", "--checkpoint", p(&broken), "--dataset", p(&two)])), 4);
}

#[test]
fn sample_writes_exact_counts() {
    let dir = TempDir::new().unwrap();
    let (data, labels) = synth(&dir, "d", &["--per-class", "200"]);
    let few = dir.path().join("few");
    let o = lacon(&["sample", "--dataset", p(&data), "--labels", p(&labels), "--k", "20", "--seed", "3", "--out", p(&few)]);
    assert_eq!(code(&o), 0);
    let m = read_json(&few.join("manifest.json"));
    assert_eq!(m["counts"]["train"], 40);
    assert_eq!(m["counts"]["dev"], 40);
    assert_eq!(fs::read_to_string(few.join("train.jsonl")).unwrap().lines().count(), 40);

    let imb = dir.path().join("imb");
    let o = lacon(&["sample", "--dataset", p(&data), "--rho", "5", "--minority", "class1", "--out", p(&imb)]);
    assert_eq!(code(&o), 0);
    let m = read_json(&imb.join("manifest.json"));
    assert_eq!(m["counts"]["class1"], 32);
    assert_eq!(m["counts"]["class0"], 160);
    assert_eq!(m["minority"], "class1");

    let o = lacon(&["sample", "--dataset", p(&data), "--rho", "20", "--out", p(&dir.path().join("x"))]);
    assert_eq!(code(&o), 2);
}

#[test]
fn diagnose_identity_embeddings() {
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("e.csv");
    fs::write(&csv, "kind,id,class,d0,d1\ninstance,1,1,1,0\ninstance,2,2,0,1\nlabel,1,1,1,0\nlabel,2,2,0,1\n").unwrap();
    let out = dir.path().join("diag");
    let o = lacon(&["diagnose", "--embeddings", p(&csv), "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let d = read_json(&out.join("diagnostics.json"));
    let sv: Vec<f64> = d["report"]["singular_values"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert!(sv.iter().all(|s| (s - 1.0).abs() < 1e-12), "{sv:?}");
    assert!(d["report"]["alignment"].as_f64().unwrap().abs() < 1e-12);
}

#[test]
fn export_writes_instance_and_label_rows() {
    let dir = TempDir::new().unwrap();
    let (data, _) = synth(&dir, "d", &["--classes", "3", "--per-class", "20"]);
    let out = train(&dir, &data, "t", &["--runs", "1", "--epochs", "2"]);
    let ex = dir.path().join("ex");
    let ck = out.join("checkpoint.json");
    assert_eq!(code(&lacon(&["export", "--checkpoint", p(&ck), "--dataset", p(&data), "--out", p(&ex)])), 0);
    let csv = fs::read_to_string(ex.join("embeddings.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 60 + 3);
    assert!(csv.starts_with("kind,id,class,d0,"));
    let o = lacon(&["diagnose", "--embeddings", p(&ex.join("embeddings.csv"))]);
    assert_eq!(code(&o), 0);
}

#[test]
fn sweep_covers_default_temperature_grid() {
    let dir = TempDir::new().unwrap();
    let (data, _) = synth(&dir, "d", &["--per-class", "20"]);
    let out = dir.path().join("sw");
    let o = lacon(&[
        "sweep",
        "--dataset",
        p(&data),
        "--out",
        p(&out),
        "--lambdas",
        "0.5",
        "--heads-grid",
        "4",
        "--sweep-runs",
        "1",
        "--epochs",
        "2",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let s = read_json(&out.join("sweep.json"));
    assert_eq!(s["results"].as_array().unwrap().len(), 10);
    assert!(s["winner"].is_object());
    assert!(s["failures"].as_array().unwrap().is_empty());
}
