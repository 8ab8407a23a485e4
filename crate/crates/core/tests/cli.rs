use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn gsc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gsc")).args(args).output().unwrap()
}

fn ok_json(args: &[&str]) -> Value {
    let o = gsc(args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn gen(dir: &Path, name: &str, n: usize, seed: u64) -> std::path::PathBuf {
    let out = dir.join(name);
    ok_json(&["gen", "--instances", &n.to_string(), "--seed", &seed.to_string(), "--id-prefix", name, "--out", p(&out)]);
    out
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"choices": 1}"#).unwrap();
    let o = gsc(&["gen", "--config", p(&cfg), "--out", p(&dir.path().join("x.jsonl"))]);
    assert_eq!(o.status.code(), Some(2));
    std::fs::write(&cfg, "{not json").unwrap();
    assert_eq!(gsc(&["gen", "--config", p(&cfg), "--out", p(&dir.path().join("x.jsonl"))]).status.code(), Some(2));
    let data = gen(dir.path(), "d", 10, 0);
    std::fs::write(&cfg, r#"{"train": {"lr": -1.0}}"#).unwrap();
    let o = gsc(&["train", "--model", "gsc", "--data", p(&data), "--dev", p(&data), "--config", p(&cfg), "--out", p(&dir.path().join("r"))]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn invalid_instances_exit_with_1() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.jsonl");
    std::fs::write(&bad, r#"{"id":"a","label":0,"choices":[{"nodes":[0,1],"edges":[[1,0,99]]},{"nodes":[0],"edges":[]}]}"#).unwrap();
    let o = gsc(&["train", "--model", "gsc", "--data", p(&bad), "--dev", p(&bad), "--out", p(&dir.path().join("r"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("99"));
}

#[test]
fn train_eval_inspect_overlap() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let train = gen(d, "train", 400, 1);
    let dev = gen(d, "dev", 200, 2);
    let cfg = d.join("run.json");
    std::fs::write(&cfg, r#"{"train": {"max_epochs": 15, "batch_size": 32, "early_stop_patience": null}}"#).unwrap();
    let mut preds = Vec::new();
    for seed in ["1", "2"] {
        let out = d.join(format!("gsc{seed}"));
        let t = ok_json(&["train", "--model", "gsc", "--data", p(&train), "--dev", p(&dev), "--config", p(&cfg), "--seed", seed, "--out", p(&out)]);
        assert_eq!(t["params"], 1537);
        assert_eq!(t["epochs_run"], 15);
        let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
        assert_eq!(metrics.lines().count(), 16);
        let pred = d.join(format!("p{seed}.jsonl"));
        let e = ok_json(&["eval", "--checkpoint", p(&out.join("checkpoint.json")), "--data", p(&dev), "--preds-out", p(&pred)]);
        assert_eq!(e["accuracy"], t["best_dev_accuracy"]);
        assert_eq!(std::fs::read(&pred).unwrap(), std::fs::read(out.join("dev_predictions.jsonl")).unwrap());
        preds.push(pred);
    }
    let o = gsc(&["inspect", "--checkpoint", p(&d.join("gsc1/checkpoint.json")), "--top-k", "5", "--data", p(&dev), "--traces-out", p(&d.join("t.json"))]);
    assert!(o.status.success());
    let csv = String::from_utf8(o.stdout).unwrap();
    assert_eq!(csv.lines().count(), 6);
    let traces: Value = serde_json::from_str(&std::fs::read_to_string(d.join("t.json")).unwrap()).unwrap();
    assert_eq!(traces.as_array().unwrap().len(), 1);

    let r = ok_json(&["overlap", "--a", p(&preds[0]), "--b", p(&preds[1]), "--gold", p(&dev)]);
    assert_eq!(r["total"], 200);
    // two trained runs agree far more often than independent 5-way guesses
    assert!(r["agreement"].as_f64().unwrap() > 50.0, "{r}");
    assert!(r["a_accuracy"].as_f64().unwrap() > 0.5 && r["b_accuracy"].as_f64().unwrap() > 0.5, "{r}");

    let short = d.join("short.jsonl");
    let lines: Vec<_> = std::fs::read_to_string(&preds[1]).unwrap().lines().take(10).map(String::from).collect();
    std::fs::write(&short, lines.join("\n") + "\n").unwrap();
    assert_eq!(gsc(&["overlap", "--a", p(&preds[0]), "--b", p(&short), "--gold", p(&dev)]).status.code(), Some(1));
}

#[test]
fn inspect_rejects_non_gsc_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = gen(d, "c", 30, 0);
    let cfg = d.join("run.json");
    std::fs::write(&cfg, r#"{"train": {"max_epochs": 1}}"#).unwrap();
    ok_json(&["train", "--model", "counter1", "--data", p(&data), "--dev", p(&data), "--config", p(&cfg), "--out", p(&d.join("c1"))]);
    assert_eq!(gsc(&["inspect", "--checkpoint", p(&d.join("c1/checkpoint.json"))]).status.code(), Some(2));
}

#[test]
fn regression_prune_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("reg.json");
    std::fs::write(&cfg, r#"{"samples": 400, "features": 6, "null_features": 3, "steps": 1500}"#).unwrap();
    let r = ok_json(&["prune", "--regression", "--config", p(&cfg), "--out", p(dir.path())]);
    assert_eq!(r["null_removed"], 3);
    assert_eq!(r["active_kept"], 3);
    assert!(dir.path().join("regression.json").exists());
    assert!(std::fs::read_to_string(dir.path().join("sparse_curve.csv")).unwrap().lines().count() > 2);
}

#[test]
fn bench_reports_a_fit() {
    let r = ok_json(&["bench", "--min-edges", "100", "--max-edges", "10000", "--points", "3", "--repetitions", "1", "--out", "/dev/null"]);
    assert!(r["slope"].as_f64().unwrap().is_finite());
}

#[test]
fn unknown_config_keys_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen(dir.path(), "d", 10, 0);
    let cfg = dir.path().join("typo.json");
    std::fs::write(&cfg, r#"{"train": {"batch": 32}}"#).unwrap();
    let o = gsc(&["train", "--model", "gsc", "--data", p(&data), "--dev", p(&data), "--config", p(&cfg), "--out", p(&dir.path().join("r"))]);
    assert_eq!(o.status.code(), Some(2));
}
