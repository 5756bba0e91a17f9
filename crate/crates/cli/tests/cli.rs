use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

fn framemind(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_framemind")).args(args).output().expect("binary runs")
}

fn gen(dir: &Path, count: usize, seed: u64) -> Output {
    framemind(&["gen", "--count", &count.to_string(), "--seed", &seed.to_string(), "--out", dir.to_str().unwrap()])
}

fn tree_hashes(dir: &Path) -> Vec<(String, String)> {
    let mut out = Vec::new();
    for entry in walk(dir) {
        let bytes = fs::read(&entry).unwrap();
        let rel = entry.strip_prefix(dir).unwrap().display().to_string();
        out.push((rel, hex::encode(Sha256::digest(&bytes))));
    }
    out.sort();
    out
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut files = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            files.extend(walk(&p));
        } else {
            files.push(p);
        }
    }
    files
}

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let path = dir.join("run.toml");
    fs::write(&path, body).unwrap();
    path
}

#[test]
fn gen_writes_manifests_and_tasks() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("d");
    let o = gen(&out, 10, 3);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let manifests = fs::read_dir(out.join("videos")).unwrap().count();
    assert_eq!(manifests, 10);
    let tasks = fs::read_to_string(out.join("tasks.jsonl")).unwrap();
    assert_eq!(tasks.lines().count(), 20);
    let summary: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["tasks"], 20);
}

#[test]
fn gen_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert!(gen(&a, 4, 11).status.success());
    assert!(gen(&b, 4, 11).status.success());
    assert_eq!(tree_hashes(&a), tree_hashes(&b));
}

#[test]
fn gen_zero_count_gives_empty_task_file() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("empty");
    let o = gen(&out, 0, 0);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(fs::read_to_string(out.join("tasks.jsonl")).unwrap(), "");
}

#[test]
fn gen_into_unwritable_path_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let blocker = tmp.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let o = gen(&blocker.join("sub"), 2, 0);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("cannot write dataset"));
}

#[test]
fn invalid_config_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "dataset = \"d\"\noutput_dir = \"o\"\n[train]\nclip_epsilon = -1.0\n");
    assert_eq!(framemind(&["train", "--config", cfg.to_str().unwrap()]).status.code(), Some(2));
    let cfg = write_config(tmp.path(), "dataset = \"d\"\noutput_dir = \"o\"\nnot_a_field = 1\n");
    assert_eq!(framemind(&["train", "--config", cfg.to_str().unwrap()]).status.code(), Some(2));
    let missing = tmp.path().join("nope.toml");
    assert_eq!(framemind(&["train", "--config", missing.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn zero_steps_checkpoint_is_the_initial_policy() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(gen(&tmp.path().join("d"), 2, 0).status.success());
    let cfg = write_config(tmp.path(), "dataset = \"d\"\noutput_dir = \"out\"\nsteps = 0\n");
    let o = framemind(&["train", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let ck: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("out/checkpoint.json")).unwrap()).unwrap();
    let params: Vec<f64> = serde_json::from_value(ck["policy"]["params"].clone()).unwrap();
    assert_eq!(params, framemind::toyworld::ToyPolicy::new().params);
    assert_eq!(fs::read_to_string(tmp.path().join("out/metrics.jsonl")).unwrap(), "");
}

#[test]
fn train_then_eval() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(gen(&tmp.path().join("d"), 4, 0).status.success());
    assert!(gen(&tmp.path().join("e"), 3, 500).status.success());
    let cfg = write_config(tmp.path(), "dataset = \"d\"\neval_dataset = \"e\"\noutput_dir = \"out\"\nsteps = 5\n");
    let o = framemind(&["train", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let metrics = fs::read_to_string(tmp.path().join("out/metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 5);
    let first: serde_json::Value = serde_json::from_str(metrics.lines().next().unwrap()).unwrap();
    for key in ["step", "objective", "kl", "mean_reward", "mean_acc", "both_tool_rate"] {
        assert!(first.get(key).is_some(), "metrics record lacks {key}");
    }

    let ck = tmp.path().join("out/checkpoint.json");
    let o = framemind(&["eval", "--checkpoint", ck.to_str().unwrap(), "--dataset", tmp.path().join("e").to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let kinds: Vec<&String> = report["per_kind"].as_object().unwrap().keys().collect();
    assert_eq!(kinds, ["spatial", "temporal"]);
    for key in ["accuracy", "mean_turns", "tool_usage"] {
        assert!(report.get(key).is_some(), "report lacks {key}");
    }
}

#[test]
fn eval_with_missing_files_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let ck = tmp.path().join("none.json");
    let o = framemind(&["eval", "--checkpoint", ck.to_str().unwrap(), "--dataset", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn ablate_bonus_writes_both_arms() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(gen(&tmp.path().join("d"), 3, 0).status.success());
    let cfg = write_config(tmp.path(), "dataset = \"d\"\neval_dataset = \"d\"\noutput_dir = \"ab\"\nsteps = 3\n");
    let o = framemind(&["ablate-bonus", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for arm in ["bonus", "strict"] {
        assert!(tmp.path().join("ab").join(arm).join("metrics.jsonl").is_file());
    }
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("ab/ablation.json")).unwrap()).unwrap();
    assert!(report["accuracy_gap"].is_number());
    let strict_cfg = fs::read_to_string(tmp.path().join("ab/strict/config.toml")).unwrap();
    assert!(strict_cfg.contains("strict_gating = true"));
}

#[test]
fn remote_judge_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "dataset = \"d\"\noutput_dir = \"o\"\njudge = \"remote\"\n");
    let o = framemind(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}
