//! End-to-end tests of the tasd binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::tempdir;

fn tasd(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tasd"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = tasd(args, cwd);
    assert!(
        out.status.success(),
        "tasd {args:?} failed:\n{}{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails(args: &[&str], cwd: &Path) -> String {
    let out = tasd(args, cwd);
    assert!(!out.status.success(), "tasd {args:?} unexpectedly succeeded");
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn micro_config(dir: &Path, data: &str, epochs: usize) -> String {
    let cfg = serde_json::json!({
        "model": {"d": 8, "h": 2, "n_layers": 1, "view_len": 1,
                   "max_seq_len": 80, "M_max": 2, "N_max": 2},
        "train": {"lr": 1e-3, "epochs": epochs, "patience": 5, "seed": 7},
        "tr": {"enabled": false},
        "decode": {"strategy": "greedy", "max_len": 80},
        "data": {"path": data, "split": {"ratios": [4.0, 1.0, 1.0]}}
    });
    let path = dir.join("run-config.json");
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path.display().to_string()
}

#[test]
fn synth_is_deterministic_and_validates() {
    let dir = tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "--out", "a.jsonl", "--n-records", "5", "--m", "2", "--n", "2", "--seed", "3"], d);
    ok(&["synth", "--out", "b.jsonl", "--n-records", "5", "--m", "2", "--n", "2", "--seed", "3"], d);
    assert_eq!(fs::read(d.join("a.jsonl")).unwrap(), fs::read(d.join("b.jsonl")).unwrap());
    assert_eq!(fs::read_to_string(d.join("a.jsonl")).unwrap().lines().count(), 5);
    let err = fails(&["synth", "--out", "c.jsonl", "--schema", "fancy"], d);
    assert!(err.contains("unknown schema"), "stderr: {err}");
    let err = fails(&["synth", "--out", "c.jsonl", "--n-records", "0"], d);
    assert!(err.contains("positive"), "stderr: {err}");
}

#[test]
fn serialize_matches_synth_targets() {
    let dir = tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "--out", "data.jsonl", "--n-records", "3", "--m", "1", "--n", "2"], d);
    let out = ok(&["serialize", "data.jsonl"], d);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 3);
    for (line, raw) in
        lines.iter().zip(fs::read_to_string(d.join("data.jsonl")).unwrap().lines())
    {
        let rec: serde_json::Value = serde_json::from_str(raw).unwrap();
        assert_eq!(*line, rec["target"].as_str().unwrap());
    }
}

#[test]
fn evaluate_reports_metrics() {
    let dir = tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("refs.txt"), "the cat sat\na quick fox\n").unwrap();
    fs::write(d.join("hyps.txt"), "the cat sat\na quick fox\n").unwrap();
    let out = ok(&["evaluate", "--refs", "refs.txt", "--hyps", "hyps.txt"], d);
    let report: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(report["n_pairs"], 2);
    assert!((report["bleu"][0].as_f64().unwrap() - 100.0).abs() < 1e-9);
    assert!((report["rouge_l"].as_f64().unwrap() - 100.0).abs() < 1e-9);
    fs::write(d.join("short.txt"), "only one line\n").unwrap();
    let err = fails(&["evaluate", "--refs", "refs.txt", "--hyps", "short.txt"], d);
    assert!(err.contains("reference lines"), "stderr: {err}");
}

#[test]
fn train_writes_artifacts_and_modes_differ() {
    let dir = tempdir().unwrap();
    let d = dir.path();
    ok(
        &["synth", "--out", "data.jsonl", "--n-records", "6", "--m", "1", "--n", "2",
          "--word-pool", "6", "--seed", "42"],
        d,
    );
    let cfg = micro_config(d, "data.jsonl", 2);
    ok(&["train", "--config", &cfg, "--mode", "TASD", "--out-dir", "run-tasd"], d);
    for f in ["m1.ckpt", "m2.ckpt", "vocab.txt", "drafts.jsonl", "run.json", "history.json"] {
        assert!(d.join("run-tasd").join(f).exists(), "missing {f}");
    }
    let run: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("run-tasd/run.json")).unwrap()).unwrap();
    assert_eq!(run["mode"], "TASD");
    let drafts = fs::read_to_string(d.join("run-tasd/drafts.jsonl")).unwrap();
    assert_eq!(drafts.lines().count(), 5, "train + val drafts");
    ok(&["train", "--config", &cfg, "--mode", "wo-d", "--out-dir", "run-wod"], d);
    assert!(d.join("run-wod/m1.ckpt").exists());
    assert!(!d.join("run-wod/m2.ckpt").exists(), "single pass must not write m2");
    let err = fails(&["train", "--config", &cfg, "--mode", "both"], d);
    assert!(err.contains("unknown mode"), "stderr: {err}");
}

#[test]
fn tr_override_lands_in_run_json() {
    let dir = tempdir().unwrap();
    let d = dir.path();
    ok(
        &["synth", "--out", "data.jsonl", "--n-records", "6", "--m", "2", "--n", "2",
          "--word-pool", "6", "--seed", "1"],
        d,
    );
    let cfg = micro_config(d, "data.jsonl", 1);
    ok(&["train", "--config", &cfg, "--tr", "first", "--out-dir", "run-tr"], d);
    let run: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("run-tr/run.json")).unwrap()).unwrap();
    assert_eq!(run["config"]["tr"]["enabled"], true);
    assert_eq!(run["config"]["tr"]["pass"], "first");
    let err = fails(&["train", "--config", &cfg, "--tr", "sometimes"], d);
    assert!(err.contains("--tr"), "stderr: {err}");
}

#[test]
fn generate_runs_both_strategies_and_is_deterministic() {
    let dir = tempdir().unwrap();
    let d = dir.path();
    ok(
        &["synth", "--out", "data.jsonl", "--n-records", "6", "--m", "1", "--n", "2",
          "--word-pool", "6", "--seed", "42"],
        d,
    );
    let cfg = micro_config(d, "data.jsonl", 2);
    ok(&["train", "--config", &cfg, "--out-dir", "run"], d);
    ok(
        &["generate", "--run-dir", "run", "--data", "data.jsonl", "--out", "g1.jsonl",
          "--text-out", "t1.txt", "--greedy"],
        d,
    );
    ok(
        &["generate", "--run-dir", "run", "--data", "data.jsonl", "--out", "g2.jsonl", "--greedy"],
        d,
    );
    assert_eq!(fs::read(d.join("g1.jsonl")).unwrap(), fs::read(d.join("g2.jsonl")).unwrap());
    let first: serde_json::Value = serde_json::from_str(
        fs::read_to_string(d.join("g1.jsonl")).unwrap().lines().next().unwrap(),
    )
    .unwrap();
    assert!(first["id"].is_string() && first["draft"].is_string() && first["final_text"].is_string());
    assert_eq!(fs::read_to_string(d.join("t1.txt")).unwrap().lines().count(), 6);
    ok(
        &["generate", "--run-dir", "run", "--data", "data.jsonl", "--out", "g3.jsonl",
          "--beam", "2"],
        d,
    );
    let err = fails(
        &["generate", "--run-dir", "run", "--data", "data.jsonl", "--beam", "2", "--greedy"],
        d,
    );
    assert!(err.contains("--greedy") || err.contains("cannot be used"), "stderr: {err}");
    let err = fails(&["generate", "--run-dir", "nowhere", "--data", "data.jsonl"], d);
    assert!(err.contains("run.json"), "stderr: {err}");
}

#[test]
fn bad_config_exits_nonzero() {
    let dir = tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("bad.json"), r#"{"model":{"d":30}}"#).unwrap();
    let err = fails(&["train", "--config", "bad.json"], d);
    assert!(err.contains("multiple of h"), "stderr: {err}");
    fs::write(d.join("typo.json"), r#"{"modle":{}}"#).unwrap();
    let err = fails(&["train", "--config", "typo.json"], d);
    assert!(err.contains("unknown field"), "stderr: {err}");
}
