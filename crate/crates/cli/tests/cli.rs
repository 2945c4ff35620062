use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn fixture(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/fixtures").join(name).display().to_string()
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_supportsim")).args(args).output().unwrap()
}

fn code(args: &[&str]) -> i32 {
    run(args).status.code().unwrap()
}

fn tmp(dir: &tempfile::TempDir, name: &str) -> String {
    dir.path().join(name).display().to_string()
}

#[test]
fn qc_exit_codes() {
    let personas = fixture("personas.jsonl");
    assert_eq!(code(&["--quiet", "qc", "--corpus", &fixture("corpus.jsonl"), "--personas", &personas]), 0);
    let dir = tempfile::tempdir().unwrap();
    let report = tmp(&dir, "qc.json");
    let args = ["--quiet", "qc", "--corpus", &fixture("qc_fail_17.jsonl"), "--personas", &personas, "--report", &report];
    assert_eq!(code(&args), 1);
    let r: Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["summary"]["passed"], 0);
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&["qc", "--corpus", "x", "--personas", "y", "--bogus"]), 2);
    let out = run(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("Commands:") && err.contains("generate"), "{err}");
    assert_eq!(code(&[]), 2);
    assert_eq!(code(&["--help"]), 0);
    assert_eq!(code(&["export", "--corpus", "c", "--out", "o", "--mode", "verbose"]), 2);
}

#[test]
fn help_json_lists_every_subcommand() {
    let out = run(&["--help-json"]);
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    let names: Vec<&str> = v["subcommands"].as_array().unwrap().iter().map(|s| s["name"].as_str().unwrap()).collect();
    assert_eq!(
        names,
        ["ingest", "personas", "generate", "qc", "stats", "strategies", "transitions", "coverage", "eval", "export", "import", "serve"]
    );
    assert_eq!(v["exit_codes"]["2"].as_str().map(|s| s.starts_with("usage")), Some(true));
}

#[test]
fn config_file_errors_and_layering() {
    let dir = tempfile::tempdir().unwrap();
    let bad = tmp(&dir, "bad.toml");
    fs::write(&bad, "seeed = 1\n").unwrap();
    assert_eq!(code(&["--config", &bad, "stats", "--corpus", &fixture("corpus.jsonl"), "--out", &tmp(&dir, "s.json")]), 2);

    // The file's ingest threshold applies unless the flag overrides it.
    let cfg = tmp(&dir, "run.toml");
    fs::write(&cfg, "quiet = true\n[ingest]\nmin_words = 10000\n").unwrap();
    let scen = fixture("scenarios.jsonl");
    assert_eq!(code(&["--config", &cfg, "ingest", "--in", &scen, "--out", &tmp(&dir, "a.jsonl")]), 0);
    assert_eq!(fs::read_to_string(tmp(&dir, "a.jsonl")).unwrap(), "");
    let args = ["--config", &cfg, "ingest", "--in", &scen, "--out", &tmp(&dir, "b.jsonl"), "--min-words", "65"];
    assert_eq!(code(&args), 0);
    assert_eq!(fs::read_to_string(tmp(&dir, "b.jsonl")).unwrap().lines().count(), 10);
}

#[test]
fn existing_outputs_need_force() {
    let dir = tempfile::tempdir().unwrap();
    let out = tmp(&dir, "stats.json");
    fs::write(&out, "keep").unwrap();
    let args = ["--quiet", "stats", "--corpus", &fixture("corpus.jsonl"), "--out", &out];
    assert_ne!(code(&args), 0);
    assert_eq!(fs::read_to_string(&out).unwrap(), "keep");
    assert_eq!(code(&[&["--force"], &args[..]].concat()), 0);
    let v: Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["sessions"], 10);
}

#[test]
fn export_writes_one_record_per_supporter_turn() {
    let dir = tempfile::tempdir().unwrap();
    for (mode, mask) in [("plain", "all"), ("reasoning", "all"), ("reasoning", "situation,strategy"), ("reasoning", "none")] {
        let out = tmp(&dir, &format!("{mode}-{mask}.jsonl"));
        let args = ["--quiet", "export", "--corpus", &fixture("corpus.jsonl"), "--mode", mode, "--mask", mask, "--out", &out];
        assert_eq!(code(&args), 0, "{mode} {mask}");
        let text = fs::read_to_string(&out).unwrap();
        assert_eq!(text.lines().count(), 120);
        let first: Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(first["schema"], "sft/1");
        let target = first["target"].as_str().unwrap();
        assert_eq!(target.contains("[SEEKER'S SITUATION]"), mode == "reasoning" && mask != "none");
        assert_eq!(target.contains("[SEEKER'S THOUGHT]"), mode == "reasoning" && mask == "all");
    }
}

#[test]
fn import_and_analytics_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let imported = tmp(&dir, "imported.jsonl");
    assert_eq!(code(&["--quiet", "import", "--in", &fixture("esconv_sample.json"), "--out", &imported]), 0);
    assert_eq!(fs::read_to_string(&imported).unwrap().lines().count(), 2);

    let corpus = fixture("corpus.jsonl");
    let strategies = tmp(&dir, "strategies.json");
    assert_eq!(code(&["--quiet", "strategies", "--corpus", &corpus, "--out", &strategies]), 0);
    assert!(PathBuf::from(&strategies).with_extension("csv").exists());
    let transitions = tmp(&dir, "transitions.json");
    assert_eq!(code(&["--quiet", "transitions", "--corpus", &corpus, "--out", &transitions]), 0);
    let t: Value = serde_json::from_str(&fs::read_to_string(&transitions).unwrap()).unwrap();
    // The walk stops early at a strategy with no outgoing edges left.
    let path = t["top_path"].as_array().unwrap();
    assert!((2..=5).contains(&path.len()), "{path:?}");
    assert_eq!(t["top_sequence"].as_array().unwrap().len(), 5);
    let coverage = tmp(&dir, "coverage.json");
    let args = [
        "--quiet", "coverage", "--corpus", &corpus, "--personas", &fixture("personas.jsonl"),
        "--embeddings", &fixture("embeddings_toy.txt"), "--out", &coverage,
    ];
    assert_eq!(code(&args), 0);
    assert!(PathBuf::from(&coverage).with_extension("csv").exists());
}

#[test]
fn eval_scores_identical_predictions_at_100() {
    let dir = tempfile::tempdir().unwrap();
    let lines = "harbor anchor sailor tide\ngarden tulip orchard meadow blossom\n";
    let pred = tmp(&dir, "pred.txt");
    fs::write(&pred, lines).unwrap();
    let out = tmp(&dir, "eval.json");
    let args = ["--quiet", "eval", "--pred", &pred, "--ref", &pred, "--embeddings", &fixture("embeddings_toy.txt"), "--out", &out];
    assert_eq!(code(&args), 0);
    let v: Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["b1"], 100.0, "{v}");
    assert_eq!(v["rouge_l"], 100.0, "{v}");
}
