use std::path::Path;
use std::process::Command;

use noisy_channel::corpus::{Corpus, Format};
use noisy_channel::evalstats::error_distribution_table;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_noisy-channel"))
}

fn ok(cmd: &mut Command) {
    let out = cmd.output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn unknown_flag_exits_2_with_usage() {
    let out = bin().args(["simulate", "--frobnicate"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("Usage"), "{err}");
}

#[test]
fn domain_error_exits_1_with_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.jsonl");
    std::fs::write(&bad, "{not json}\n").unwrap();
    let out = bin().args(["train-confusion", "--train", s(&bad), "--out", s(&dir.path().join("m.json"))]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(String::from_utf8_lossy(&out.stderr).trim().lines().count(), 1);
}

#[test]
fn simulate_is_deterministic_and_eval_dist_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    ok(bin().args(["synth-corpus", "--n-turns", "400", "--seed", "3", "--out", s(&p("corpus.jsonl"))]));
    assert!(p("corpus.jsonl.manifest.json").exists());
    ok(bin().args(["train-confusion", "--train", s(&p("corpus.jsonl")), "--out", s(&p("m.json"))]));
    for out in ["h1.jsonl", "h2.jsonl"] {
        ok(bin().args(["simulate", "--model", s(&p("m.json")), "--in", s(&p("corpus.jsonl")), "--out", s(&p(out)), "--seed", "7"]));
    }
    let h1 = std::fs::read(p("h1.jsonl")).unwrap();
    assert_eq!(h1, std::fs::read(p("h2.jsonl")).unwrap());

    ok(bin().args(["eval-dist", "--real", s(&p("corpus.jsonl")), "--sim", s(&p("h1.jsonl")), "--out", s(&p("dist.csv"))]));
    let real = Corpus::load(p("corpus.jsonl"), Format::Jsonl).unwrap();
    let sim = Corpus::load(p("h1.jsonl"), Format::Jsonl).unwrap();
    let expected = error_distribution_table(&[("real", real.error_stats().unwrap()), ("simulated", sim.error_stats().unwrap())]);
    assert_eq!(std::fs::read_to_string(p("dist.csv")).unwrap(), expected.to_csv().unwrap());

    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(p("h1.jsonl.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "simulate");
    assert_eq!(manifest["seed"], 7);
}

#[test]
fn seed_comes_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    ok(bin().env("NOISY_CHANNEL_SEED", "42").args(["synth-corpus", "--n-turns", "50", "--out", s(&a)]));
    ok(bin().args(["synth-corpus", "--n-turns", "50", "--seed", "42", "--out", s(&b)]));
    assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
}

#[test]
fn quick_pipeline_writes_summary_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    ok(bin().args(["pipeline", "--quick", "--seed", "5", "--out-dir", s(&out)]));
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["seed"], 5);
    assert!(out.join("manifest.json").exists());
    assert!(out.join("error_distribution.csv").exists());
}
