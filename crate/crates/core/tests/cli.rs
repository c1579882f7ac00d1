mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nex_core::weights::read_weights;
use nex_core::NeuronKey;

use common::*;

fn nex(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nex"))
        .args(args)
        .env_remove("NEX_CONFIG")
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn miniset() -> PathBuf {
    fixture_dir().join("miniset")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn learn_weights_matches_golden_file() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("miniset.nexweights.jsonl");
    let o = nex(&["learn-weights", s(&miniset()), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let golden = fs::read(fixture_dir().join("miniset.nexweights.jsonl")).unwrap();
    assert_eq!(fs::read(&out).unwrap(), golden);

    let again = tmp.path().join("again.nexweights.jsonl");
    nex(&["learn-weights", s(&miniset()), "--out", s(&again)]);
    assert_eq!(fs::read(&again).unwrap(), golden);
}

#[test]
fn golden_file_agrees_with_straight_line_reference() {
    let golden = fs::read(fixture_dir().join("miniset.nexweights.jsonl")).unwrap();
    let weights = read_weights::<f64, _>(golden.as_slice()).unwrap();
    let traces: Vec<_> = [("a", "EEXXEEXXXXEE"), ("b", "EEXXEEXXEEXX")]
        .iter()
        .map(|(f, states)| {
            let (_, rows, tokens) = read_rows(&miniset().join(format!("{f}.nexcache.jsonl")));
            (rows, tokens, *states)
        })
        .collect();
    let want = reference_accumulators(&traces);
    assert_eq!(want.len(), weights.len());
    for (k, (p, n)) in want {
        let key = NeuronKey::from_packed(k);
        let got = weights.entries[&key];
        assert!((got.m_pos - p).abs() <= 1e-12 * p.max(1.0), "m_pos of {key:?}");
        assert!((got.m_neg - n).abs() <= 1e-12 * n.max(1.0), "m_neg of {key:?}");
        assert!((weights.weight(key) - reference_w(p, n)).abs() <= 1e-12);
    }
}

#[test]
fn all_short_traces_give_empty_weights_and_a_warning() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("short");
    fs::create_dir(&dir).unwrap();
    fs::copy(fixture_dir().join("credit3.nexcache.jsonl"), dir.join("credit3.nexcache.jsonl")).unwrap();
    let out = tmp.path().join("w.nexweights.jsonl");
    let o = nex(&["learn-weights", s(&dir), "--out", s(&out)]);
    assert!(o.status.success());
    assert!(stderr(&o).contains("weights are empty"), "{}", stderr(&o));
    let w = read_weights::<f64, _>(fs::read(&out).unwrap().as_slice()).unwrap();
    assert!(w.is_empty());
}

#[test]
fn validate_reports_file_and_line() {
    assert!(nex(&["validate", s(&miniset())]).status.success());

    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.nexcache.jsonl");
    let mut text = fs::read_to_string(miniset().join("a.nexcache.jsonl")).unwrap();
    text = text.replacen("\"t\":3,", "\"t\":3,\"acts\":oops,", 1);
    fs::write(&bad, text).unwrap();
    let o = nex(&["validate", s(tmp.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("bad.nexcache.jsonl: line 5"), "{}", stderr(&o));

    let empty = tmp.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let o = nex(&["validate", s(&empty)]);
    assert!(o.status.success());
    assert!(stderr(&o).contains("no caches found"));
}

#[test]
fn config_errors_and_env_fallback() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.json");
    fs::write(&cfg, r#"{"hmm":{"rhoo":0.9}}"#).unwrap();
    let o = nex(&["--config", s(&cfg), "validate", s(&miniset())]);
    assert_eq!(o.status.code(), Some(1));

    let cfg = tmp.path().join("run.json");
    fs::write(&cfg, r#"{"hmm":{"rho":0.9}}"#).unwrap();
    let out = tmp.path().join("w.nexweights.jsonl");
    let o = Command::new(env!("CARGO_BIN_EXE_nex"))
        .args(["learn-weights", s(&miniset()), "--out", s(&out)])
        .env("NEX_CONFIG", &cfg)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let header = fs::read_to_string(&out).unwrap();
    assert!(header.lines().next().unwrap().contains("\"rho\":0.9"));
}

#[test]
fn score_rank_curate_report() {
    let tmp = tempfile::tempdir().unwrap();
    let p = |n: &str| tmp.path().join(n);
    let golden = fixture_dir().join("miniset.nexweights.jsonl");

    let o = nex(&["score", s(&miniset()), "--weights", s(&golden), "--out", s(&p("a.scores.jsonl"))]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(p("a.scores.jsonl")).unwrap();
    let lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[0]["type"], "header");
    assert_eq!(lines[0]["calibration"], "reference");
    assert_eq!(lines[1]["trace_id"], "fixture-a");
    assert!(lines[1]["baselines"]["hes"].is_number());
    assert_eq!(lines[3]["type"], "model");
    let mean = (lines[1]["score"].as_f64().unwrap() + lines[2]["score"].as_f64().unwrap()) / 2.0;
    assert!((lines[3]["mean"].as_f64().unwrap() - mean).abs() < 1e-15);

    // The fixture traces are the weights' own mini-set.
    let o = nex(&["score", s(&miniset()), "--weights", s(&golden), "--disjoint"]);
    assert_eq!(o.status.code(), Some(1));

    let o = nex(&["score", s(&miniset()), "--candidate-id", "self", "--out", s(&p("b.scores.jsonl"))]);
    assert!(o.status.success());

    fs::write(
        p("acc.accuracies.jsonl"),
        "{\"candidate_id\":\"fixture\",\"benchmark\":\"m\",\"accuracy_pp\":50}\n\
         {\"candidate_id\":\"self\",\"benchmark\":\"m\",\"accuracy_pp\":40}\n",
    )
    .unwrap();
    let o = nex(&[
        "rank",
        s(&p("a.scores.jsonl")),
        s(&p("b.scores.jsonl")),
        "--accuracies",
        s(&p("acc.accuracies.jsonl")),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = String::from_utf8(o.stdout).unwrap();
    assert!(out.lines().nth(1).unwrap().contains("\"benchmark\":\"m\""));
    assert!(out.lines().last().unwrap().contains("\"benchmarks\":1"));

    let o = nex(&["curate", s(&p("a.scores.jsonl")), "--fraction", "0.5"]);
    assert!(o.status.success());
    let manifest: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(manifest["retained"], 1);
    assert_eq!(manifest["total"], 2);

    let rep = p("report");
    let o = nex(&[
        "report",
        "--out",
        s(&rep),
        "--scores",
        s(&p("a.scores.jsonl")),
        s(&p("b.scores.jsonl")),
        "--accuracies",
        s(&p("acc.accuracies.jsonl")),
        "--caches",
        s(&miniset()),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let slopes = fs::read_to_string(rep.join("slopes.csv")).unwrap();
    assert_eq!(slopes.lines().count(), 1 + 12 + 12);
    let segments = fs::read_to_string(rep.join("segments.csv")).unwrap();
    assert_eq!(segments.lines().nth(1).unwrap(), "fixture-a,0,2,E");
    let scatter = fs::read_to_string(rep.join("score_vs_accuracy.csv")).unwrap();
    assert_eq!(scatter.lines().count(), 3);
}

#[test]
fn report_on_empty_input_writes_header_only_files() {
    let tmp = tempfile::tempdir().unwrap();
    let rep = tmp.path().join("rep");
    let o = nex(&["report", "--out", s(&rep)]);
    assert!(o.status.success());
    assert!(stderr(&o).contains("empty"));
    for f in ["score_vs_accuracy.csv", "ranking.csv", "slopes.csv", "segments.csv"] {
        assert_eq!(fs::read_to_string(rep.join(f)).unwrap().lines().count(), 1, "{f}");
    }
}

#[test]
fn synth_output_validates_and_is_seeded() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        let o = nex(&["synth", "--traces", "3", "--seed", "5", "--out", s(d)]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    assert!(nex(&["validate", s(&a)]).status.success());
    let names: Vec<_> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names.len(), 6);
    for n in names {
        assert_eq!(fs::read(a.join(&n)).unwrap(), fs::read(b.join(&n)).unwrap());
    }
}
