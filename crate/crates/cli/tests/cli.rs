use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const ASSIGN_RECORD: &str = r#"{"nl":"set a to 10","tree":{"type":"Module","literal":null,"attrs":[["body","list",[{"type":"Assign","literal":null,"attrs":[["target","list",[{"type":"Name","literal":null,"attrs":[["id","single",[{"type":"string","literal":{"category":"string","value":"a"},"attrs":[]}]]]}]],["value","single",[{"type":"Num","literal":null,"attrs":[["n","single",[{"type":"number","literal":{"category":"number","value":"10"},"attrs":[]}]]]}]]]}]]]}}"#;

fn treecode(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_treecode"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], dir: &Path) -> String {
    let out = treecode(args, dir);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn path(dir: &TempDir, name: &str) -> PathBuf {
    dir.path().join(name)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn manifest(p: &Path) -> Value {
    let mut m = p.as_os_str().to_owned();
    m.push(".manifest.json");
    serde_json::from_str(&fs::read_to_string(m).unwrap()).unwrap()
}

#[test]
fn induce_assign_counts_and_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let corpus = path(&dir, "assign.jsonl");
    fs::write(&corpus, format!("{ASSIGN_RECORD}\n")).unwrap();
    let g1 = path(&dir, "g1.json");
    let g2 = path(&dir, "g2.json");
    let stdout = ok(&["induce", "--corpus", s(&corpus), "--out", s(&g1)], dir.path());
    assert!(stdout.contains("object types     8"), "{stdout}");
    ok(&["induce", "--corpus", s(&corpus), "--out", s(&g2)], dir.path());
    assert_eq!(fs::read(&g1).unwrap(), fs::read(&g2).unwrap());

    let m = manifest(&g1);
    assert_eq!(m["command"], "induce");
    assert_eq!(m["exit_code"], 0);
    assert_eq!(m["results"]["object_types"], 8);
    let hash = m["inputs"][s(&corpus)].as_str().unwrap();
    assert_eq!(hash.len(), 64);
}

#[test]
fn missing_corpus_is_an_io_error() {
    let dir = TempDir::new().unwrap();
    let out = treecode(&["induce", "--corpus", "nope.jsonl", "--out", "g.json"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
    let m: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("g.json.manifest.json")).unwrap()).unwrap();
    assert_eq!(m["exit_code"], 2);
}

#[test]
fn bad_flags_are_validation_errors() {
    let dir = TempDir::new().unwrap();
    let out = treecode(&["induce", "--bogus"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn roundtrip_passes_on_toy_corpus_and_flags_deep_trees() {
    let dir = TempDir::new().unwrap();
    let corpus = path(&dir, "toy.jsonl");
    let grammar = path(&dir, "g.json");
    ok(&["gen-toy", "--n", "100", "--seed", "3", "--out", s(&corpus)], dir.path());
    ok(&["induce", "--corpus", s(&corpus), "--out", s(&grammar)], dir.path());
    let stdout = ok(&["roundtrip", "--corpus", s(&corpus), "--grammar", s(&grammar)], dir.path());
    assert!(stdout.contains("100/100 samples pass"), "{stdout}");

    // the a = 10 tree has depth 8, so L=7 must fail and name the sample
    let small = path(&dir, "assign.jsonl");
    let small_grammar = path(&dir, "fg.json");
    let report = path(&dir, "report.json");
    fs::write(&small, format!("{ASSIGN_RECORD}\n")).unwrap();
    ok(&["induce", "--corpus", s(&small), "--out", s(&small_grammar)], dir.path());
    let out = treecode(
        &["roundtrip", "--corpus", s(&small), "--grammar", s(&small_grammar), "--path-len", "7", "--out", s(&report)],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stdout).contains("sample 0:"));
    let r: Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["passed"], 0);
}

#[test]
fn empty_corpus_is_rejected() {
    let dir = TempDir::new().unwrap();
    let corpus = path(&dir, "empty.jsonl");
    fs::write(&corpus, "").unwrap();
    let out = treecode(&["induce", "--corpus", s(&corpus), "--out", "g.json"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn evaluate_identical_predictions_scores_one() {
    let dir = TempDir::new().unwrap();
    let corpus = path(&dir, "toy.jsonl");
    ok(&["gen-toy", "--n", "20", "--out", s(&corpus)], dir.path());
    let preds = path(&dir, "preds.jsonl");
    let mut lines = String::new();
    for line in fs::read_to_string(&corpus).unwrap().lines() {
        let sample: treecode::Sample = serde_json::from_str(line).unwrap();
        let record = serde_json::json!({ "nl": sample.nl, "tokens": sample.tree.linearize() });
        lines.push_str(&record.to_string());
        lines.push('\n');
    }
    fs::write(&preds, lines).unwrap();
    let report = path(&dir, "report.json");
    let stdout = ok(
        &["evaluate", "--predictions", s(&preds), "--corpus", s(&corpus), "--out", s(&report)],
        dir.path(),
    );
    assert!(stdout.contains("exact match"));
    let r: Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["em_accuracy"], 1.0);
    assert!((r["bleu"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert!(dir.path().join("report.json.txt").exists());
}

#[test]
fn paths_and_encode_dumps() {
    let dir = TempDir::new().unwrap();
    let corpus = path(&dir, "assign.jsonl");
    fs::write(&corpus, format!("{ASSIGN_RECORD}\n")).unwrap();
    let paths = path(&dir, "paths.jsonl");
    ok(&["paths", "--corpus", s(&corpus), "--path-len", "10", "--out", s(&paths)], dir.path());
    let rows: Vec<Value> = fs::read_to_string(&paths)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(rows.len(), 10);
    assert_eq!(rows[4]["path"], serde_json::json!([1, 1, 1, 1, 1, 1, 1, 1, 0, 0]));

    let csv = path(&dir, "enc.csv");
    ok(&["encode", "--corpus", s(&corpus), "--d-idx", "4", "--path-len", "10", "--out", s(&csv)], dir.path());
    let text = fs::read_to_string(&csv).unwrap();
    let rows: Vec<Vec<f64>> = text
        .lines()
        .map(|l| l.split(',').map(|c| c.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 10);
    assert!(rows.iter().all(|r| r.len() == 40));
    // sos sits at the root: every block is the index-0 encoding
    assert_eq!(rows[0][..4], [0.0, 1.0, 0.0, 1.0]);
}

#[test]
fn train_predict_evaluate_pipeline() {
    let dir = TempDir::new().unwrap();
    let corpus = path(&dir, "toy.jsonl");
    let grammar = path(&dir, "g.json");
    let vocab = path(&dir, "vocab.json");
    let ckpt = path(&dir, "model.json");
    let preds = path(&dir, "preds.jsonl");
    let report = path(&dir, "report.json");
    ok(&["gen-toy", "--n", "8", "--seed", "1", "--out", s(&corpus)], dir.path());
    ok(&["induce", "--corpus", s(&corpus), "--out", s(&grammar)], dir.path());
    ok(&["vocab", "--corpus", s(&corpus), "--size", "300", "--out", s(&vocab)], dir.path());
    let log = ok(
        &[
            "train", "--corpus", s(&corpus), "--vocab", s(&vocab), "--checkpoint", s(&ckpt),
            "--epochs", "3", "--seed", "7", "--d-idx", "4", "--path-len", "8",
            "--heads", "2", "--ffn-dim", "32", "--encoder-layers", "1", "--decoder-layers", "1",
        ],
        dir.path(),
    );
    assert_eq!(log.lines().filter(|l| l.starts_with("epoch")).count(), 3);
    let m = manifest(&ckpt);
    assert_eq!(m["seed"], 7);
    assert_eq!(m["results"]["losses"].as_array().unwrap().len(), 3);

    let wrong_mode = treecode(
        &[
            "predict", "--corpus", s(&corpus), "--vocab", s(&vocab), "--grammar", s(&grammar),
            "--checkpoint", s(&ckpt), "--out", s(&preds), "--positional", "seq",
        ],
        dir.path(),
    );
    assert_eq!(wrong_mode.status.code(), Some(1));

    let predict_args = [
        "predict", "--corpus", s(&corpus), "--vocab", s(&vocab), "--grammar", s(&grammar),
        "--checkpoint", s(&ckpt), "--out", s(&preds), "--constrained", "--positional", "tree",
        "--beams", "2", "--max-len", "40",
    ];
    let out = treecode(&predict_args, dir.path());
    let code = out.status.code();
    // an untrained model may run out of length; anything else is a bug
    assert!(code == Some(0) || code == Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let first = fs::read(&preds).unwrap();
    treecode(&predict_args, dir.path());
    assert_eq!(first, fs::read(&preds).unwrap(), "decoding is deterministic");
    assert_eq!(fs::read_to_string(&preds).unwrap().lines().count(), 8);

    ok(
        &["evaluate", "--predictions", s(&preds), "--corpus", s(&corpus), "--out", s(&report), "--mask-literals"],
        dir.path(),
    );
    let r: Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["masked_literals"], true);
    assert_eq!(r["samples"], 8);
}
