use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use serde_json::Value;

fn rankaug(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rankaug"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = rankaug(dir, args);
    assert!(
        out.status.success(),
        "rankaug {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(name)
}

/// Writes a 20-query synthetic corpus into `dir/syn`.
fn small_synth(dir: &Path) {
    fs::write(
        dir.join("synth.json"),
        r#"{"n_queries": 20, "background_docs": 40, "filler_vocab": 300}"#,
    )
    .unwrap();
    ok(dir, &["--config", "synth.json", "--out-dir", "syn", "synth"]);
}

fn train_config(dir: &Path, name: &str, extra: &str) {
    let text = format!(
        r#"{{"corpus": "syn/corpus.tsv", "queries": "syn/queries.tsv", "qrels": "syn/qrels.txt",
            "run": "syn/train.run", "embeddings": "syn/embeddings.txt",
            "dataset_size": 40, "batch_size": 8, "epochs": 2, "loss": {{"lambda": 0.3}}{extra}}}"#
    );
    fs::write(dir.join(name), text).unwrap();
}

#[test]
fn missing_input_file_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = rankaug(dir.path(), &["ingest", "--corpus", "absent.tsv"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.tsv"));
}

#[test]
fn unknown_subcommand_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(rankaug(dir.path(), &["frobnicate"]).status.code(), Some(2));
}

#[test]
fn out_of_range_lambda_is_named() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.json"), r#"{"loss": {"lambda": 1.2, "tau": 0}, "batch_size": 1}"#).unwrap();
    let out = rankaug(dir.path(), &["--config", "c.json", "train"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    // every offending key, not just the first
    for key in ["lambda", "tau", "batch_size"] {
        assert!(err.contains(key), "{key} missing from {err}");
    }
}

#[test]
fn unknown_config_keys_are_listed() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.json"), r#"{"epoch": 3, "loss": {"lamda": 0.5}}"#).unwrap();
    let out = rankaug(dir.path(), &["--config", "c.json", "train"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("epoch: unknown key") && err.contains("loss.lamda: unknown key"), "{err}");
}

#[test]
fn ingest_fixture_and_reingest_identically() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = fixture("corpus.tsv");
    let corpus = corpus.to_str().unwrap();
    ok(dir.path(), &["--out-dir", "a", "ingest", "--corpus", corpus]);
    ok(dir.path(), &["--out-dir", "b", "ingest", "--corpus", corpus]);
    assert_eq!(json(dir.path().join("a/stats.json"))["n_docs"], 3);
    for f in ["documents.jsonl", "stats.json", "manifest.json"] {
        assert_eq!(
            fs::read(dir.path().join("a").join(f)).unwrap(),
            fs::read(dir.path().join("b").join(f)).unwrap(),
            "{f}"
        );
    }
    let docs = fs::read_to_string(dir.path().join("a/documents.jsonl")).unwrap();
    assert_eq!(docs.lines().count(), 3);
}

#[test]
fn train_twice_gives_identical_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_synth(d);
    train_config(d, "c.json", "");
    let before = fs::read(d.join("syn/train.run")).unwrap();
    ok(d, &["--config", "c.json", "--out-dir", "r1", "train"]);
    ok(d, &["--config", "c.json", "--out-dir", "r2", "train"]);
    assert_eq!(fs::read(d.join("syn/train.run")).unwrap(), before, "inputs untouched");

    let m1 = json(d.join("r1/manifest.json"));
    let m2 = json(d.join("r2/manifest.json"));
    assert_eq!(m1, m2);
    assert_eq!(m1["seed"], 42);
    assert_eq!(m1["inputs"].as_object().unwrap().len(), 6);
    assert_eq!(fs::read(d.join("r1/ranker.ckpt")).unwrap(), fs::read(d.join("r2/ranker.ckpt")).unwrap());

    ok(d, &["--config", "c.json", "--seed", "7", "--out-dir", "r3", "train"]);
    let m3 = json(d.join("r3/manifest.json"));
    assert_eq!(m3["seed"], 7);
    assert_ne!(m1["outputs"]["ranker.ckpt"], m3["outputs"]["ranker.ckpt"]);
}

#[test]
fn rerank_then_eval_against_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_synth(d);
    train_config(d, "c.json", "");
    ok(d, &["--config", "c.json", "--out-dir", "model", "train"]);
    ok(
        d,
        &[
            "--out-dir", "rr", "rerank", "--checkpoint", "model/ranker.ckpt", "--corpus", "syn/corpus.tsv", "--queries",
            "syn/queries.tsv", "--run", "syn/test.run",
        ],
    );
    let base = fs::read_to_string(d.join("syn/test.run")).unwrap();
    let reranked = fs::read_to_string(d.join("rr/reranked.run")).unwrap();
    assert_eq!(base.lines().count(), reranked.lines().count());

    ok(
        d,
        &["--out-dir", "ev", "eval", "--run", "rr/reranked.run", "--qrels", "syn/qrels.txt", "--baseline", "syn/test.run", "--permutations", "500"],
    );
    let r = json(d.join("ev/eval.json"));
    assert_eq!(r["metric"], "ndcg_cut_10");
    assert_eq!(r["k"], 10);
    let p = r["p_value"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&p));
    let (mean, baseline) = (r["mean"].as_f64().unwrap(), r["baseline_mean"].as_f64().unwrap());
    let rel = r["relative_improvement"].as_f64().unwrap();
    assert!((rel - 100.0 * (mean - baseline) / baseline).abs() < 1e-9);
}

/// Ten queries with one relevant document each; `good` ranks it first and
/// `bad` last.
fn toy_runs(d: &Path) {
    let (mut qrels, mut good, mut bad) = (String::new(), String::new(), String::new());
    for q in 0..10 {
        qrels.push_str(&format!("q{q} 0 rel{q} 1\n"));
        let docs = [format!("rel{q}"), format!("x{q}"), format!("y{q}")];
        for (r, doc) in docs.iter().enumerate() {
            good.push_str(&format!("q{q} Q0 {doc} {} {} good\n", r + 1, 3 - r));
        }
        for (r, doc) in docs.iter().rev().enumerate() {
            bad.push_str(&format!("q{q} Q0 {doc} {} {} bad\n", r + 1, 3 - r));
        }
    }
    fs::write(d.join("qrels.txt"), qrels).unwrap();
    fs::write(d.join("good.run"), good).unwrap();
    fs::write(d.join("bad.run"), bad).unwrap();
}

#[test]
fn eval_without_baseline_has_no_delta() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    toy_runs(d);
    let table = ok(d, &["--out-dir", "ev", "eval", "--run", "good.run", "--qrels", "qrels.txt"]);
    let r = json(d.join("ev/eval.json"));
    assert_eq!(r["mean"], 1.0);
    for key in ["p_value", "baseline_mean", "relative_improvement"] {
        assert!(r.get(key).is_none(), "{key}");
    }
    assert!(table.contains("| 1.000 |") && !table.contains('('), "{table}");
}

#[test]
fn report_over_two_evals_is_one_row_with_delta_and_marker() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    toy_runs(d);
    let common = ["--model", "toy", "--size", "10"];
    let mut a = vec!["--out-dir", "ev", "eval", "--run", "bad.run", "--qrels", "qrels.txt", "--method", "baseline", "--out", "base.json"];
    a.extend(common);
    ok(d, &a);
    let mut b = vec![
        "--out-dir", "ev", "eval", "--run", "good.run", "--qrels", "qrels.txt", "--baseline", "bad.run", "--method", "scl", "--out", "scl.json",
    ];
    b.extend(common);
    ok(d, &b);

    let table = ok(d, &["--out-dir", "rep", "report", "ev/base.json", "ev/scl.json"]);
    assert_eq!(fs::read_to_string(d.join("rep/report.md")).unwrap(), table);
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 3, "{table}");
    assert!(lines[0].contains("baseline") && lines[0].contains("scl"));
    // bad ranks the relevant document third: nDCG 0.5, so +100%; all ten
    // differences share a sign, p = 2/1024
    assert_eq!(lines[2], "| toy | 10 | 0.500 | 1.000 (+100.0)* |");
}

#[test]
fn report_rejects_non_report_json() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("x.json"), "{\"hello\": 1}").unwrap();
    let out = rankaug(dir.path(), &["report", "x.json"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gradcheck_default_config_is_within_tolerance() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(dir.path(), &["--out-dir", "gc", "gradcheck"]);
    let r = json(dir.path().join("gc/gradcheck.json"));
    let err = r["max_rel_error"].as_f64().unwrap();
    assert!(err < 1e-4, "{stdout}");
    assert_eq!(r["pass"], true);
    assert!(stdout.starts_with("max relative error"));
}

#[test]
fn augment_doubles_a_triples_file() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_synth(d);
    fs::write(d.join("triples.tsv"), "q0\td0r0\td0n0\nq0\td0r1\td0n1\nq3\td3r2\tbg5\n").unwrap();
    let args = [
        "--seed", "5", "augment", "--corpus", "syn/corpus.tsv", "--queries", "syn/queries.tsv", "--qrels", "syn/qrels.txt",
        "--triples", "triples.tsv", "--k-a", "2",
    ];
    let mut a1 = vec!["--out-dir", "a1"];
    a1.extend(args);
    let mut a2 = vec!["--out-dir", "a2"];
    a2.extend(args);
    ok(d, &a1);
    ok(d, &a2);
    let out = fs::read_to_string(d.join("a1/augmented.tsv")).unwrap();
    assert_eq!(out, fs::read_to_string(d.join("a2/augmented.tsv")).unwrap());
    let lines: Vec<Vec<&str>> = out.lines().map(|l| l.split('\t').collect()).collect();
    assert_eq!(lines.len(), 6);
    assert_eq!(lines[0], ["q0", "d0r0", "d0n0"]);
    assert_eq!(lines[1][..2], ["q0", "d0r0::aug::q0"]);
    assert_ne!(lines[1][2], "d0n0");
    assert!(!lines[1][2].starts_with("d0r"), "relevant documents are not negatives");

    let summaries = fs::read_to_string(d.join("a1/augmented_docs.tsv")).unwrap();
    assert_eq!(summaries.lines().count(), 3);
    for l in summaries.lines() {
        let text = l.split('\t').nth(1).unwrap();
        assert_eq!(text.matches('.').count(), 2, "k_a sentences: {text}");
    }
}

#[test]
fn augment_reports_bad_triple_lines() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_synth(d);
    fs::write(d.join("triples.tsv"), "q0\td0r0\td0n0\nq0\td0r0\n").unwrap();
    let out = rankaug(
        d,
        &["augment", "--corpus", "syn/corpus.tsv", "--queries", "syn/queries.tsv", "--triples", "triples.tsv"],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("triples.tsv:2"));
}

#[test]
fn trained_selector_drives_augmentation() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_synth(d);
    fs::write(d.join("sel.json"), r#"{"epochs": 2}"#).unwrap();
    ok(
        d,
        &[
            "--config", "sel.json", "--out-dir", "sel", "train-selector", "--kind", "linear", "--corpus", "syn/corpus.tsv", "--queries",
            "syn/queries.tsv", "--qrels", "syn/qrels.txt", "--run", "syn/train.run", "--embeddings", "syn/embeddings.txt",
        ],
    );
    let history = fs::read_to_string(d.join("sel/selector_history.csv")).unwrap();
    // one line per batch: 20 queries, 10 train, 4 relevant each, batches of 16
    assert_eq!(history.lines().count(), 1 + 2 * 3);
    fs::write(d.join("triples.tsv"), "q1\td1r0\td1n0\n").unwrap();
    ok(
        d,
        &[
            "--out-dir", "aug", "augment", "--corpus", "syn/corpus.tsv", "--queries", "syn/queries.tsv", "--triples", "triples.tsv",
            "--scorer", "linear", "--embeddings", "syn/embeddings.txt", "--selector", "sel/selector.ckpt",
        ],
    );
    assert_eq!(fs::read_to_string(d.join("aug/augmented.tsv")).unwrap().lines().count(), 2);

    // a learned scorer without its selector is a usage error
    let out = rankaug(
        d,
        &[
            "augment", "--corpus", "syn/corpus.tsv", "--queries", "syn/queries.tsv", "--triples", "triples.tsv", "--scorer", "linear",
            "--embeddings", "syn/embeddings.txt",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn retrieve_matches_synth_runs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_synth(d);
    ok(d, &["--out-dir", "ret", "retrieve", "--corpus", "syn/corpus.tsv", "--queries", "syn/queries.tsv", "--k", "20"]);
    let all = fs::read_to_string(d.join("ret/bm25.run")).unwrap();
    let train = fs::read_to_string(d.join("syn/train.run")).unwrap();
    let test = fs::read_to_string(d.join("syn/test.run")).unwrap();
    let mut split: Vec<&str> = train.lines().chain(test.lines()).collect();
    let mut whole: Vec<&str> = all.lines().collect();
    split.sort_unstable();
    whole.sort_unstable();
    assert_eq!(split, whole);
}

#[test]
fn hundred_pair_synthetic_training_is_quick() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["--out-dir", "syn", "synth"]);
    train_config(d, "c.json", "");
    let text = fs::read_to_string(d.join("c.json")).unwrap().replace("\"dataset_size\": 40, \"batch_size\": 8, \"epochs\": 2", "\"dataset_size\": 100");
    fs::write(d.join("c.json"), text).unwrap();
    let started = Instant::now();
    ok(d, &["--config", "c.json", "--out-dir", "run", "train"]);
    let secs = started.elapsed().as_secs_f64();
    assert!(secs < 60.0, "{secs:.1}s");
    let history = fs::read_to_string(d.join("run/history.csv")).unwrap();
    assert!(history.lines().count() > 1);
}
