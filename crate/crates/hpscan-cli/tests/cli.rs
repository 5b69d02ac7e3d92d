//! End-to-end tests of the `hpscan` binary: pipeline plumbing, CSV
//! formats, CLI-vs-library equivalence for `query`, and error handling.

use hpscan::chain_data::load_dataset;
use hpscan::fundflow::{
    classify_contract_events, frequency_vector, query_cases, CasePredicate, Sender, SenderBalance,
};
use std::path::Path;
use std::process::{Command, Output};

fn hpscan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hpscan")).args(args).output().expect("binary runs")
}

fn stdout_str(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn synth_corpus(dir: &Path) -> std::path::PathBuf {
    let corpus = dir.join("corpus.jsonl");
    let out = hpscan(&[
        "--seed",
        "7",
        "synth",
        "--honeypots",
        "25",
        "--non-honeypots",
        "100",
        "--out",
        corpus.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    corpus
}

#[test]
fn cases_dump_carries_metadata_and_all_244_rows() {
    let out = hpscan(&["cases"]);
    assert!(out.status.success());
    let text = stdout_str(&out);
    let mut lines = text.lines();
    let meta = lines.next().unwrap();
    assert!(meta.starts_with("# hpscan "), "metadata comment first: {meta}");
    assert!(meta.contains("seed="));
    let header = lines.next().unwrap();
    assert!(header.starts_with("id,"));
    assert_eq!(lines.clone().count(), 244);
    assert!(lines.any(|l| l
        .contains("sender=creator, balanceCreator=negative, balanceContract=positive")));
}

#[test]
fn synth_featurize_cv_pipeline_produces_the_documented_csv() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth_corpus(dir.path());
    let feats = dir.path().join("features.csv");

    let out = hpscan(&[
        "featurize",
        "--in",
        corpus.to_str().unwrap(),
        "--out",
        feats.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let out = hpscan(&[
        "--seed",
        "7",
        "cv",
        "--in",
        feats.to_str().unwrap(),
        "--features",
        "all",
        "--k",
        "5",
        "--rounds",
        "20",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout_str(&out);
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# hpscan "));
    assert_eq!(lines.next().unwrap(), "featureSet,fold,trainAuroc,testAuroc");
    let folds: Vec<&str> = lines.collect();
    // 5 fold rows plus mean and std summary rows
    assert_eq!(folds.len(), 7);
    assert!(folds.iter().take(5).all(|l| l.starts_with("All,")));
}

#[test]
fn query_matches_the_direct_library_call() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth_corpus(dir.path());

    let out = hpscan(&[
        "query",
        "--in",
        corpus.to_str().unwrap(),
        "--sender",
        "other",
        "--balance-sender",
        "up",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout_str(&out);
    let cli_rows: Vec<(&str, f64)> = text
        .lines()
        .skip(2) // metadata + header
        .map(|l| {
            let (addr, freq) = l.split_once(',').unwrap();
            (addr, freq.parse::<f64>().unwrap())
        })
        .collect();

    // the same query straight through the library
    let bundles = load_dataset(&corpus).unwrap();
    let vectors: Vec<(String, _)> = bundles
        .iter()
        .map(|b| {
            let events = classify_contract_events(
                &b.normals,
                &b.internals,
                &b.contract.creator,
                &b.contract.address,
            );
            (b.contract.address.to_string(), frequency_vector(&events).unwrap())
        })
        .collect();
    let predicate = CasePredicate {
        sender: Some(Sender::Other),
        balance_sender: Some(SenderBalance::Up),
        ..CasePredicate::default()
    };
    let lib_rows = query_cases(&predicate, vectors.iter().map(|(k, v)| (k.as_str(), v)));

    assert_eq!(cli_rows.len(), lib_rows.len());
    for ((cli_addr, cli_freq), (lib_addr, lib_freq)) in cli_rows.iter().zip(&lib_rows) {
        assert_eq!(cli_addr, lib_addr);
        assert!((cli_freq - lib_freq).abs() < 1e-9, "{cli_addr}: {cli_freq} vs {lib_freq}");
    }
}

#[test]
fn same_seed_reproduces_the_corpus_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let a = synth_corpus(dir.path());
    let b_dir = tempfile::tempdir().unwrap();
    let b = synth_corpus(b_dir.path());
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn input_errors_exit_1_with_a_json_line() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth_corpus(dir.path());
    let out = hpscan(&[
        "query",
        "--in",
        corpus.to_str().unwrap(),
        "--sender",
        "martian",
        "--creation",
        "perhaps",
    ]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8(out.stderr).unwrap();
    let line = stderr.lines().last().unwrap();
    let err: serde_json::Value = serde_json::from_str(line).expect("stderr line is JSON");
    assert_eq!(err["error"], "input");
    let message = err["message"].as_str().unwrap();
    // every invalid flag is reported, not just the first
    assert!(message.contains("sender"), "{message}");
    assert!(message.contains("creation"), "{message}");
}

#[test]
fn missing_input_file_exits_1() {
    let out = hpscan(&["featurize", "--in", "/nonexistent/corpus.jsonl"]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8(out.stderr).unwrap();
    let err: serde_json::Value = serde_json::from_str(stderr.lines().last().unwrap()).unwrap();
    assert_eq!(err["error"], "input");
}
