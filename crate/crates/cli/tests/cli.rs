mod common;

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use common::{dir_contents, fixture, pipeline, run_step, xict};
use serde_json::Value;
use xict_core::sha256_hex;

fn json_file(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

fn jsonl_file(path: &Path) -> Vec<Value> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn stderr(out: &std::process::Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn ingest_of_empty_file_writes_empty_passages() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ingest");
    let o = xict(&[
        "ingest".as_ref(),
        "--articles".as_ref(),
        fixture("empty.jsonl").as_os_str(),
        "--out".as_ref(),
        out.as_os_str(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(std::fs::read(out.join("passages.jsonl"))
        .unwrap()
        .is_empty());
    let stats = json_file(&out.join("stats.json"));
    assert_eq!(stats["passages"], 0);
    assert_eq!(stats["per_language"], serde_json::json!({}));
}

#[test]
fn ingest_counts_and_histogram() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ingest");
    let o = xict(&[
        "ingest".as_ref(),
        "--articles".as_ref(),
        fixture("articles.jsonl").as_os_str(),
        "--out".as_ref(),
        out.as_os_str(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let passages = jsonl_file(&out.join("passages.jsonl"));
    let long = passages
        .iter()
        .filter(|p| p["article_id"] == "en-long")
        .count();
    assert_eq!(long, 3);

    let mut counted: BTreeMap<String, u64> = BTreeMap::new();
    for p in &passages {
        *counted
            .entry(p["language"].as_str().unwrap().to_string())
            .or_default() += 1;
    }
    let stats = json_file(&out.join("stats.json"));
    assert_eq!(stats["passages"], passages.len() as u64);
    let histogram: BTreeMap<String, u64> =
        serde_json::from_value(stats["per_language"].clone()).unwrap();
    assert_eq!(histogram, counted);
    assert_eq!(histogram.values().sum::<u64>(), passages.len() as u64);
    let printed = String::from_utf8(o.stdout).unwrap();
    assert!(printed.contains(&format!("passages: {}", passages.len())));
}

#[test]
fn full_pipeline_writes_manifests_with_checksums() {
    let work = tempfile::tempdir().unwrap();
    for step in pipeline(work.path()) {
        let out = work.path().join(step.name);
        run_step(&step, &out);
        let manifest = json_file(&out.join("manifest.json"));
        assert_eq!(manifest["seed"], 7, "{}", step.name);
        assert!(manifest["config"]["run"].is_object());
        let artifacts = manifest["artifacts"].as_object().unwrap();
        let files: HashSet<String> = dir_contents(&out)
            .into_iter()
            .filter(|(name, _)| name != "manifest.json")
            .map(|(name, bytes)| {
                assert_eq!(artifacts[&name], sha256_hex(&bytes), "{} {name}", step.name);
                name
            })
            .collect();
        assert_eq!(files.len(), artifacts.len(), "{}", step.name);
        let inputs = manifest["inputs"].as_object().unwrap();
        for (path, sum) in inputs {
            assert_eq!(
                sum,
                &sha256_hex(&std::fs::read(path).unwrap()),
                "{} {path}",
                step.name
            );
        }
    }
    let metrics = json_file(&work.path().join("eval/metrics.json"));
    assert!(metrics["macro_f1"].as_f64().unwrap() >= 0.0);
    let study = jsonl_file(&work.path().join("study-mono/study.jsonl"));
    let conditions: HashSet<&str> = study
        .iter()
        .map(|r| r["condition"].as_str().unwrap())
        .collect();
    assert_eq!(conditions, HashSet::from(["dense:cross", "dense:mono"]));
    let correlation = jsonl_file(&work.path().join("study-ablation/correlation.jsonl"));
    assert_eq!(correlation.len(), 3);
}

#[test]
fn handwritten_corpus_runs_end_to_end() {
    let work = tempfile::tempdir().unwrap();
    let w = |s: &str| work.path().join(s).display().to_string();
    let f = |s: &str| fixture(s).display().to_string();
    let config = f("toy.toml");
    let steps: Vec<Vec<String>> = vec![
        vec![
            "ingest".into(),
            "--articles".into(),
            f("articles.jsonl"),
            "--out".into(),
            w("ingest"),
        ],
        vec![
            "train-retriever".into(),
            "--articles".into(),
            f("articles.jsonl"),
            "--passages".into(),
            w("ingest/passages.jsonl"),
            "--lexicon".into(),
            f("lexicon.jsonl"),
            "--out".into(),
            w("enc"),
        ],
        vec![
            "train-reader".into(),
            "--claims".into(),
            f("claims.jsonl"),
            "--passages".into(),
            w("ingest/passages.jsonl"),
            "--encoder".into(),
            w("enc/encoder.ckpt"),
            "--out".into(),
            w("reader"),
        ],
        vec![
            "predict".into(),
            "--claims".into(),
            f("claims.jsonl"),
            "--reader".into(),
            w("reader/reader.ckpt"),
            "--passages".into(),
            w("ingest/passages.jsonl"),
            "--encoder".into(),
            w("enc/encoder.ckpt"),
            "--out".into(),
            w("pred"),
        ],
        vec![
            "eval".into(),
            "--claims".into(),
            f("claims.jsonl"),
            "--predictions".into(),
            w("pred/predictions.jsonl"),
            "--out".into(),
            w("eval"),
        ],
    ];
    for mut args in steps {
        args.extend([
            "--config".into(),
            config.clone(),
            "--seed".into(),
            "3".into(),
        ]);
        let o = xict(&args);
        assert!(o.status.success(), "{}: {}", args[0], stderr(&o));
    }
    let predictions = jsonl_file(&work.path().join("pred/predictions.jsonl"));
    assert_eq!(predictions.len(), 10);
    for p in &predictions {
        assert_eq!(p["probs"].as_array().unwrap().len(), 7);
        assert!(p["evidence"].as_array().unwrap().len() <= 3);
    }
    assert_eq!(
        json_file(&work.path().join("eval/manifest.json"))["seed"],
        3
    );
}

#[test]
fn bm25_on_uncovered_language_gives_empty_evidence() {
    let work = tempfile::tempdir().unwrap();
    let ingest = work.path().join("ingest");
    let o = xict(&[
        "ingest".as_ref(),
        "--articles".as_ref(),
        fixture("articles.jsonl").as_os_str(),
        "--out".as_ref(),
        ingest.as_os_str(),
    ]);
    assert!(o.status.success());
    let out = work.path().join("bm25");
    let o = xict(&[
        "retrieve".as_ref(),
        "--backend".as_ref(),
        "bm25".as_ref(),
        "--claims".as_ref(),
        fixture("claims.jsonl").as_os_str(),
        "--passages".as_ref(),
        ingest.join("passages.jsonl").as_os_str(),
        "--out".as_ref(),
        out.as_os_str(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let results = jsonl_file(&out.join("results.jsonl"));
    assert_eq!(results.len(), 10);
    for r in &results {
        let id = r["query_id"].as_str().unwrap();
        let ranked = r["ranked"].as_array().unwrap();
        let german = id == "c09" || id == "c10";
        assert_eq!(ranked.is_empty(), german, "{id}");
        assert_eq!(r["backend"], "BM25");
    }
}

#[test]
fn fingerprint_mismatch_is_refused() {
    let work = tempfile::tempdir().unwrap();
    let steps = pipeline(work.path());
    for step in steps.iter().take(4) {
        run_step(step, &work.path().join(step.name));
    }
    let index = steps.iter().find(|s| s.name == "index").unwrap();
    run_step(index, &work.path().join("index"));

    let mut other = steps
        .iter()
        .find(|s| s.name == "train-retriever")
        .unwrap()
        .args
        .clone();
    other.extend(["--seed".into(), "99".into(), "--out".into()]);
    other.push(work.path().join("other").display().to_string());
    assert!(xict(&other).status.success());

    let out = work.path().join("refused");
    let o = xict(&[
        "retrieve".as_ref(),
        "--claims".as_ref(),
        work.path().join("synth/claims.jsonl").as_os_str(),
        "--passages".as_ref(),
        work.path().join("ingest/passages.jsonl").as_os_str(),
        "--encoder".as_ref(),
        work.path().join("other/encoder.ckpt").as_os_str(),
        "--index".as_ref(),
        work.path().join("index/index.idx").as_os_str(),
        "--out".as_ref(),
        out.as_os_str(),
    ]);
    assert!(!o.status.success());
    let msg = stderr(&o);
    assert!(
        msg.contains("verify-index") && msg.contains("fingerprint mismatch"),
        "{msg}"
    );
    assert!(!out.join("results.jsonl").exists());
}

#[test]
fn failures_name_their_stage() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    let missing = dir.path().join("missing.jsonl");
    let o = xict(&[
        "ingest".as_ref(),
        "--articles".as_ref(),
        missing.as_os_str(),
        "--out".as_ref(),
        out.as_os_str(),
    ]);
    assert!(!o.status.success());
    assert!(
        stderr(&o).contains("stage `load-articles`"),
        "{}",
        stderr(&o)
    );

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "bogus = 1\n").unwrap();
    let o = xict(&[
        "synth".as_ref(),
        "--config".as_ref(),
        bad.as_os_str(),
        "--out".as_ref(),
        out.as_os_str(),
    ]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("stage `config`"), "{}", stderr(&o));

    let o = xict(&[
        "retrieve".as_ref(),
        "--claims".as_ref(),
        fixture("claims.jsonl").as_os_str(),
        "--passages".as_ref(),
        fixture("empty.jsonl").as_os_str(),
        "--out".as_ref(),
        out.as_os_str(),
    ]);
    assert!(!o.status.success());
    assert!(
        stderr(&o).contains("stage `load-encoder`"),
        "{}",
        stderr(&o)
    );
}

#[test]
fn inputs_are_not_modified() {
    let dir = tempfile::tempdir().unwrap();
    let before = std::fs::read(fixture("articles.jsonl")).unwrap();
    let o = xict(&[
        "ingest".as_ref(),
        "--articles".as_ref(),
        fixture("articles.jsonl").as_os_str(),
        "--out".as_ref(),
        dir.path().as_os_str(),
    ]);
    assert!(o.status.success());
    assert_eq!(std::fs::read(fixture("articles.jsonl")).unwrap(), before);
}
