#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

pub fn xict<S: AsRef<std::ffi::OsStr>>(args: &[S]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xict"))
        .args(args)
        .output()
        .expect("spawn xict")
}

/// One pipeline command: a name (also its output directory) and its
/// arguments without `--out`.
pub struct Step {
    pub name: &'static str,
    pub args: Vec<String>,
}

/// The full pipeline over the synthetic toy corpus, every output under `work`.
pub fn pipeline(work: &Path) -> Vec<Step> {
    let p = |s: &str| work.join(s).display().to_string();
    let f = |s: &str| fixture(s).display().to_string();
    let config = ["--config".to_string(), f("toy.toml")];
    let corpus = [
        "--articles".to_string(),
        p("synth/articles.jsonl"),
        "--passages".into(),
        p("ingest/passages.jsonl"),
        "--lexicon".into(),
        p("synth/lexicon.jsonl"),
    ];
    let dense = [
        "--passages".to_string(),
        p("ingest/passages.jsonl"),
        "--encoder".into(),
        p("train-retriever/encoder.ckpt"),
        "--index".into(),
        p("index/index.idx"),
    ];
    let claims = ["--claims".to_string(), p("synth/claims.jsonl")];
    let study = [
        "--train-claims".to_string(),
        p("synth/claims.jsonl"),
        "--eval-claims".into(),
        p("synth/claims.jsonl"),
    ];
    let step = |name: &'static str, parts: &[&[String]]| Step {
        name,
        args: parts
            .iter()
            .flat_map(|p| p.iter().cloned())
            .chain(config.iter().cloned())
            .collect(),
    };
    let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    vec![
        step("synth", &[&s(&["synth"])]),
        step(
            "ingest",
            &[&s(&["ingest", "--articles"]), &[p("synth/articles.jsonl")]],
        ),
        step("xict-gen", &[&s(&["xict-gen"]), &corpus]),
        step("train-retriever", &[&s(&["train-retriever"]), &corpus]),
        step(
            "train-retriever-fixed",
            &[
                &s(&["train-retriever"]),
                &corpus,
                &["--pairs".into(), p("xict-gen/pairs.jsonl")],
            ],
        ),
        step(
            "index",
            &[
                &s(&["index", "--encoder"]),
                &[p("train-retriever/encoder.ckpt")],
                &["--passages".into(), p("ingest/passages.jsonl")],
            ],
        ),
        step("retrieve-dense", &[&s(&["retrieve"]), &claims, &dense]),
        step(
            "retrieve-bm25",
            &[
                &s(&["retrieve", "--backend", "bm25", "--passages"]),
                &[p("ingest/passages.jsonl")],
                &claims,
            ],
        ),
        step(
            "retrieve-translate",
            &[
                &s(&["retrieve", "--backend", "translate"]),
                &claims,
                &dense,
                &["--lexicon".into(), p("synth/lexicon.jsonl")],
            ],
        ),
        step("train-reader", &[&s(&["train-reader"]), &claims, &dense]),
        step(
            "predict",
            &[
                &s(&["predict", "--reader"]),
                &[p("train-reader/reader.ckpt")],
                &claims,
                &dense,
            ],
        ),
        step(
            "eval",
            &[
                &s(&["eval", "--predictions"]),
                &[p("predict/predictions.jsonl")],
                &claims,
            ],
        ),
        step(
            "study-ablation",
            &[
                &s(&["study", "--kind", "ablation", "--distances"]),
                &[f("distances.jsonl")],
                &study,
                &dense,
            ],
        ),
        step(
            "study-mono",
            &[&s(&["study", "--kind", "mono-vs-cross"]), &study, &dense],
        ),
    ]
}

/// Runs one step into `out`, panicking with its stderr on failure.
pub fn run_step(step: &Step, out: &Path) -> Output {
    let mut args = step.args.clone();
    args.push("--out".into());
    args.push(out.display().to_string());
    let output = xict(&args);
    assert!(
        output.status.success(),
        "{} failed: {}",
        step.name,
        String::from_utf8_lossy(&output.stderr)
    );
    output
}

/// Every file in `dir`, sorted by name, with its bytes.
pub fn dir_contents(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}
