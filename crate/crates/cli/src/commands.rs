use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use anyhow::{bail, Context};
use serde::Serialize;
use serde_json::json;
use xict_core::corpus::{read_articles, read_claims, read_passages, write_jsonl};
use xict_core::eval::{
    distance_delta_correlation, language_ablation_study, macro_f1_with, majority_label,
    mono_vs_cross_study, reader_examples, BackendSpec, MacroAverage,
};
use xict_core::reader::PredictionRecord;
use xict_core::retrieval::{
    Bm25Retriever, DenseRetriever, EmptyRetriever, Query, TranslateRetriever,
};
use xict_core::trainer::{EpochLoss, FixedPairs, ResampledPairs};
use xict_core::*;

use crate::config::{Overrides, RunConfig};
use crate::manifest::Run;
use crate::{BackendArg, Common, RetrievalArgs, StudyKind};

/// Tags an error with the pipeline stage it came from.
trait Stage<T> {
    fn stage(self, name: &str) -> anyhow::Result<T>;
}

impl<T, E: Into<anyhow::Error>> Stage<T> for std::result::Result<T, E> {
    fn stage(self, name: &str) -> anyhow::Result<T> {
        self.map_err(Into::into)
            .with_context(|| format!("stage `{name}` failed"))
    }
}

fn start(
    command: &'static str,
    common: &Common,
    k: Option<usize>,
) -> anyhow::Result<(Run, RunConfig)> {
    let mut run = Run::new(command, &common.out).stage("setup")?;
    let text = match &common.config {
        None => None,
        Some(p) => {
            Some(String::from_utf8(run.read(p).stage("config")?).context("config is not UTF-8")?)
        }
    };
    let overrides = Overrides {
        seed: common.seed,
        k,
    };
    let config = RunConfig::resolve(text.as_deref(), &overrides).stage("config")?;
    Ok((run, config))
}

fn jsonl<T: Serialize>(records: &[T]) -> anyhow::Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_jsonl(&mut buf, records)?;
    Ok(buf)
}

fn pretty<T: Serialize>(value: &T) -> anyhow::Result<Vec<u8>> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(text.into_bytes())
}

fn load_articles(run: &mut Run, path: &Path) -> anyhow::Result<Vec<Article>> {
    let bytes = run.read(path).stage("load-articles")?;
    read_articles(bytes.as_slice())
        .collect::<Result<_>>()
        .stage("load-articles")
}

fn load_passages(run: &mut Run, path: &Path) -> anyhow::Result<Vec<Passage>> {
    let bytes = run.read(path).stage("load-passages")?;
    read_passages(bytes.as_slice())
        .collect::<Result<_>>()
        .stage("load-passages")
}

fn load_claims(run: &mut Run, path: &Path) -> anyhow::Result<Vec<Claim>> {
    let bytes = run.read(path).stage("load-claims")?;
    read_claims(bytes.as_slice())
        .collect::<Result<_>>()
        .stage("load-claims")
}

fn load_lexicon(run: &mut Run, path: &Path) -> anyhow::Result<TranslationLexicon> {
    let bytes = run.read(path).stage("load-lexicon")?;
    TranslationLexicon::read(bytes.as_slice()).stage("load-lexicon")
}

fn load_encoder(run: &mut Run, path: &Path) -> anyhow::Result<EncoderParams> {
    let bytes = run.read(path).stage("load-encoder")?;
    EncoderParams::read_checkpoint(bytes.as_slice()).stage("load-encoder")
}

pub fn ingest(articles_path: &Path, common: &Common) -> anyhow::Result<()> {
    let (mut run, config) = start("ingest", common, None)?;
    let articles = load_articles(&mut run, articles_path)?;
    let passages = split_articles(&articles, PASSAGE_MAX_TOKENS).stage("split")?;
    let collection = PassageCollection::new(passages).stage("split")?;
    let histogram = collection.language_histogram();
    run.write("passages.jsonl", &jsonl(collection.passages())?)
        .stage("write")?;
    let stats = json!({ "passages": collection.len(), "per_language": histogram });
    run.write("stats.json", &pretty(&stats)?).stage("write")?;
    println!("passages: {}", collection.len());
    for (lang, n) in &histogram {
        println!("  {lang}: {n}");
    }
    run.finish(
        config.seed,
        &json!({ "args": { "articles": articles_path }, "run": config }),
    )
}

pub fn synth(common: &Common) -> anyhow::Result<()> {
    let (mut run, config) = start("synth", common, None)?;
    let corpus = generate_synthetic_corpus(&config.synth).stage("synth")?;
    run.write("articles.jsonl", &jsonl(&corpus.articles)?)
        .stage("write")?;
    run.write("claims.jsonl", &jsonl(&corpus.claims)?)
        .stage("write")?;
    let mut lexicon = Vec::new();
    corpus.lexicon.write(&mut lexicon).stage("write")?;
    run.write("lexicon.jsonl", &lexicon).stage("write")?;
    println!(
        "articles: {}, claims: {}, lexicon entries: {}",
        corpus.articles.len(),
        corpus.claims.len(),
        corpus.lexicon.len()
    );
    run.finish(config.seed, &json!({ "run": config }))
}

pub fn xict_gen(
    articles: &Path,
    passages: &Path,
    lexicon: &Path,
    common: &Common,
) -> anyhow::Result<()> {
    let (mut run, config) = start("xict-gen", common, None)?;
    let a = load_articles(&mut run, articles)?;
    let p = load_passages(&mut run, passages)?;
    let lex = load_lexicon(&mut run, lexicon)?;
    let pairs = generate_xict_dataset(&a, &p, &lex, config.seed).stage("xict-gen")?;
    run.write("pairs.jsonl", &jsonl(&pairs)?).stage("write")?;
    println!("pairs: {}", pairs.len());
    let args = json!({ "articles": articles, "passages": passages, "lexicon": lexicon });
    run.finish(config.seed, &json!({ "args": args, "run": config }))
}

pub fn train_retriever(
    articles: &Path,
    passages: &Path,
    lexicon: &Path,
    pairs: Option<&Path>,
    common: &Common,
) -> anyhow::Result<()> {
    let (mut run, config) = start("train-retriever", common, None)?;
    let a = load_articles(&mut run, articles)?;
    let p = load_passages(&mut run, passages)?;
    let lex = load_lexicon(&mut run, lexicon)?;
    let vocab = Vocabulary::new(collection_vocabulary(&a, &p, &lex));
    let collection = PassageCollection::new(p.clone()).stage("load-passages")?;
    let (params, history) = match pairs {
        Some(path) => {
            let bytes = run.read(path).stage("load-pairs")?;
            let fixed: Vec<XictPair> = parse_jsonl(&bytes).stage("load-pairs")?;
            train_retriever_on(&FixedPairs(&fixed), &collection, vocab, &config)?
        }
        None => {
            let source = ResampledPairs {
                articles: &a,
                passages: &p,
                lexicon: &lex,
                seed: config.seed,
            };
            train_retriever_on(&source, &collection, vocab, &config)?
        }
    };
    run.write("encoder.ckpt", &params.checkpoint_bytes())
        .stage("write")?;
    run.write("loss.jsonl", &jsonl(&history)?).stage("write")?;
    if let Some(last) = history.last() {
        println!(
            "epochs: {}, final loss: {:.6}",
            history.len(),
            last.mean_loss
        );
    }
    println!("fingerprint: {}", params.fingerprint());
    let args =
        json!({ "articles": articles, "passages": passages, "lexicon": lexicon, "pairs": pairs });
    run.finish(config.seed, &json!({ "args": args, "run": config }))
}

fn train_retriever_on<S: trainer::PairSource>(
    source: &S,
    passages: &PassageCollection,
    vocab: Vocabulary,
    config: &RunConfig,
) -> anyhow::Result<(EncoderParams, Vec<EpochLoss>)> {
    xict_core::train_retriever(source, passages, vocab, &config.retriever).stage("train-retriever")
}

pub fn index(
    encoder: &Path,
    passages: &Path,
    ablate: Option<&str>,
    common: &Common,
) -> anyhow::Result<()> {
    let (mut run, config) = start("index", common, None)?;
    let params = load_encoder(&mut run, encoder)?;
    let mut p = load_passages(&mut run, passages)?;
    if let Some(lang) = ablate {
        p = ablate_language(&p, lang);
    }
    let index = build_dense_index(&params, &p).stage("index")?;
    let mut buf = Vec::new();
    index.write(&mut buf).stage("write")?;
    run.write("index.idx", &buf).stage("write")?;
    println!("indexed passages: {}", index.len());
    let args = json!({ "encoder": encoder, "passages": passages, "ablate_language": ablate });
    run.finish(config.seed, &json!({ "args": args, "run": config }))
}

/// Loaded artifacts backing one retrieval backend.
struct Evidence {
    backend: BackendArg,
    passages: PassageCollection,
    encoder: Option<EncoderParams>,
    index: Option<DenseIndex>,
    bm25: Option<Bm25Index>,
    lexicon: Option<TranslationLexicon>,
    pivot: String,
    k: usize,
}

impl Evidence {
    fn load(run: &mut Run, args: &RetrievalArgs, config: &RunConfig) -> anyhow::Result<Self> {
        let all = load_passages(run, &args.passages)?;
        let all_ids: HashSet<String> = all.iter().map(|p| p.id.clone()).collect();
        let mut passages = all;
        if let Some(lang) = &args.ablate_language {
            passages = ablate_language(&passages, lang);
        }
        if let Some(lang) = &args.language_filter {
            passages.retain(|p| &p.language == lang);
        }
        let narrowed = passages.len() != all_ids.len();

        let needs_encoder = matches!(args.backend, BackendArg::Dense | BackendArg::Translate);
        let encoder = match (&args.encoder, needs_encoder) {
            (Some(path), _) => Some(load_encoder(run, path)?),
            (None, true) => bail!(
                "stage `load-encoder` failed: the {:?} backend needs --encoder",
                args.backend
            ),
            (None, false) => None,
        };
        let mut index = None;
        if let (Some(params), true) = (&encoder, needs_encoder) {
            if let Some(path) = &args.index {
                let bytes = run.read(path).stage("load-index")?;
                let loaded = DenseIndex::read(bytes.as_slice()).stage("load-index")?;
                loaded.verify(params).stage("verify-index")?;
                let covered: HashSet<String> = loaded.ids().iter().cloned().collect();
                if covered != all_ids {
                    bail!("stage `verify-index` failed: index does not cover the passage file");
                }
                if !narrowed {
                    index = Some(loaded);
                }
            }
            if index.is_none() && !passages.is_empty() {
                index = Some(build_dense_index(params, &passages).stage("index")?);
            }
        }
        let bm25 = match args.backend {
            BackendArg::Bm25 if !passages.is_empty() => {
                Some(build_bm25_index(&passages, config.bm25).stage("index")?)
            }
            _ => None,
        };
        let lexicon = match (&args.lexicon, args.backend) {
            (Some(path), _) => Some(load_lexicon(run, path)?),
            (None, BackendArg::Translate) => {
                bail!("stage `load-lexicon` failed: the translate backend needs --lexicon")
            }
            (None, _) => None,
        };
        let pivot = match (&config.pivot, &lexicon) {
            (Some(p), _) => p.clone(),
            (None, Some(lex)) => lex.languages().first().cloned().unwrap_or_default(),
            (None, None) => String::new(),
        };
        Ok(Self {
            backend: args.backend,
            passages: PassageCollection::new(passages).stage("load-passages")?,
            encoder,
            index,
            bm25,
            lexicon,
            pivot,
            k: config.k,
        })
    }

    fn core_backend(&self) -> Backend {
        match self.backend {
            BackendArg::Dense => Backend::Dense,
            BackendArg::Bm25 => Backend::Bm25,
            BackendArg::Translate => Backend::TranslateDense,
        }
    }

    fn retriever(&self) -> anyhow::Result<Box<dyn Retriever + '_>> {
        if self.passages.is_empty() {
            return Ok(Box::new(EmptyRetriever(self.core_backend())));
        }
        let dense = || -> anyhow::Result<DenseRetriever<'_>> {
            let (Some(index), Some(params)) = (&self.index, &self.encoder) else {
                bail!("dense index unavailable");
            };
            DenseRetriever::new(index, params, false).stage("verify-index")
        };
        Ok(match self.backend {
            BackendArg::Dense => Box::new(dense()?),
            BackendArg::Bm25 => Box::new(Bm25Retriever(self.bm25.as_ref().expect("built above"))),
            BackendArg::Translate => Box::new(TranslateRetriever {
                dense: dense()?,
                lexicon: self.lexicon.as_ref().expect("loaded above"),
                pivot: self.pivot.clone(),
            }),
        })
    }

    /// A rebuildable spec for the study drivers.
    fn spec(&self, config: &RunConfig) -> anyhow::Result<BackendSpec<'_>> {
        Ok(match self.backend {
            BackendArg::Bm25 => BackendSpec::Bm25(config.bm25),
            BackendArg::Dense => BackendSpec::Dense {
                params: self.encoder.as_ref().context("missing encoder")?,
            },
            BackendArg::Translate => BackendSpec::Translate {
                params: self.encoder.as_ref().context("missing encoder")?,
                lexicon: self.lexicon.as_ref().context("missing lexicon")?,
                pivot: &self.pivot,
            },
        })
    }
}

fn retrieval_args(args: &RetrievalArgs, config: &RunConfig) -> serde_json::Value {
    let mut v = serde_json::to_value(args).expect("plain data");
    v["k"] = json!(config.k);
    v
}

pub fn retrieve(claims: &Path, args: &RetrievalArgs, common: &Common) -> anyhow::Result<()> {
    let (mut run, config) = start("retrieve", common, args.k)?;
    let claims_v = load_claims(&mut run, claims)?;
    let evidence = Evidence::load(&mut run, args, &config)?;
    let retriever = evidence.retriever()?;
    let results = claims_v
        .iter()
        .map(|c| retriever.retrieve(&Query::from_claim(c), evidence.k))
        .collect::<Result<Vec<_>>>()
        .stage("retrieve")?;
    let empty = results.iter().filter(|r| r.ranked.is_empty()).count();
    run.write("results.jsonl", &jsonl(&results)?)
        .stage("write")?;
    println!("queries: {}, with no evidence: {empty}", results.len());
    let args = json!({ "claims": claims, "retrieval": retrieval_args(args, &config) });
    run.finish(config.seed, &json!({ "args": args, "run": config }))
}

pub fn train_reader(claims: &Path, args: &RetrievalArgs, common: &Common) -> anyhow::Result<()> {
    let (mut run, config) = start("train-reader", common, args.k)?;
    let claims_v = load_claims(&mut run, claims)?;
    let evidence = Evidence::load(&mut run, args, &config)?;
    let retriever = evidence.retriever()?;
    let examples = reader_examples(
        &claims_v,
        retriever.as_ref(),
        &evidence.passages,
        config.reader.k,
    )
    .stage("retrieve")?;
    let (params, history) =
        xict_core::train_reader(&examples, &config.reader).stage("train-reader")?;
    run.write("reader.ckpt", &params.checkpoint_bytes())
        .stage("write")?;
    run.write("loss.jsonl", &jsonl(&history)?).stage("write")?;
    let acc = reader::accuracy(&params, &examples).stage("train-reader")?;
    println!("examples: {}, training accuracy: {acc:.4}", examples.len());
    let args = json!({ "claims": claims, "retrieval": retrieval_args(args, &config) });
    run.finish(config.seed, &json!({ "args": args, "run": config }))
}

pub fn predict(
    claims: &Path,
    reader_path: &Path,
    args: &RetrievalArgs,
    common: &Common,
) -> anyhow::Result<()> {
    let (mut run, config) = start("predict", common, args.k)?;
    let claims_v = load_claims(&mut run, claims)?;
    let bytes = run.read(reader_path).stage("load-reader")?;
    let params = ReaderParams::read_checkpoint(bytes.as_slice()).stage("load-reader")?;
    let evidence = Evidence::load(&mut run, args, &config)?;
    let retriever = evidence.retriever()?;
    let records = claims_v
        .iter()
        .map(|c| {
            xict_core::predict(
                c,
                retriever.as_ref(),
                &evidence.passages,
                evidence.k,
                &params,
            )
            .map(|p| p.record(&c.id))
        })
        .collect::<Result<Vec<_>>>()
        .stage("predict")?;
    run.write("predictions.jsonl", &jsonl(&records)?)
        .stage("write")?;
    println!("predictions: {}", records.len());
    let args = json!({ "claims": claims, "reader": reader_path, "retrieval": retrieval_args(args, &config) });
    run.finish(config.seed, &json!({ "args": args, "run": config }))
}

#[derive(Serialize)]
struct Metrics {
    claims: usize,
    average: &'static str,
    macro_f1: f64,
    per_language: BTreeMap<String, f64>,
    majority_label: VerdictLabel,
    majority_macro_f1: f64,
}

pub fn eval(
    claims: &Path,
    predictions: &Path,
    all_classes: bool,
    common: &Common,
) -> anyhow::Result<()> {
    let (mut run, config) = start("eval", common, None)?;
    let claims_v = load_claims(&mut run, claims)?;
    let bytes = run.read(predictions).stage("load-predictions")?;
    let records: Vec<PredictionRecord> = parse_jsonl(&bytes).stage("load-predictions")?;
    let by_id: HashMap<&str, VerdictLabel> = records
        .iter()
        .map(|r| (r.claim_id.as_str(), r.label))
        .collect();
    let mut golds = Vec::with_capacity(claims_v.len());
    let mut preds = Vec::with_capacity(claims_v.len());
    let mut groups: BTreeMap<String, (Vec<VerdictLabel>, Vec<VerdictLabel>)> = BTreeMap::new();
    for c in &claims_v {
        let Some(gold) = c.label else {
            bail!("stage `eval` failed: claim `{}` has no gold label", c.id);
        };
        let Some(&pred) = by_id.get(c.id.as_str()) else {
            bail!("stage `eval` failed: no prediction for claim `{}`", c.id);
        };
        golds.push(gold);
        preds.push(pred);
        let g = groups.entry(c.language.clone()).or_default();
        g.0.push(gold);
        g.1.push(pred);
    }
    let average = if all_classes {
        MacroAverage::AllClasses
    } else {
        MacroAverage::GoldClasses
    };
    let macro_f1 = macro_f1_with(&golds, &preds, average).stage("eval")?;
    let per_language = groups
        .into_iter()
        .map(|(lang, (g, p))| Ok((lang, macro_f1_with(&g, &p, average)?)))
        .collect::<Result<BTreeMap<_, _>>>()
        .stage("eval")?;
    let majority = majority_label(&claims_v).stage("eval")?;
    let majority_macro_f1 =
        macro_f1_with(&golds, &vec![majority; golds.len()], average).stage("eval")?;
    let metrics = Metrics {
        claims: claims_v.len(),
        average: if all_classes {
            "all_classes"
        } else {
            "gold_classes"
        },
        macro_f1,
        per_language,
        majority_label: majority,
        majority_macro_f1,
    };
    run.write("metrics.json", &pretty(&metrics)?)
        .stage("write")?;
    println!("macro F1: {macro_f1:.4} (majority label: {majority_macro_f1:.4})");
    let args = json!({ "claims": claims, "predictions": predictions, "all_classes": all_classes });
    run.finish(config.seed, &json!({ "args": args, "run": config }))
}

fn parse_jsonl<T: serde::de::DeserializeOwned>(bytes: &[u8]) -> anyhow::Result<Vec<T>> {
    let text = std::str::from_utf8(bytes)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("line {}", i + 1)))
        .collect()
}

#[derive(Serialize)]
struct Correlation {
    ablated: String,
    kendall_tau: Option<f64>,
}

pub fn study(
    kind: StudyKind,
    train_claims: &Path,
    eval_claims: &Path,
    distances: Option<&Path>,
    args: &RetrievalArgs,
    common: &Common,
) -> anyhow::Result<()> {
    let (mut run, config) = start("study", common, args.k)?;
    let train = load_claims(&mut run, train_claims)?;
    let eval_v = load_claims(&mut run, eval_claims)?;
    let evidence = Evidence::load(&mut run, args, &config)?;
    let spec = evidence.spec(&config)?;
    let passages = evidence.passages.passages();
    let (records, ablated) = match kind {
        StudyKind::Ablation => {
            let languages: Vec<String> =
                evidence.passages.language_histogram().into_keys().collect();
            let records = language_ablation_study(
                &spec,
                passages,
                &languages,
                &train,
                &eval_v,
                &config.reader,
            )
            .stage("study")?;
            (records, languages)
        }
        StudyKind::MonoVsCross => {
            let records = mono_vs_cross_study(&[spec], passages, &train, &eval_v, &config.reader)
                .stage("study")?;
            (records, Vec::new())
        }
    };
    run.write("study.jsonl", &jsonl(&records)?).stage("write")?;
    for r in records.iter().filter(|r| r.language == eval::ALL_LANGUAGES) {
        println!("{}: macro F1 {:.4}", r.condition, r.macro_f1);
    }
    if let Some(path) = distances {
        let bytes = run.read(path).stage("load-distances")?;
        let matrix = DistanceMatrix::read(bytes.as_slice()).stage("load-distances")?;
        let mut rows = Vec::new();
        for lang in &ablated {
            let tau = match distance_delta_correlation(&records, lang, &matrix) {
                Ok(t) => Some(t),
                Err(Error::UndefinedCorrelation(_)) => None,
                Err(e) => return Err(e).stage("correlation"),
            };
            rows.push(Correlation {
                ablated: lang.clone(),
                kendall_tau: tau,
            });
        }
        run.write("correlation.jsonl", &jsonl(&rows)?)
            .stage("write")?;
    }
    let args = json!({
        "kind": kind,
        "train_claims": train_claims,
        "eval_claims": eval_claims,
        "distances": distances,
        "retrieval": retrieval_args(args, &config),
    });
    run.finish(config.seed, &json!({ "args": args, "run": config }))
}
