//! Metrics, and the experiment drivers behind the ablation and
//! monolingual-restriction studies.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Claim, Passage, PassageCollection, VerdictLabel};
use crate::encoder::EncoderParams;
use crate::error::{Error, Result};
use crate::lexicon::{TranslationLexicon, XictPair};
use crate::reader::{classify, evidence_tokens, train_reader, ReaderConfig, ReaderExample};
use crate::retrieval::{
    ablate_language, build_bm25_index, build_dense_index, Backend, Bm25Params, Bm25Retriever,
    DenseRetriever, EmptyRetriever, Query, Retriever, TranslateRetriever,
};

const N: usize = VerdictLabel::COUNT;

/// Counts indexed by `[gold][predicted]`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ConfusionTable {
    counts: [[u64; N]; N],
}

impl ConfusionTable {
    pub fn new(golds: &[VerdictLabel], preds: &[VerdictLabel]) -> Result<Self> {
        if golds.len() != preds.len() {
            return Err(Error::DimensionMismatch {
                expected: golds.len(),
                found: preds.len(),
            });
        }
        let mut t = Self::default();
        for (g, p) in golds.iter().zip(preds) {
            t.counts[g.index()][p.index()] += 1;
        }
        Ok(t)
    }

    pub fn count(&self, gold: VerdictLabel, pred: VerdictLabel) -> u64 {
        self.counts[gold.index()][pred.index()]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn support(&self, label: VerdictLabel) -> u64 {
        self.counts[label.index()].iter().sum()
    }

    /// `2PR / (P + R)`, zero when both are zero.
    pub fn f1(&self, label: VerdictLabel) -> f64 {
        let c = label.index();
        let tp = self.counts[c][c] as f64;
        let predicted: u64 = (0..N).map(|g| self.counts[g][c]).sum();
        let actual = self.support(label);
        if tp == 0.0 {
            return 0.0;
        }
        2.0 * tp / (predicted + actual) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MacroAverage {
    /// Classes with at least one gold example.
    #[default]
    GoldClasses,
    AllClasses,
}

pub fn macro_f1(golds: &[VerdictLabel], preds: &[VerdictLabel]) -> Result<f64> {
    macro_f1_with(golds, preds, MacroAverage::GoldClasses)
}

pub fn macro_f1_with(
    golds: &[VerdictLabel],
    preds: &[VerdictLabel],
    average: MacroAverage,
) -> Result<f64> {
    if golds.is_empty() {
        return Err(Error::InvalidArgument("macro F1 of zero examples".into()));
    }
    let table = ConfusionTable::new(golds, preds)?;
    let classes: Vec<VerdictLabel> = VerdictLabel::ALL
        .into_iter()
        .filter(|&l| average == MacroAverage::AllClasses || table.support(l) > 0)
        .collect();
    Ok(classes.iter().map(|&l| table.f1(l)).sum::<f64>() / classes.len() as f64)
}

/// Fraction of pairs whose top-k holds any passage of the pair's source
/// article.
pub fn recall_at_k<R: Retriever + ?Sized>(
    retriever: &R,
    pairs: &[XictPair],
    passages: &PassageCollection,
    k: usize,
) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("recall over zero pairs".into()));
    }
    let mut hits = 0usize;
    for pair in pairs {
        let query = Query {
            id: pair.positive_passage_id.clone(),
            tokens: pair.pseudo_query.clone(),
            language: pair.query_language.clone(),
        };
        let result = retriever.retrieve(&query, k)?;
        let hit = result.passage_ids().any(|id| {
            passages
                .get(id)
                .is_some_and(|p| p.article_id == pair.source_article_id)
        });
        hits += hit as usize;
    }
    Ok(hits as f64 / pairs.len() as f64)
}

/// Tau-b: `(C − D) / sqrt((C + D + Tx)(C + D + Ty))`, where `Tx` counts pairs
/// tied only in `xs` and `Ty` pairs tied only in `ys`.
pub fn kendall_tau(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch {
            expected: xs.len(),
            found: ys.len(),
        });
    }
    if xs.len() < 2 {
        return Err(Error::UndefinedCorrelation("fewer than two observations"));
    }
    let (mut c, mut d, mut tx, mut ty) = (0u64, 0u64, 0u64, 0u64);
    for i in 0..xs.len() {
        for j in i + 1..xs.len() {
            let dx = xs[i] - xs[j];
            let dy = ys[i] - ys[j];
            match (dx == 0.0, dy == 0.0) {
                (true, true) => {}
                (true, false) => tx += 1,
                (false, true) => ty += 1,
                _ if (dx > 0.0) == (dy > 0.0) => c += 1,
                _ => d += 1,
            }
        }
    }
    let denom = (((c + d + tx) * (c + d + ty)) as f64).sqrt();
    if denom == 0.0 {
        return Err(Error::UndefinedCorrelation("all observations are tied"));
    }
    Ok((c as f64 - d as f64) / denom)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceEntry {
    pub lang_a: String,
    pub lang_b: String,
    pub distance: f64,
}

/// Symmetric language distances with a zero diagonal.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DistanceMatrix {
    entries: BTreeMap<(String, String), f64>,
}

impl DistanceMatrix {
    pub fn from_entries<I: IntoIterator<Item = DistanceEntry>>(entries: I) -> Result<Self> {
        let mut m = Self::default();
        for e in entries {
            if !e.distance.is_finite() {
                return Err(Error::NonFinite(format!(
                    "distance {}-{}",
                    e.lang_a, e.lang_b
                )));
            }
            if e.lang_a == e.lang_b {
                if e.distance != 0.0 {
                    return Err(Error::InvalidArgument(format!(
                        "distance from {} to itself must be 0",
                        e.lang_a
                    )));
                }
                continue;
            }
            for key in [
                (e.lang_a.clone(), e.lang_b.clone()),
                (e.lang_b.clone(), e.lang_a.clone()),
            ] {
                if let Some(&prev) = m.entries.get(&key) {
                    if prev != e.distance {
                        return Err(Error::InvalidArgument(format!(
                            "conflicting distances for {}-{}",
                            key.0, key.1
                        )));
                    }
                }
                m.entries.insert(key, e.distance);
            }
        }
        Ok(m)
    }

    pub fn read<R: BufRead>(reader: R) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let e: DistanceEntry = serde_json::from_str(&line)
                .map_err(|err| Error::record(i + 1, "<line>", err.to_string()))?;
            entries.push(e);
        }
        Self::from_entries(entries)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|source| Error::File {
            path: path.to_path_buf(),
            source,
        })?;
        Self::read(BufReader::new(file))
    }

    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        if a == b {
            return Some(0.0);
        }
        self.entries.get(&(a.to_string(), b.to_string())).copied()
    }
}

/// One line of a study report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRecord {
    pub study: String,
    pub condition: String,
    pub language: String,
    pub macro_f1: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
}

/// Label used for the aggregate over all claim languages in study reports.
pub const ALL_LANGUAGES: &str = "all";

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub macro_f1: f64,
    pub per_language: BTreeMap<String, f64>,
    pub predictions: Vec<VerdictLabel>,
}

fn gold(claim: &Claim) -> Result<VerdictLabel> {
    claim
        .label
        .ok_or_else(|| Error::InvalidArgument(format!("claim `{}` has no gold label", claim.id)))
}

/// Retrieves evidence for every claim and pairs it with the gold label.
pub fn reader_examples<R: Retriever + ?Sized>(
    claims: &[Claim],
    retriever: &R,
    passages: &PassageCollection,
    k: usize,
) -> Result<Vec<ReaderExample>> {
    claims
        .iter()
        .map(|c| {
            let result = retriever.retrieve(&Query::from_claim(c), k)?;
            Ok(ReaderExample {
                claim: c.clone(),
                retrieved: evidence_tokens(&result, passages)?,
                gold: gold(c)?,
            })
        })
        .collect()
}

/// Macro F1 over everything and per claim language.
pub fn score_predictions(
    claims: &[Claim],
    predictions: &[VerdictLabel],
) -> Result<ExperimentReport> {
    let golds = claims.iter().map(gold).collect::<Result<Vec<_>>>()?;
    let mut by_language: BTreeMap<String, (Vec<VerdictLabel>, Vec<VerdictLabel>)> = BTreeMap::new();
    for ((c, &g), &p) in claims.iter().zip(&golds).zip(predictions) {
        let entry = by_language.entry(c.language.clone()).or_default();
        entry.0.push(g);
        entry.1.push(p);
    }
    let per_language = by_language
        .into_iter()
        .map(|(l, (g, p))| Ok((l, macro_f1(&g, &p)?)))
        .collect::<Result<_>>()?;
    Ok(ExperimentReport {
        macro_f1: macro_f1(&golds, predictions)?,
        per_language,
        predictions: predictions.to_vec(),
    })
}

/// Retrieve for both claim sets, train a reader on the first, score it on
/// the second.
pub fn run_experiment<R: Retriever + ?Sized>(
    retriever: &R,
    passages: &PassageCollection,
    train_claims: &[Claim],
    eval_claims: &[Claim],
    reader: &ReaderConfig,
) -> Result<ExperimentReport> {
    let train = reader_examples(train_claims, retriever, passages, reader.k)?;
    let eval = reader_examples(eval_claims, retriever, passages, reader.k)?;
    let (params, _) = train_reader(&train, reader)?;
    let predictions = eval
        .iter()
        .map(|ex| Ok(classify(&params, &ex.claim, &ex.retrieved)?.0))
        .collect::<Result<Vec<_>>>()?;
    score_predictions(eval_claims, &predictions)
}

/// Most frequent gold label; ties go to the earliest label.
pub fn majority_label(claims: &[Claim]) -> Result<VerdictLabel> {
    let mut counts = [0usize; N];
    for c in claims {
        counts[gold(c)?.index()] += 1;
    }
    let best = (0..N).fold(0, |b, i| if counts[i] > counts[b] { i } else { b });
    Ok(VerdictLabel::from_index(best).expect("label index"))
}

/// A retrieval backend that can be rebuilt over any passage subset.
#[derive(Clone, Copy)]
pub enum BackendSpec<'a> {
    Dense {
        params: &'a EncoderParams,
    },
    Bm25(Bm25Params),
    Translate {
        params: &'a EncoderParams,
        lexicon: &'a TranslationLexicon,
        pivot: &'a str,
    },
}

impl BackendSpec<'_> {
    pub fn backend(&self) -> Backend {
        match self {
            BackendSpec::Dense { .. } => Backend::Dense,
            BackendSpec::Bm25(_) => Backend::Bm25,
            BackendSpec::Translate { .. } => Backend::TranslateDense,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            BackendSpec::Dense { .. } => "dense",
            BackendSpec::Bm25(_) => "bm25",
            BackendSpec::Translate { .. } => "translate",
        }
    }

    /// Builds the backend over `passages` and runs [`run_experiment`]. An
    /// empty collection yields empty evidence for every claim.
    pub fn run(
        &self,
        passages: &[Passage],
        monolingual: bool,
        train_claims: &[Claim],
        eval_claims: &[Claim],
        reader: &ReaderConfig,
    ) -> Result<ExperimentReport> {
        let collection = PassageCollection::new(passages.to_vec())?;
        let go =
            |r: &dyn Retriever| run_experiment(r, &collection, train_claims, eval_claims, reader);
        if passages.is_empty() {
            return go(&EmptyRetriever(self.backend()));
        }
        match *self {
            BackendSpec::Dense { params } => {
                let index = build_dense_index(params, passages)?;
                go(&DenseRetriever::new(&index, params, monolingual)?)
            }
            BackendSpec::Bm25(p) => {
                let index = build_bm25_index(passages, p)?;
                go(&Bm25Retriever(&index))
            }
            BackendSpec::Translate {
                params,
                lexicon,
                pivot,
            } => {
                let index = build_dense_index(params, passages)?;
                go(&TranslateRetriever {
                    dense: DenseRetriever::new(&index, params, monolingual)?,
                    lexicon,
                    pivot: pivot.to_string(),
                })
            }
        }
    }
}

fn report_records(
    study: &str,
    condition: &str,
    report: &ExperimentReport,
    baseline: Option<&ExperimentReport>,
) -> Vec<StudyRecord> {
    let mut rows = vec![(
        ALL_LANGUAGES.to_string(),
        report.macro_f1,
        baseline.map(|b| b.macro_f1),
    )];
    for (lang, &f1) in &report.per_language {
        let base = baseline.and_then(|b| b.per_language.get(lang).copied());
        rows.push((lang.clone(), f1, base));
    }
    rows.into_iter()
        .map(|(language, macro_f1, base)| StudyRecord {
            study: study.to_string(),
            condition: condition.to_string(),
            language,
            macro_f1,
            delta: base.map(|b| macro_f1 - b),
        })
        .collect()
}

/// Baseline on the full collection, then one run per ablated language.
/// Ablation records carry `delta = F1(ablated) − F1(baseline)` per claim
/// language.
pub fn language_ablation_study(
    spec: &BackendSpec<'_>,
    passages: &[Passage],
    languages: &[String],
    train_claims: &[Claim],
    eval_claims: &[Claim],
    reader: &ReaderConfig,
) -> Result<Vec<StudyRecord>> {
    const STUDY: &str = "language_ablation";
    let baseline = spec.run(passages, false, train_claims, eval_claims, reader)?;
    let mut records = report_records(STUDY, "baseline", &baseline, None);
    for lang in languages {
        let kept = ablate_language(passages, lang);
        let report = spec.run(&kept, false, train_claims, eval_claims, reader)?;
        records.extend(report_records(
            STUDY,
            &format!("ablate:{lang}"),
            &report,
            Some(&baseline),
        ));
    }
    Ok(records)
}

/// Each backend with and without the same-language restriction. Monolingual
/// records carry `delta = F1(mono) − F1(cross)`.
pub fn mono_vs_cross_study(
    specs: &[BackendSpec<'_>],
    passages: &[Passage],
    train_claims: &[Claim],
    eval_claims: &[Claim],
    reader: &ReaderConfig,
) -> Result<Vec<StudyRecord>> {
    const STUDY: &str = "mono_vs_cross";
    let mut records = Vec::new();
    for spec in specs {
        let cross = spec.run(passages, false, train_claims, eval_claims, reader)?;
        let mono = spec.run(passages, true, train_claims, eval_claims, reader)?;
        records.extend(report_records(
            STUDY,
            &format!("{}:cross", spec.name()),
            &cross,
            None,
        ));
        records.extend(report_records(
            STUDY,
            &format!("{}:mono", spec.name()),
            &mono,
            Some(&cross),
        ));
    }
    Ok(records)
}

/// Kendall's tau between each claim language's distance to the ablated
/// language and its ablation delta.
pub fn distance_delta_correlation(
    records: &[StudyRecord],
    ablated: &str,
    distances: &DistanceMatrix,
) -> Result<f64> {
    let condition = format!("ablate:{ablated}");
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut seen = HashSet::new();
    for r in records {
        if r.condition != condition || r.language == ALL_LANGUAGES || r.language == ablated {
            continue;
        }
        let (Some(delta), Some(dist)) = (r.delta, distances.get(ablated, &r.language)) else {
            continue;
        };
        if seen.insert(r.language.as_str()) {
            xs.push(dist);
            ys.push(delta);
        }
    }
    kendall_tau(&xs, &ys)
}

#[cfg(test)]
mod tests {
    use super::*;
    use VerdictLabel::*;

    #[test]
    fn macro_f1_hand_case() {
        let f = macro_f1(&[True, True, False, False], &[True, False, False, False]).unwrap();
        assert!((f - 11.0 / 15.0).abs() < 1e-12);
        assert_eq!(macro_f1(&[Other, Other], &[Other, Other]).unwrap(), 1.0);
        assert!(macro_f1(&[True], &[True, False]).is_err());
        assert!(macro_f1(&[], &[]).is_err());
        let all = macro_f1_with(&[True, False], &[True, False], MacroAverage::AllClasses).unwrap();
        assert!((all - 2.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn kendall_cases() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(kendall_tau(&xs, &xs).unwrap(), 1.0);
        assert_eq!(kendall_tau(&xs, &[4.0, 3.0, 2.0, 1.0]).unwrap(), -1.0);
        assert_eq!(kendall_tau(&xs, &[1.0, 3.0, 2.0, 4.0]).unwrap(), 2.0 / 3.0);
        assert!(kendall_tau(&[1.0, 1.0], &[2.0, 2.0]).is_err());
        assert!(kendall_tau(&[1.0], &[2.0]).is_err());
        // tau-b with a tie in xs: C=2, D=0, Tx=1, Ty=0.
        let t = kendall_tau(&[1.0, 1.0, 2.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!((t - 2.0 / 6f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn distance_matrix_symmetry() {
        let src = r#"{"lang_a":"en","lang_b":"pt","distance":0.4}
{"lang_a":"pt","lang_b":"fr","distance":0.2}
"#;
        let m = DistanceMatrix::read(std::io::Cursor::new(src)).unwrap();
        assert_eq!(m.get("pt", "en"), Some(0.4));
        assert_eq!(m.get("fr", "pt"), Some(0.2));
        assert_eq!(m.get("en", "en"), Some(0.0));
        assert_eq!(m.get("en", "fr"), None);
        let bad = r#"{"lang_a":"en","lang_b":"pt","distance":0.4}
{"lang_a":"pt","lang_b":"en","distance":0.5}
"#;
        assert!(DistanceMatrix::read(std::io::Cursor::new(bad)).is_err());
    }

    #[test]
    fn study_record_schema() {
        let r = StudyRecord {
            study: "s".into(),
            condition: "c".into(),
            language: "l0".into(),
            macro_f1: 0.5,
            delta: None,
        };
        assert_eq!(
            serde_json::to_string(&r).unwrap(),
            r#"{"study":"s","condition":"c","language":"l0","macro_f1":0.5}"#
        );
    }

    #[test]
    fn majority_ties_go_first() {
        let c = |label| Claim {
            id: "x".into(),
            text: "t".into(),
            claimer: String::new(),
            claim_date: String::new(),
            language: "l0".into(),
            label: Some(label),
        };
        assert_eq!(majority_label(&[c(False), c(True)]).unwrap(), True);
        assert_eq!(
            majority_label(&[c(False), c(True), c(False)]).unwrap(),
            False
        );
    }
}
