//! Retrieval backends: exact dense inner-product search, per-language BM25,
//! and translate-then-retrieve.
//!
//! Every backend ranks by score descending and breaks ties by ascending
//! passage id, so results are a total function of the inputs.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, LineReader};
use crate::corpus::{tokenize, Claim, Passage, Token};
use crate::encoder::{EncoderParams, TowerKind};
use crate::error::{Error, Result};
use crate::lexicon::TranslationLexicon;
use crate::linalg::{dot, Matrix};

const INDEX_MAGIC: &str = "XICT-IDX";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Backend {
    Dense,
    Bm25,
    TranslateDense,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPassage {
    pub passage_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub query_id: String,
    pub backend: Backend,
    pub ranked: Vec<ScoredPassage>,
    /// Fewer than k passages were available.
    #[serde(skip)]
    pub short: bool,
}

impl RetrievalResult {
    pub fn passage_ids(&self) -> impl Iterator<Item = &str> {
        self.ranked.iter().map(|s| s.passage_id.as_str())
    }
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    Ok(())
}

/// Score descending, then id ascending.
fn rank_order(a: &ScoredPassage, b: &ScoredPassage) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.passage_id.cmp(&b.passage_id))
}

fn top_k(
    mut scored: Vec<ScoredPassage>,
    k: usize,
    query_id: &str,
    backend: Backend,
) -> RetrievalResult {
    // Adding 0.0 folds -0.0 into 0.0 so total_cmp sees one zero.
    for s in &mut scored {
        s.score += 0.0;
    }
    scored.sort_unstable_by(rank_order);
    let short = scored.len() < k;
    scored.truncate(k);
    RetrievalResult {
        query_id: query_id.to_string(),
        backend,
        ranked: scored,
        short,
    }
}

/// Materialized passage-tower encodings of a collection.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseIndex {
    ids: Vec<String>,
    languages: Vec<String>,
    matrix: Matrix,
    fingerprint: String,
}

pub fn build_dense_index(params: &EncoderParams, passages: &[Passage]) -> Result<DenseIndex> {
    if passages.is_empty() {
        return Err(Error::EmptyCollection);
    }
    let d = params.dim();
    let mut data = Vec::with_capacity(passages.len() * d);
    for p in passages {
        data.extend(params.encode(TowerKind::Passage, &p.tokens).into_vec());
    }
    let matrix = Matrix::from_vec(passages.len(), d, data)?;
    if !matrix.is_finite() {
        return Err(Error::NonFinite("dense index".into()));
    }
    Ok(DenseIndex {
        ids: passages.iter().map(|p| p.id.clone()).collect(),
        languages: passages.iter().map(|p| p.language.clone()).collect(),
        matrix,
        fingerprint: params.fingerprint(),
    })
}

impl DenseIndex {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    /// Errors unless the index was built from exactly these parameters.
    pub fn verify(&self, params: &EncoderParams) -> Result<()> {
        let found = params.fingerprint();
        if found != self.fingerprint {
            return Err(Error::FingerprintMismatch {
                expected: self.fingerprint.clone(),
                found,
            });
        }
        Ok(())
    }

    /// Header, fingerprint, one JSON `[id, language]` per passage, then the
    /// vectors one row per line.
    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{INDEX_MAGIC} v1 n={} d={}", self.len(), self.dim())?;
        writeln!(w, "{}", self.fingerprint)?;
        for (id, lang) in self.ids.iter().zip(&self.languages) {
            let line = serde_json::to_string(&(id, lang)).map_err(std::io::Error::from)?;
            writeln!(w, "{line}")?;
        }
        checkpoint::write_matrix(&mut w, &self.matrix)?;
        w.flush()?;
        Ok(())
    }

    pub fn read<R: BufRead>(reader: R) -> Result<Self> {
        let mut r = LineReader::new(reader);
        let header = checkpoint::parse_header(&r.next_line("header")?, INDEX_MAGIC)?;
        let n = checkpoint::header_field(&header, "n")?;
        let d = checkpoint::header_field(&header, "d")?;
        if n == 0 || d == 0 {
            return Err(Error::Checkpoint("index is empty".into()));
        }
        let fingerprint = r.next_line("fingerprint")?.trim().to_string();
        let mut ids = Vec::with_capacity(n);
        let mut languages = Vec::with_capacity(n);
        for _ in 0..n {
            let line = r.next_line("passage ids")?;
            let (id, lang): (String, String) = serde_json::from_str(&line)
                .map_err(|e| Error::Checkpoint(format!("bad passage entry `{line}`: {e}")))?;
            ids.push(id);
            languages.push(lang);
        }
        let matrix = r.read_matrix(n, d, "passage vectors")?;
        r.expect_end()?;
        Ok(Self {
            ids,
            languages,
            matrix,
            fingerprint,
        })
    }
}

/// Exact top-k by inner product with the claim-tower encoding of
/// `claim_tokens`, optionally restricted to passages in one language.
pub fn dense_top_k(
    index: &DenseIndex,
    params: &EncoderParams,
    claim_tokens: &[Token],
    k: usize,
    language_filter: Option<&str>,
) -> Result<RetrievalResult> {
    dense_search(
        index,
        params,
        "",
        claim_tokens,
        k,
        language_filter,
        Backend::Dense,
    )
}

fn dense_search(
    index: &DenseIndex,
    params: &EncoderParams,
    query_id: &str,
    tokens: &[Token],
    k: usize,
    language_filter: Option<&str>,
    backend: Backend,
) -> Result<RetrievalResult> {
    check_k(k)?;
    if params.dim() != index.dim() {
        return Err(Error::DimensionMismatch {
            expected: index.dim(),
            found: params.dim(),
        });
    }
    let q = params.encode(TowerKind::Claim, tokens);
    let scored = (0..index.len())
        .filter(|&i| language_filter.is_none_or(|l| index.languages[i] == l))
        .map(|i| ScoredPassage {
            passage_id: index.ids[i].clone(),
            score: dot(index.matrix.row(i), q.as_slice()),
        })
        .collect();
    Ok(top_k(scored, k, query_id, backend))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.5, b: 0.75 }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
struct Bm25Shard {
    ids: Vec<String>,
    term_counts: Vec<HashMap<Token, u32>>,
    lengths: Vec<usize>,
    avg_len: f64,
    doc_freq: HashMap<Token, usize>,
}

impl Bm25Shard {
    fn idf(&self, term: &str) -> f64 {
        let n = self.ids.len() as f64;
        let df = self.doc_freq.get(term).copied().unwrap_or(0) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    fn score(&self, params: Bm25Params, query: &[Token], doc: usize) -> f64 {
        let norm = 1.0 - params.b + params.b * self.lengths[doc] as f64 / self.avg_len;
        query
            .iter()
            .map(|t| match self.term_counts[doc].get(t) {
                None => 0.0,
                Some(&tf) => {
                    let tf = tf as f64;
                    self.idf(t) * tf * (params.k1 + 1.0) / (tf + params.k1 * norm)
                }
            })
            .sum()
    }
}

/// One BM25 sub-index per language.
#[derive(Debug, Clone, PartialEq)]
pub struct Bm25Index {
    params: Bm25Params,
    shards: BTreeMap<String, Bm25Shard>,
    locations: HashMap<String, (String, usize)>,
}

pub fn build_bm25_index(passages: &[Passage], params: Bm25Params) -> Result<Bm25Index> {
    if !(params.k1 > 0.0 && params.b > 0.0) {
        return Err(Error::InvalidConfig(
            "BM25 k1 and b must be positive".into(),
        ));
    }
    let mut shards: BTreeMap<String, Bm25Shard> = BTreeMap::new();
    let mut locations = HashMap::with_capacity(passages.len());
    for p in passages {
        let shard = shards.entry(p.language.clone()).or_default();
        let mut counts: HashMap<Token, u32> = HashMap::new();
        for t in &p.tokens {
            *counts.entry(t.clone()).or_insert(0) += 1;
        }
        for t in counts.keys() {
            *shard.doc_freq.entry(t.clone()).or_insert(0) += 1;
        }
        let slot = shard.ids.len();
        if locations
            .insert(p.id.clone(), (p.language.clone(), slot))
            .is_some()
        {
            return Err(Error::DuplicateId {
                line: slot + 1,
                id: p.id.clone(),
            });
        }
        shard.ids.push(p.id.clone());
        shard.term_counts.push(counts);
        shard.lengths.push(p.tokens.len());
    }
    for shard in shards.values_mut() {
        shard.avg_len = shard.lengths.iter().sum::<usize>() as f64 / shard.lengths.len() as f64;
    }
    Ok(Bm25Index {
        params,
        shards,
        locations,
    })
}

impl Bm25Index {
    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn languages(&self) -> impl Iterator<Item = &str> {
        self.shards.keys().map(String::as_str)
    }

    pub fn score(&self, language: &str, query: &[Token], passage_id: &str) -> Result<f64> {
        match self.locations.get(passage_id) {
            Some((lang, slot)) if lang == language => {
                Ok(self.shards[lang].score(self.params, query, *slot))
            }
            _ => Err(Error::UnknownPassage(passage_id.to_string())),
        }
    }

    /// Top-k within the `language` shard; empty when no passage has that
    /// language.
    pub fn search(
        &self,
        query_id: &str,
        language: &str,
        query: &[Token],
        k: usize,
    ) -> Result<RetrievalResult> {
        check_k(k)?;
        let scored = match self.shards.get(language) {
            None => Vec::new(),
            Some(shard) => (0..shard.ids.len())
                .map(|i| ScoredPassage {
                    passage_id: shard.ids[i].clone(),
                    score: shard.score(self.params, query, i),
                })
                .collect(),
        };
        Ok(top_k(scored, k, query_id, Backend::Bm25))
    }
}

pub fn bm25_score(
    index: &Bm25Index,
    language: &str,
    query: &[Token],
    passage_id: &str,
) -> Result<f64> {
    index.score(language, query, passage_id)
}

pub fn bm25_top_k(index: &Bm25Index, claim: &Claim, k: usize) -> Result<RetrievalResult> {
    index.search(&claim.id, &claim.language, &tokenize(&claim.text), k)
}

/// Translates the claim into `pivot` through the lexicon, then dense search.
pub fn translate_then_retrieve(
    claim: &Claim,
    pivot: &str,
    lexicon: &TranslationLexicon,
    index: &DenseIndex,
    params: &EncoderParams,
    k: usize,
) -> Result<RetrievalResult> {
    let tokens = lexicon.translate_tokens(&tokenize(&claim.text), &claim.language, pivot)?;
    dense_search(
        index,
        params,
        &claim.id,
        &tokens,
        k,
        None,
        Backend::TranslateDense,
    )
}

/// The passages whose language differs from `language`, in order.
pub fn ablate_language(passages: &[Passage], language: &str) -> Vec<Passage> {
    passages
        .iter()
        .filter(|p| p.language != language)
        .cloned()
        .collect()
}

/// A tokenized query with its language.
#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub id: String,
    pub tokens: Vec<Token>,
    pub language: String,
}

impl Query {
    pub fn from_claim(claim: &Claim) -> Self {
        Self {
            id: claim.id.clone(),
            tokens: tokenize(&claim.text),
            language: claim.language.clone(),
        }
    }
}

pub trait Retriever {
    fn retrieve(&self, query: &Query, k: usize) -> Result<RetrievalResult>;
}

pub struct DenseRetriever<'a> {
    index: &'a DenseIndex,
    params: &'a EncoderParams,
    /// Restrict results to the query's language.
    pub monolingual: bool,
}

impl<'a> DenseRetriever<'a> {
    /// Refuses parameters other than the ones the index was built from.
    pub fn new(
        index: &'a DenseIndex,
        params: &'a EncoderParams,
        monolingual: bool,
    ) -> Result<Self> {
        index.verify(params)?;
        Ok(Self {
            index,
            params,
            monolingual,
        })
    }
}

impl Retriever for DenseRetriever<'_> {
    fn retrieve(&self, query: &Query, k: usize) -> Result<RetrievalResult> {
        let filter = self.monolingual.then_some(query.language.as_str());
        dense_search(
            self.index,
            self.params,
            &query.id,
            &query.tokens,
            k,
            filter,
            Backend::Dense,
        )
    }
}

pub struct Bm25Retriever<'a>(pub &'a Bm25Index);

impl Retriever for Bm25Retriever<'_> {
    fn retrieve(&self, query: &Query, k: usize) -> Result<RetrievalResult> {
        self.0.search(&query.id, &query.language, &query.tokens, k)
    }
}

pub struct TranslateRetriever<'a> {
    pub dense: DenseRetriever<'a>,
    pub lexicon: &'a TranslationLexicon,
    pub pivot: String,
}

impl Retriever for TranslateRetriever<'_> {
    fn retrieve(&self, query: &Query, k: usize) -> Result<RetrievalResult> {
        let tokens = self
            .lexicon
            .translate_tokens(&query.tokens, &query.language, &self.pivot)?;
        let filter = self.dense.monolingual.then_some(self.pivot.as_str());
        dense_search(
            self.dense.index,
            self.dense.params,
            &query.id,
            &tokens,
            k,
            filter,
            Backend::TranslateDense,
        )
    }
}

/// Returns nothing; stands in for a backend over an empty collection.
pub struct EmptyRetriever(pub Backend);

impl Retriever for EmptyRetriever {
    fn retrieve(&self, query: &Query, k: usize) -> Result<RetrievalResult> {
        check_k(k)?;
        Ok(top_k(Vec::new(), k, &query.id, self.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{init_params, Vocabulary};

    fn passage(id: &str, lang: &str, tokens: &str) -> Passage {
        Passage {
            id: id.into(),
            article_id: id.into(),
            seq: 0,
            tokens: tokenize(tokens),
            language: lang.into(),
        }
    }

    fn toks(s: &str) -> Vec<Token> {
        tokenize(s)
    }

    fn claim(id: &str, lang: &str, text: &str) -> Claim {
        Claim {
            id: id.into(),
            text: text.into(),
            claimer: String::new(),
            claim_date: String::new(),
            language: lang.into(),
            label: None,
        }
    }

    fn setup() -> (EncoderParams, Vec<Passage>) {
        let vocab = Vocabulary::new(toks("a b c d e f"));
        let params = init_params(vocab, 3, 2, 1.0).unwrap();
        let passages = vec![
            passage("p3", "en", "a b"),
            passage("p1", "fr", "c d"),
            passage("p2", "en", "e f a"),
            passage("p0", "fr", "b"),
        ];
        (params, passages)
    }

    #[test]
    fn zero_query_returns_first_ids() {
        let (params, passages) = setup();
        let idx = build_dense_index(&params, &passages).unwrap();
        let r = dense_top_k(&idx, &params, &toks("zzz"), 3, None).unwrap();
        assert_eq!(r.passage_ids().collect::<Vec<_>>(), ["p0", "p1", "p2"]);
        assert!(r.ranked.iter().all(|s| s.score == 0.0));
        assert!(!r.short);
    }

    #[test]
    fn index_rows_are_encodings_and_filter_applies() {
        let (params, passages) = setup();
        let idx = build_dense_index(&params, &passages).unwrap();
        for (i, p) in passages.iter().enumerate() {
            assert_eq!(
                idx.matrix().row(i),
                params.encode(TowerKind::Passage, &p.tokens).as_slice()
            );
        }
        let r = dense_top_k(&idx, &params, &toks("a c"), 5, Some("fr")).unwrap();
        assert_eq!(r.ranked.len(), 2);
        assert!(r.short);
        let full = dense_top_k(&idx, &params, &toks("a c"), 4, None).unwrap();
        assert!(full.ranked.windows(2).all(|w| w[0].score >= w[1].score));
        assert!(build_dense_index(&params, &[]).is_err());
        assert!(dense_top_k(&idx, &params, &toks("a"), 0, None).is_err());
    }

    #[test]
    fn index_persistence_checks_fingerprint() {
        let (params, passages) = setup();
        let idx = build_dense_index(&params, &passages).unwrap();
        let mut buf = Vec::new();
        idx.write(&mut buf).unwrap();
        let back = DenseIndex::read(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(back, idx);
        assert!(back.verify(&params).is_ok());
        let other = init_params(params.vocab().clone(), 3, 3, 1.0).unwrap();
        assert!(matches!(
            DenseRetriever::new(&back, &other, false),
            Err(Error::FingerprintMismatch { .. })
        ));
    }

    #[test]
    fn bm25_hand_case() {
        let idx = build_bm25_index(&[passage("p", "en", "x")], Bm25Params::default()).unwrap();
        let s = bm25_score(&idx, "en", &toks("x"), "p").unwrap();
        assert!((s - (4.0f64 / 3.0).ln()).abs() < 1e-12);
        assert_eq!(format!("{s:.6}"), "0.287682");
        assert_eq!(bm25_score(&idx, "en", &toks("y"), "p").unwrap(), 0.0);
        assert!(bm25_score(&idx, "fr", &toks("x"), "p").is_err());
        assert!(bm25_score(&idx, "en", &toks("x"), "q").is_err());
    }

    #[test]
    fn unrelated_document_raises_idf() {
        let one = build_bm25_index(&[passage("p", "en", "x y")], Bm25Params::default()).unwrap();
        let two = build_bm25_index(
            &[passage("p", "en", "x y"), passage("q", "en", "z w")],
            Bm25Params::default(),
        )
        .unwrap();
        let q = toks("x");
        assert!(
            bm25_score(&two, "en", &q, "p").unwrap() > bm25_score(&one, "en", &q, "p").unwrap()
        );
    }

    #[test]
    fn bm25_absent_language_is_empty() {
        let (_, passages) = setup();
        let idx = build_bm25_index(&passages, Bm25Params::default()).unwrap();
        let r = bm25_top_k(&idx, &claim("c", "de", "a b"), 5).unwrap();
        assert!(r.ranked.is_empty());
        assert_eq!(r.query_id, "c");
        let r = bm25_top_k(&idx, &claim("c", "en", "a a"), 5).unwrap();
        assert_eq!(r.ranked[0].passage_id, "p3");
        assert!(r.ranked.iter().all(|s| passages
            .iter()
            .any(|p| p.id == s.passage_id && p.language == "en")));
    }

    #[test]
    fn translate_with_own_language_equals_dense() {
        let (params, passages) = setup();
        let idx = build_dense_index(&params, &passages).unwrap();
        let lex = TranslationLexicon::new(vec!["en".into(), "fr".into()]).unwrap();
        let c = claim("c", "en", "a d");
        let t = translate_then_retrieve(&c, "en", &lex, &idx, &params, 3).unwrap();
        let d = dense_top_k(&idx, &params, &toks("a d"), 3, None).unwrap();
        assert_eq!(t.ranked, d.ranked);
        assert_eq!(t.backend, Backend::TranslateDense);
    }

    #[test]
    fn ablation_counts() {
        let (_, passages) = setup();
        assert_eq!(ablate_language(&passages, "de"), passages);
        let kept = ablate_language(&passages, "fr");
        assert_eq!(kept.len(), 2);
        assert!(kept.iter().all(|p| p.language == "en"));
        assert!(ablate_language(&kept, "en").is_empty());
    }

    #[test]
    fn result_json_shape() {
        let r = RetrievalResult {
            query_id: "q".into(),
            backend: Backend::Bm25,
            ranked: vec![ScoredPassage {
                passage_id: "p".into(),
                score: 0.5,
            }],
            short: true,
        };
        assert_eq!(
            serde_json::to_string(&r).unwrap(),
            r#"{"query_id":"q","backend":"BM25","ranked":[{"passage_id":"p","score":0.5}]}"#
        );
    }
}
