//! Articles, passages and claims: tokenization, passage splitting, ingestion
//! and synthetic multilingual corpora.

mod io;
mod synthetic;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{
    load_articles, load_claims, load_passages, read_articles, read_claims, read_passages,
    write_jsonl, JsonlRecords,
};
pub use synthetic::{
    concept_of, generate_synthetic_corpus, language_code, surface_token, SyntheticCorpus,
    SyntheticCorpusConfig,
};

/// Maximum passage length in tokens.
pub const PASSAGE_MAX_TOKENS: usize = 100;

pub type Token = String;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Article {
    pub id: String,
    pub title: String,
    pub body: String,
    pub language: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub published: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    pub id: String,
    pub article_id: String,
    pub seq: usize,
    pub tokens: Vec<Token>,
    pub language: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Claim {
    pub id: String,
    pub text: String,
    #[serde(default)]
    pub claimer: String,
    #[serde(default)]
    pub claim_date: String,
    pub language: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<VerdictLabel>,
}

/// The seven-way veracity scale. Declaration order is the canonical label
/// order used for tie-breaking and for probability vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum VerdictLabel {
    True,
    MostlyTrue,
    PartlyTrue,
    MostlyFalse,
    False,
    Unverifiable,
    Other,
}

impl VerdictLabel {
    pub const COUNT: usize = 7;

    pub const ALL: [VerdictLabel; 7] = [
        VerdictLabel::True,
        VerdictLabel::MostlyTrue,
        VerdictLabel::PartlyTrue,
        VerdictLabel::MostlyFalse,
        VerdictLabel::False,
        VerdictLabel::Unverifiable,
        VerdictLabel::Other,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            VerdictLabel::True => "TRUE",
            VerdictLabel::MostlyTrue => "MOSTLY_TRUE",
            VerdictLabel::PartlyTrue => "PARTLY_TRUE",
            VerdictLabel::MostlyFalse => "MOSTLY_FALSE",
            VerdictLabel::False => "FALSE",
            VerdictLabel::Unverifiable => "UNVERIFIABLE",
            VerdictLabel::Other => "OTHER",
        }
    }
}

impl fmt::Display for VerdictLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VerdictLabel {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| format!("`{s}` is not one of the 7 verdict labels"))
    }
}

fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(c,
            '\u{00A1}' | '\u{00A7}' | '\u{00AB}' | '\u{00B6}' | '\u{00B7}' | '\u{00BB}' | '\u{00BF}'
            | '\u{037E}' | '\u{0387}'
            | '\u{055A}'..='\u{055F}'
            | '\u{0589}' | '\u{05BE}' | '\u{05C0}' | '\u{05C3}' | '\u{05F3}' | '\u{05F4}'
            | '\u{060C}' | '\u{060D}' | '\u{061B}' | '\u{061E}' | '\u{061F}'
            | '\u{066A}'..='\u{066D}' | '\u{06D4}'
            | '\u{0964}' | '\u{0965}'
            | '\u{2010}'..='\u{2027}' | '\u{2030}'..='\u{205E}'
            | '\u{3001}'..='\u{3003}' | '\u{3008}'..='\u{3011}' | '\u{3014}'..='\u{301F}'
            | '\u{FE10}'..='\u{FE19}' | '\u{FE30}'..='\u{FE4F}' | '\u{FE50}'..='\u{FE6B}'
            | '\u{FF01}'..='\u{FF0F}' | '\u{FF1A}'..='\u{FF20}' | '\u{FF3B}'..='\u{FF40}'
            | '\u{FF5B}'..='\u{FF65}')
}

/// Lowercases, splits on Unicode whitespace, strips leading and trailing
/// punctuation from each token and drops tokens that end up empty.
pub fn tokenize(text: &str) -> Vec<Token> {
    text.to_lowercase()
        .split_whitespace()
        .map(|t| t.trim_matches(is_punctuation))
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

pub fn passage_id(article_id: &str, seq: usize) -> String {
    format!("{article_id}#{seq:04}")
}

/// Greedy fixed-size chunking of the tokenized body. Every passage but the
/// last holds exactly `max_len` tokens.
pub fn split_article(article: &Article, max_len: usize) -> Result<Vec<Passage>> {
    if max_len == 0 {
        return Err(Error::InvalidArgument("max_len must be at least 1".into()));
    }
    let tokens = tokenize(&article.body);
    Ok(tokens
        .chunks(max_len)
        .enumerate()
        .map(|(seq, chunk)| Passage {
            id: passage_id(&article.id, seq),
            article_id: article.id.clone(),
            seq,
            tokens: chunk.to_vec(),
            language: article.language.clone(),
        })
        .collect())
}

/// Splits every article in order.
pub fn split_articles(articles: &[Article], max_len: usize) -> Result<Vec<Passage>> {
    let mut out = Vec::new();
    for a in articles {
        out.extend(split_article(a, max_len)?);
    }
    Ok(out)
}

/// An immutable, id-addressable passage collection.
#[derive(Debug, Clone, Default)]
pub struct PassageCollection {
    passages: Vec<Passage>,
    index: HashMap<String, usize>,
}

impl PassageCollection {
    pub fn new(passages: Vec<Passage>) -> Result<Self> {
        let mut index = HashMap::with_capacity(passages.len());
        for (i, p) in passages.iter().enumerate() {
            if index.insert(p.id.clone(), i).is_some() {
                return Err(Error::DuplicateId {
                    line: i + 1,
                    id: p.id.clone(),
                });
            }
        }
        Ok(Self { passages, index })
    }

    pub fn get(&self, id: &str) -> Option<&Passage> {
        self.index.get(id).map(|&i| &self.passages[i])
    }

    pub fn passages(&self) -> &[Passage] {
        &self.passages
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Passage> {
        self.passages.iter()
    }

    pub fn len(&self) -> usize {
        self.passages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.passages.is_empty()
    }

    /// Passage count per language, in language order.
    pub fn language_histogram(&self) -> BTreeMap<String, usize> {
        let mut h = BTreeMap::new();
        for p in &self.passages {
            *h.entry(p.language.clone()).or_insert(0) += 1;
        }
        h
    }
}

impl<'a> IntoIterator for &'a PassageCollection {
    type Item = &'a Passage;
    type IntoIter = std::slice::Iter<'a, Passage>;

    fn into_iter(self) -> Self::IntoIter {
        self.passages.iter()
    }
}
