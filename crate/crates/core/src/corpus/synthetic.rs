//! Seeded synthetic multilingual corpora.
//!
//! A fixed set of abstract concepts is rendered in every language with a
//! disjoint surface form (`<lang>_c<concept>`), so the translation lexicon is a
//! bijection per language pair and no two languages share a token. Articles
//! are concept sequences about a random topic; titles are drawn from the
//! article's own concepts. A tail of the concept space is never used by any
//! article, which is what fabricated claims are made of.

use rand::seq::{index, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{Article, Claim, VerdictLabel, PASSAGE_MAX_TOKENS};
use crate::error::{Error, Result};
use crate::lexicon::TranslationLexicon;
use crate::rng::{self, stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticCorpusConfig {
    pub num_languages: usize,
    /// Total concepts, attested and unattested.
    pub vocab_concepts: usize,
    /// Concepts reserved for fabricated claims; no article mentions them.
    pub unattested_concepts: usize,
    pub num_articles: usize,
    /// Inclusive body length range in tokens.
    pub article_len_range: (usize, usize),
    pub title_len: usize,
    /// Distinct concepts making up each article's topic.
    pub concepts_per_article: usize,
    pub num_claims: usize,
    pub claim_len: usize,
    pub true_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticCorpusConfig {
    fn default() -> Self {
        Self {
            num_languages: 5,
            vocab_concepts: 500,
            unattested_concepts: 50,
            num_articles: 300,
            article_len_range: (60, 180),
            title_len: 5,
            concepts_per_article: 20,
            num_claims: 400,
            claim_len: 4,
            true_fraction: 0.5,
            seed: 0,
        }
    }
}

impl SyntheticCorpusConfig {
    pub fn attested_concepts(&self) -> usize {
        self.vocab_concepts.saturating_sub(self.unattested_concepts)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidConfig(m));
        let (min_len, max_len) = self.article_len_range;
        if self.num_languages < 2 {
            return fail("num_languages must be at least 2".into());
        }
        if self.vocab_concepts < 10 {
            return fail("vocab_concepts must be at least 10".into());
        }
        if self.unattested_concepts >= self.vocab_concepts {
            return fail("unattested_concepts must leave at least one attested concept".into());
        }
        if self.num_articles == 0 {
            return fail("num_articles must be positive".into());
        }
        if min_len == 0 || min_len > max_len {
            return fail(format!(
                "article_len_range ({min_len}, {max_len}) must satisfy 1 <= min <= max"
            ));
        }
        if self.title_len == 0 {
            return fail("title_len must be positive".into());
        }
        if self.concepts_per_article < self.title_len {
            return fail("concepts_per_article must be at least title_len".into());
        }
        if self.concepts_per_article > self.attested_concepts() {
            return fail(format!(
                "each article needs {} distinct concepts but only {} attested concepts exist",
                self.concepts_per_article,
                self.attested_concepts()
            ));
        }
        if self.concepts_per_article > min_len {
            return fail(format!(
                "articles of {min_len} tokens cannot hold {} distinct concepts",
                self.concepts_per_article
            ));
        }
        if self.concepts_per_article > PASSAGE_MAX_TOKENS {
            return fail(format!(
                "concepts_per_article must fit in one passage ({PASSAGE_MAX_TOKENS} tokens)"
            ));
        }
        if !(0.0..=1.0).contains(&self.true_fraction) {
            return fail("true_fraction must lie in [0, 1]".into());
        }
        if self.num_claims > 0 {
            if self.claim_len == 0 || self.claim_len > self.concepts_per_article {
                return fail("claim_len must lie in 1..=concepts_per_article".into());
            }
            if self.true_fraction < 1.0 && self.claim_len > self.unattested_concepts {
                return fail(format!(
                    "fabricated claims need {} unattested concepts, only {} exist",
                    self.claim_len, self.unattested_concepts
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub articles: Vec<Article>,
    pub lexicon: TranslationLexicon,
    pub claims: Vec<Claim>,
}

pub fn language_code(i: usize) -> String {
    format!("l{i}")
}

pub fn surface_token(language: &str, concept: usize) -> String {
    format!("{language}_c{concept}")
}

/// Recovers the concept id from a synthetic surface token.
pub fn concept_of(token: &str) -> Option<usize> {
    token.rsplit_once("_c")?.1.parse().ok()
}

fn render(language: &str, concepts: &[usize]) -> String {
    concepts
        .iter()
        .map(|&c| surface_token(language, c))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn generate_synthetic_corpus(config: &SyntheticCorpusConfig) -> Result<SyntheticCorpus> {
    config.validate()?;
    let mut rng = rng::substream(config.seed, stream::CORPUS);
    let languages: Vec<String> = (0..config.num_languages).map(language_code).collect();
    let attested = config.attested_concepts();
    let (min_len, max_len) = config.article_len_range;

    let mut topics = Vec::with_capacity(config.num_articles);
    let mut articles = Vec::with_capacity(config.num_articles);
    for i in 0..config.num_articles {
        let language = &languages[i % languages.len()];
        let mut topic: Vec<usize> = index::sample(&mut rng, attested, config.concepts_per_article)
            .into_iter()
            .collect();
        topic.shuffle(&mut rng);
        let len = rng.gen_range(min_len..=max_len);
        // Every topic concept appears within the first passage.
        let mut body = topic.clone();
        body.extend((topic.len()..len).map(|_| topic[rng.gen_range(0..topic.len())]));

        let mut title_pos: Vec<usize> =
            index::sample(&mut rng, topic.len(), config.title_len).into_vec();
        title_pos.sort_unstable();
        let title: Vec<usize> = title_pos.iter().map(|&p| topic[p]).collect();

        articles.push(Article {
            id: format!("art{i:05}"),
            title: render(language, &title),
            body: render(language, &body),
            language: language.clone(),
            published: None,
        });
        topics.push(topic);
    }

    let mut claims = Vec::with_capacity(config.num_claims);
    for j in 0..config.num_claims {
        let language = &languages[rng.gen_range(0..languages.len())];
        let truthful = rng.gen_bool(config.true_fraction);
        let concepts: Vec<usize> = if truthful {
            let topic = &topics[rng.gen_range(0..topics.len())];
            index::sample(&mut rng, topic.len(), config.claim_len)
                .into_iter()
                .map(|p| topic[p])
                .collect()
        } else {
            index::sample(&mut rng, config.unattested_concepts, config.claim_len)
                .into_iter()
                .map(|p| attested + p)
                .collect()
        };
        claims.push(Claim {
            id: format!("clm{j:05}"),
            text: render(language, &concepts),
            claimer: format!("source{}", rng.gen_range(0..16)),
            claim_date: format!(
                "2021-{:02}-{:02}",
                rng.gen_range(1..=12),
                rng.gen_range(1..=28)
            ),
            language: language.clone(),
            label: Some(if truthful {
                VerdictLabel::True
            } else {
                VerdictLabel::False
            }),
        });
    }

    let mut lexicon = TranslationLexicon::new(languages.clone())?;
    for src in &languages {
        for tgt in languages.iter().filter(|t| *t != src) {
            for c in 0..config.vocab_concepts {
                lexicon.insert(src, &surface_token(src, c), tgt, &surface_token(tgt, c))?;
            }
        }
    }

    Ok(SyntheticCorpus {
        articles,
        lexicon,
        claims,
    })
}
