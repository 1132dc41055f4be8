//! Shared inputs for the kernel benchmarks.

use xict_core::trainer::{PairSource, ResampledPairs};
use xict_core::*;

/// The default synthetic corpus split into passages, with a matching
/// randomly initialized encoder.
pub struct Workload {
    pub corpus: SyntheticCorpus,
    pub passages: Vec<Passage>,
    pub collection: PassageCollection,
    pub params: EncoderParams,
}

impl Workload {
    pub fn new(seed: u64) -> Self {
        let corpus = generate_synthetic_corpus(&SyntheticCorpusConfig {
            seed,
            ..SyntheticCorpusConfig::default()
        })
        .expect("default config is valid");
        let passages =
            split_articles(&corpus.articles, PASSAGE_MAX_TOKENS).expect("titled articles");
        let vocab = Vocabulary::new(collection_vocabulary(
            &corpus.articles,
            &passages,
            &corpus.lexicon,
        ));
        let params = init_params(vocab, 32, seed, 0.1).expect("non-empty vocabulary");
        let collection = PassageCollection::new(passages.clone()).expect("unique ids");
        Self {
            corpus,
            passages,
            collection,
            params,
        }
    }

    /// The first `n` pairs of epoch 0, one per passage.
    pub fn batch(&self, n: usize) -> Vec<XictPair> {
        let source = ResampledPairs {
            articles: &self.corpus.articles,
            passages: &self.passages,
            lexicon: &self.corpus.lexicon,
            seed: 0,
        };
        let mut pairs = source.pairs_for_epoch(0).expect("pairs").into_owned();
        pairs.truncate(n);
        pairs
    }

    /// Claim tokens of the first `n` synthetic claims.
    pub fn queries(&self, n: usize) -> Vec<Vec<Token>> {
        self.corpus
            .claims
            .iter()
            .take(n)
            .map(|c| tokenize(&c.text))
            .collect()
    }
}
