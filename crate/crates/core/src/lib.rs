//! Cross-lingual retrieval-augmented claim verification at desk scale.
//!
//! A two-tower bag-of-embeddings retriever is trained contrastively on
//! translated article titles, searched exactly by inner product, and compared
//! against per-language BM25 and translate-then-retrieve baselines. A small
//! MLP reader classifies claims into seven verdicts from the claim template
//! and the top-k passages.

mod checkpoint;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod lexicon;
pub mod linalg;
pub mod optim;
pub mod reader;
pub mod retrieval;
pub mod rng;
pub mod trainer;

pub use checkpoint::sha256_hex;
pub use corpus::{
    generate_synthetic_corpus, split_article, split_articles, tokenize, Article, Claim, Passage,
    PassageCollection, SyntheticCorpus, SyntheticCorpusConfig, Token, VerdictLabel,
    PASSAGE_MAX_TOKENS,
};
pub use encoder::{init_params, similarity, DenseVector, EncoderParams, TowerKind, Vocabulary};
pub use error::{Error, Result};
pub use eval::{kendall_tau, macro_f1, recall_at_k, ConfusionTable, DistanceMatrix, StudyRecord};
pub use lexicon::{
    collection_vocabulary, generate_xict_dataset, make_xict_pair, sample_target_language,
    TranslationLexicon, XictPair,
};
pub use linalg::{Matrix, Tensors};
pub use optim::{optimizer_step, OptimizerConfig, OptimizerKind, OptimizerState};
pub use reader::{
    predict, render_template, train_reader, ReaderConfig, ReaderExample, ReaderParams,
};
pub use retrieval::{
    ablate_language, bm25_score, bm25_top_k, build_bm25_index, build_dense_index, dense_top_k,
    translate_then_retrieve, Backend, Bm25Index, Bm25Params, DenseIndex, RetrievalResult,
    Retriever,
};
pub use trainer::{
    batch_scores, numeric_grad, train_retriever, xict_grads, xict_loss, ScoreMatrix, TrainConfig,
};
