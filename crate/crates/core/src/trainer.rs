//! Contrastive retriever training with in-batch negatives.
//!
//! For a batch of B (pseudo-query, passage) pairs the score matrix is
//! `S[i][j] = E_C(q_i) · E_P(p_j)` and the loss is the mean negative
//! log-likelihood of the diagonal under a row softmax:
//!
//! ```text
//! L = -(1/B) Σ_i [ S[i][i] - logsumexp_j S[i][j] ]
//! ```
//!
//! With `G = (softmax(S) - I) / B`, the score gradients are `dQ = G · P` and
//! `dP = Gᵀ · Q`, which each tower then pushes back to its embedding rows and
//! projection.

use std::borrow::Cow;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{Article, Passage, PassageCollection, Token};
use crate::encoder::{init_params, EncoderGrads, EncoderParams, Tower, Vocabulary};
use crate::error::{Error, Result};
use crate::lexicon::{generate_xict_dataset, TranslationLexicon, XictPair};
use crate::linalg::{axpy, dot, logsumexp, softmax, Matrix, Tensors};
use crate::optim::{optimizer_step, OptimizerConfig, OptimizerKind, OptimizerState};
use crate::rng::{self, stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub one_passage_per_article_per_batch: bool,
    pub dim: usize,
    pub init_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            epochs: 30,
            learning_rate: 1e-2,
            optimizer: OptimizerKind::Adam,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            one_passage_per_article_per_batch: true,
            dim: 32,
            init_scale: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn optimizer_config(&self) -> OptimizerConfig {
        OptimizerConfig {
            kind: self.optimizer,
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::InvalidConfig(
                "batch_size must be at least 2 for in-batch negatives".into(),
            ));
        }
        if self.dim == 0 {
            return Err(Error::InvalidConfig("dim must be positive".into()));
        }
        if self.init_scale.is_nan() || self.init_scale <= 0.0 {
            return Err(Error::InvalidConfig("init_scale must be positive".into()));
        }
        self.optimizer_config().validate()
    }
}

/// Square in-batch score matrix; row i is query i, column j passage j.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix(Matrix);

impl ScoreMatrix {
    pub fn from_matrix(m: Matrix) -> Result<Self> {
        if m.rows() != m.cols() {
            return Err(Error::DimensionMismatch {
                expected: m.rows(),
                found: m.cols(),
            });
        }
        Ok(Self(m))
    }

    pub fn size(&self) -> usize {
        self.0.rows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0.get(i, j)
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    /// Row-wise softmax.
    pub fn probabilities(&self) -> Matrix {
        let b = self.size();
        let data = (0..b).flat_map(|i| softmax(self.0.row(i))).collect();
        Matrix::from_vec(b, b, data).expect("square shape")
    }
}

pub fn xict_loss(scores: &ScoreMatrix) -> Result<f64> {
    let b = scores.size();
    if b == 0 {
        return Err(Error::InvalidArgument("empty score matrix".into()));
    }
    if !scores.0.is_finite() {
        return Err(Error::NonFinite("score matrix".into()));
    }
    let total: f64 = (0..b)
        .map(|i| logsumexp(scores.0.row(i)) - scores.get(i, i))
        .sum();
    Ok(total / b as f64)
}

/// Forward state of one batch, kept for the backward pass.
struct BatchForward {
    query_ids: Vec<Vec<usize>>,
    passage_ids: Vec<Vec<usize>>,
    query_pooled: Vec<Vec<f64>>,
    passage_pooled: Vec<Vec<f64>>,
    queries: Vec<Vec<f64>>,
    passages: Vec<Vec<f64>>,
    scores: ScoreMatrix,
}

fn resolve<'a>(passages: &'a PassageCollection, id: &str) -> Result<&'a [Token]> {
    passages
        .get(id)
        .map(|p| p.tokens.as_slice())
        .ok_or_else(|| Error::UnknownPassage(id.to_string()))
}

fn forward(
    params: &EncoderParams,
    batch: &[XictPair],
    passages: &PassageCollection,
) -> Result<BatchForward> {
    let vocab = params.vocab();
    let query_ids: Vec<Vec<usize>> = batch.iter().map(|p| vocab.ids(&p.pseudo_query)).collect();
    let passage_ids = batch
        .iter()
        .map(|p| Ok(vocab.ids(resolve(passages, &p.positive_passage_id)?)))
        .collect::<Result<Vec<_>>>()?;
    let encode = |tower: &Tower, ids: &[Vec<usize>]| -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let pooled: Vec<Vec<f64>> = ids.iter().map(|i| tower.pool(i)).collect();
        let projected = pooled.iter().map(|m| tower.projection.matvec(m)).collect();
        (pooled, projected)
    };
    let (query_pooled, queries) = encode(&params.claim, &query_ids);
    let (passage_pooled, passage_vecs) = encode(&params.passage, &passage_ids);
    let b = batch.len();
    let mut s = Matrix::zeros(b, b);
    for (i, q) in queries.iter().enumerate() {
        for (j, p) in passage_vecs.iter().enumerate() {
            s.set(i, j, dot(q, p));
        }
    }
    Ok(BatchForward {
        query_ids,
        passage_ids,
        query_pooled,
        passage_pooled,
        queries,
        passages: passage_vecs,
        scores: ScoreMatrix(s),
    })
}

pub fn batch_scores(
    params: &EncoderParams,
    batch: &[XictPair],
    passages: &PassageCollection,
) -> Result<ScoreMatrix> {
    Ok(forward(params, batch, passages)?.scores)
}

/// Loss and its exact gradient with respect to every parameter.
pub fn xict_loss_and_grads(
    params: &EncoderParams,
    batch: &[XictPair],
    passages: &PassageCollection,
) -> Result<(f64, EncoderGrads)> {
    let fwd = forward(params, batch, passages)?;
    let loss = xict_loss(&fwd.scores)?;
    let b = batch.len();
    let mut g = fwd.scores.probabilities();
    for i in 0..b {
        g.set(i, i, g.get(i, i) - 1.0);
    }
    g.as_mut_slice().iter_mut().for_each(|v| *v /= b as f64);

    let dim = params.dim();
    let mut grads = params.zero_grads();
    for i in 0..b {
        let mut dq = vec![0.0; dim];
        let mut dp = vec![0.0; dim];
        for j in 0..b {
            axpy(&mut dq, g.get(i, j), &fwd.passages[j]);
            axpy(&mut dp, g.get(j, i), &fwd.queries[j]);
        }
        params.claim.backprop(
            &mut grads.claim,
            &fwd.query_ids[i],
            &fwd.query_pooled[i],
            &dq,
        );
        params.passage.backprop(
            &mut grads.passage,
            &fwd.passage_ids[i],
            &fwd.passage_pooled[i],
            &dp,
        );
    }
    Ok((loss, grads))
}

pub fn xict_grads(
    params: &EncoderParams,
    batch: &[XictPair],
    passages: &PassageCollection,
) -> Result<EncoderGrads> {
    Ok(xict_loss_and_grads(params, batch, passages)?.1)
}

/// Central differences `(f(θ+h) − f(θ−h)) / 2h`, one coordinate at a time,
/// in the tensor order of `params`.
pub fn numeric_grad<P, F>(loss: F, params: &P, h: f64) -> Vec<Matrix>
where
    P: Tensors + Clone,
    F: Fn(&P) -> f64,
{
    let mut work = params.clone();
    let shapes: Vec<(usize, usize)> = params.tensors().iter().map(|m| m.shape()).collect();
    let mut out: Vec<Matrix> = shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect();
    for (t, grad) in out.iter_mut().enumerate() {
        for k in 0..grad.as_slice().len() {
            let orig = work.tensors()[t].as_slice()[k];
            work.tensors_mut()[t].as_mut_slice()[k] = orig + h;
            let plus = loss(&work);
            work.tensors_mut()[t].as_mut_slice()[k] = orig - h;
            let minus = loss(&work);
            work.tensors_mut()[t].as_mut_slice()[k] = orig;
            grad.as_mut_slice()[k] = (plus - minus) / (2.0 * h);
        }
    }
    out
}

/// Supplies the training pairs for each epoch.
pub trait PairSource {
    fn pairs_for_epoch(&self, epoch: usize) -> Result<Cow<'_, [XictPair]>>;
}

/// The same pairs every epoch.
pub struct FixedPairs<'a>(pub &'a [XictPair]);

impl PairSource for FixedPairs<'_> {
    fn pairs_for_epoch(&self, _epoch: usize) -> Result<Cow<'_, [XictPair]>> {
        Ok(Cow::Borrowed(self.0))
    }
}

/// Draws a fresh target language for every title at every epoch.
pub struct ResampledPairs<'a> {
    pub articles: &'a [Article],
    pub passages: &'a [Passage],
    pub lexicon: &'a TranslationLexicon,
    pub seed: u64,
}

impl PairSource for ResampledPairs<'_> {
    fn pairs_for_epoch(&self, epoch: usize) -> Result<Cow<'_, [XictPair]>> {
        let seed = rng::mix(self.seed, epoch as u64);
        generate_xict_dataset(self.articles, self.passages, self.lexicon, seed).map(Cow::Owned)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub mean_loss: f64,
}

/// Shuffles `pairs` and cuts full batches. With `one_per_article`, a pair
/// whose article is already in the batch is deferred to a later batch;
/// whatever cannot fill a batch at the end is dropped.
fn assemble_batches(
    pairs: &[XictPair],
    batch_size: usize,
    one_per_article: bool,
    rng: &mut rng::Rng,
) -> Vec<Vec<usize>> {
    let mut pending: Vec<usize> = (0..pairs.len()).collect();
    pending.shuffle(rng);
    if !one_per_article {
        return pending
            .chunks_exact(batch_size)
            .map(<[usize]>::to_vec)
            .collect();
    }
    let mut batches = Vec::new();
    while pending.len() >= batch_size {
        let mut batch = Vec::with_capacity(batch_size);
        let mut rest = Vec::with_capacity(pending.len());
        for i in pending {
            let article = &pairs[i].source_article_id;
            if batch.len() < batch_size
                && batch
                    .iter()
                    .all(|&j: &usize| &pairs[j].source_article_id != article)
            {
                batch.push(i);
            } else {
                rest.push(i);
            }
        }
        if batch.len() < batch_size {
            break;
        }
        batches.push(batch);
        pending = rest;
    }
    batches
}

/// Trains a freshly initialized encoder over `vocab`.
pub fn train_retriever<S: PairSource + ?Sized>(
    source: &S,
    passages: &PassageCollection,
    vocab: Vocabulary,
    config: &TrainConfig,
) -> Result<(EncoderParams, Vec<EpochLoss>)> {
    config.validate()?;
    let mut params = init_params(vocab, config.dim, config.seed, config.init_scale)?;
    let optimizer = config.optimizer_config();
    let mut state = OptimizerState::new();
    let mut order_rng = rng::substream(config.seed, stream::BATCH_ORDER);
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let pairs = source.pairs_for_epoch(epoch)?;
        if pairs.len() < config.batch_size {
            return Err(Error::DatasetTooSmall {
                len: pairs.len(),
                batch_size: config.batch_size,
            });
        }
        let batches = assemble_batches(
            &pairs,
            config.batch_size,
            config.one_passage_per_article_per_batch,
            &mut order_rng,
        );
        if batches.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "cannot assemble a batch of {} pairs from distinct articles",
                config.batch_size
            )));
        }
        let mut total = 0.0;
        for idx in &batches {
            let batch: Vec<XictPair> = idx.iter().map(|&i| pairs[i].clone()).collect();
            let (loss, grads) = xict_loss_and_grads(&params, &batch, passages)?;
            optimizer_step(&mut params, &grads, &mut state, &optimizer)?;
            total += loss;
        }
        history.push(EpochLoss {
            epoch: epoch + 1,
            mean_loss: total / batches.len() as f64,
        });
    }
    Ok((params, history))
}
