//! Veracity reader: the claim template and each retrieved passage are encoded
//! independently by one bag-of-embeddings tower, the k+1 vectors are
//! concatenated, and a one-hidden-layer ReLU MLP scores the seven labels.

use std::io::{BufRead, Write};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, LineReader};
use crate::corpus::{tokenize, Claim, PassageCollection, Token, VerdictLabel};
use crate::encoder::{Tower, Vocabulary};
use crate::error::{Error, Result};
use crate::linalg::{softmax, Matrix, Tensors};
use crate::optim::{optimizer_step, OptimizerConfig, OptimizerKind, OptimizerState};
use crate::retrieval::{Query, RetrievalResult, Retriever};
use crate::rng::{self, stream};
use crate::trainer::EpochLoss;

const READER_MAGIC: &str = "XICT-RDR";
const LABELS: usize = VerdictLabel::COUNT;

pub fn render_template(claim: &Claim) -> String {
    let or_unknown = |s: &str| {
        if s.trim().is_empty() {
            "unknown".to_string()
        } else {
            s.to_string()
        }
    };
    format!(
        "Claim made by {} on {}, reported in {}: {}",
        or_unknown(&claim.claimer),
        or_unknown(&claim.claim_date),
        claim.language,
        claim.text
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReaderExample {
    pub claim: Claim,
    /// Token sequences of the retrieved passages, best first.
    pub retrieved: Vec<Vec<Token>>,
    pub gold: VerdictLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReaderConfig {
    pub k: usize,
    pub dim: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for ReaderConfig {
    fn default() -> Self {
        Self {
            k: 5,
            dim: 32,
            hidden: 64,
            epochs: 100,
            batch_size: 16,
            learning_rate: 1e-2,
            optimizer: OptimizerKind::Adam,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            init_scale: 0.1,
            seed: 0,
        }
    }
}

impl ReaderConfig {
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
        if self.k == 0 || self.dim == 0 || self.hidden == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig(
                "reader k, dim, hidden and batch_size must be positive".into(),
            ));
        }
        if self.init_scale.is_nan() || self.init_scale <= 0.0 {
            return Err(Error::InvalidConfig("init_scale must be positive".into()));
        }
        self.optimizer_config().validate()
    }
}

/// Text tower plus MLP. Biases are stored as single-row matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct ReaderParams {
    vocab: Arc<Vocabulary>,
    k: usize,
    pub encoder: Tower,
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
}

/// Gradient with the tensor layout of [`ReaderParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct ReaderGrads {
    pub encoder: Tower,
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
}

macro_rules! reader_tensors {
    ($t:ty) => {
        impl Tensors for $t {
            fn tensors(&self) -> Vec<&Matrix> {
                vec![
                    &self.encoder.embedding,
                    &self.encoder.projection,
                    &self.w1,
                    &self.b1,
                    &self.w2,
                    &self.b2,
                ]
            }

            fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
                vec![
                    &mut self.encoder.embedding,
                    &mut self.encoder.projection,
                    &mut self.w1,
                    &mut self.b1,
                    &mut self.w2,
                    &mut self.b2,
                ]
            }
        }
    };
}

reader_tensors!(ReaderParams);
reader_tensors!(ReaderGrads);

impl ReaderParams {
    /// Uniform embeddings, identity projection, Glorot-uniform hidden layer,
    /// and a zero output layer so the untrained reader is exactly uniform.
    pub fn init(vocab: Vocabulary, config: &ReaderConfig) -> Result<Self> {
        config.validate()?;
        if vocab.is_empty() {
            return Err(Error::EmptyVocabulary);
        }
        let (d, h) = (config.dim, config.hidden);
        let input = (config.k + 1) * d;
        let mut rng = rng::substream(config.seed, stream::READER_INIT);
        let mut encoder = Tower::zeros(vocab.len(), d);
        let s = config.init_scale;
        encoder
            .embedding
            .as_mut_slice()
            .iter_mut()
            .for_each(|v| *v = rng.gen_range(-s..=s));
        encoder.projection = Matrix::identity(d);
        let mut w1 = Matrix::zeros(h, input);
        let limit = (6.0 / (input + h) as f64).sqrt();
        w1.as_mut_slice()
            .iter_mut()
            .for_each(|v| *v = rng.gen_range(-limit..=limit));
        Ok(Self {
            vocab: Arc::new(vocab),
            k: config.k,
            encoder,
            w1,
            b1: Matrix::zeros(1, h),
            w2: Matrix::zeros(LABELS, h),
            b2: Matrix::zeros(1, LABELS),
        })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.encoder.dim()
    }

    pub fn hidden(&self) -> usize {
        self.w1.rows()
    }

    pub fn feature_len(&self) -> usize {
        (self.k + 1) * self.dim()
    }

    fn zero_grads(&self) -> ReaderGrads {
        ReaderGrads {
            encoder: Tower::zeros(self.vocab.len(), self.dim()),
            w1: Matrix::zeros(self.w1.rows(), self.w1.cols()),
            b1: Matrix::zeros(1, self.hidden()),
            w2: Matrix::zeros(LABELS, self.hidden()),
            b2: Matrix::zeros(1, LABELS),
        }
    }

    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "{READER_MAGIC} v1 k={} d={} h={} |V|={}",
            self.k,
            self.dim(),
            self.hidden(),
            self.vocab.len()
        )?;
        for t in self.vocab.tokens() {
            writeln!(w, "{t}")?;
        }
        for m in self.tensors() {
            checkpoint::write_matrix(&mut w, m)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_checkpoint<R: BufRead>(reader: R) -> Result<Self> {
        let mut r = LineReader::new(reader);
        let header = checkpoint::parse_header(&r.next_line("header")?, READER_MAGIC)?;
        let field = |key| checkpoint::header_field(&header, key);
        let (k, d, h, n) = (field("k")?, field("d")?, field("h")?, field("|V|")?);
        if k == 0 || d == 0 || h == 0 || n == 0 {
            return Err(Error::Checkpoint("zero-sized reader dimension".into()));
        }
        let tokens = (0..n)
            .map(|_| r.next_line("vocabulary"))
            .collect::<Result<Vec<_>>>()?;
        let vocab = Vocabulary::from_ordered(tokens)?;
        let encoder = Tower {
            embedding: r.read_matrix(n, d, "reader embedding")?,
            projection: r.read_matrix(d, d, "reader projection")?,
        };
        let params = Self {
            vocab: Arc::new(vocab),
            k,
            encoder,
            w1: r.read_matrix(h, (k + 1) * d, "hidden weights")?,
            b1: r.read_matrix(1, h, "hidden bias")?,
            w2: r.read_matrix(LABELS, h, "output weights")?,
            b2: r.read_matrix(1, LABELS, "output bias")?,
        };
        r.expect_end()?;
        Ok(params)
    }

    pub fn checkpoint_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_checkpoint(&mut buf)
            .expect("writing to memory cannot fail");
        buf
    }
}

/// Per-block token ids and pooled means, kept for the backward pass.
struct Encoded {
    pooled: Vec<Vec<f64>>,
    features: Vec<f64>,
}

/// Vocabulary ids of the template block followed by each passage block.
fn block_ids(
    params: &ReaderParams,
    claim: &Claim,
    retrieved: &[Vec<Token>],
) -> Result<Vec<Vec<usize>>> {
    if retrieved.len() > params.k {
        return Err(Error::InvalidArgument(format!(
            "{} passages given to a reader with k = {}",
            retrieved.len(),
            params.k
        )));
    }
    let mut ids = Vec::with_capacity(retrieved.len() + 1);
    ids.push(params.vocab.ids(&tokenize(&render_template(claim))));
    ids.extend(retrieved.iter().map(|p| params.vocab.ids(p)));
    Ok(ids)
}

fn encode_ids(params: &ReaderParams, ids: &[Vec<usize>]) -> Encoded {
    let mut pooled = Vec::with_capacity(ids.len());
    let mut features = Vec::with_capacity(params.feature_len());
    for block in ids {
        let mean = params.encoder.pool(block);
        features.extend(params.encoder.projection.matvec(&mean));
        pooled.push(mean);
    }
    features.resize(params.feature_len(), 0.0);
    Encoded { pooled, features }
}

fn encode_blocks(
    params: &ReaderParams,
    claim: &Claim,
    retrieved: &[Vec<Token>],
) -> Result<Encoded> {
    Ok(encode_ids(params, &block_ids(params, claim, retrieved)?))
}

/// `[h_T; h_p1; …; h_pk]`, zero blocks for missing passages.
pub fn reader_encode(params: &ReaderParams, example: &ReaderExample) -> Result<Vec<f64>> {
    Ok(encode_blocks(params, &example.claim, &example.retrieved)?.features)
}

struct Mlp {
    hidden_pre: Vec<f64>,
    hidden: Vec<f64>,
    probs: Vec<f64>,
}

fn mlp_forward(params: &ReaderParams, features: &[f64]) -> Result<Mlp> {
    if features.len() != params.feature_len() {
        return Err(Error::DimensionMismatch {
            expected: params.feature_len(),
            found: features.len(),
        });
    }
    let mut hidden_pre = params.w1.matvec(features);
    for (z, b) in hidden_pre.iter_mut().zip(params.b1.as_slice()) {
        *z += b;
    }
    let hidden: Vec<f64> = hidden_pre.iter().map(|&z| z.max(0.0)).collect();
    let mut logits = params.w2.matvec(&hidden);
    for (z, b) in logits.iter_mut().zip(params.b2.as_slice()) {
        *z += b;
    }
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::NonFinite("reader logits".into()));
    }
    Ok(Mlp {
        hidden_pre,
        hidden,
        probs: softmax(&logits),
    })
}

/// `softmax(W2 · relu(W1 · f + b1) + b2)`.
pub fn reader_forward(params: &ReaderParams, features: &[f64]) -> Result<Vec<f64>> {
    Ok(mlp_forward(params, features)?.probs)
}

fn nll(p: f64) -> f64 {
    -p.max(1e-300).ln()
}

pub fn reader_loss(params: &ReaderParams, batch: &[ReaderExample]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty reader batch".into()));
    }
    let mut total = 0.0;
    for ex in batch {
        let f = reader_encode(params, ex)?;
        total += nll(reader_forward(params, &f)?[ex.gold.index()]);
    }
    Ok(total / batch.len() as f64)
}

/// Adds one example's contribution to `grads`, scaled by `1/n`; returns its
/// loss.
fn accumulate(
    params: &ReaderParams,
    ids: &[Vec<usize>],
    gold: VerdictLabel,
    n: f64,
    grads: &mut ReaderGrads,
) -> Result<f64> {
    let d = params.dim();
    let enc = encode_ids(params, ids);
    let mlp = mlp_forward(params, &enc.features)?;
    let gold = gold.index();
    let loss = nll(mlp.probs[gold]);

    let mut d_logits = mlp.probs;
    d_logits[gold] -= 1.0;
    d_logits.iter_mut().for_each(|v| *v /= n);
    grads.w2.add_outer(1.0, &d_logits, &mlp.hidden);
    for (g, v) in grads.b2.as_mut_slice().iter_mut().zip(&d_logits) {
        *g += v;
    }
    let mut d_hidden = params.w2.matvec_t(&d_logits);
    for (g, &z) in d_hidden.iter_mut().zip(&mlp.hidden_pre) {
        if z <= 0.0 {
            *g = 0.0;
        }
    }
    grads.w1.add_outer(1.0, &d_hidden, &enc.features);
    for (g, v) in grads.b1.as_mut_slice().iter_mut().zip(&d_hidden) {
        *g += v;
    }
    let d_features = params.w1.matvec_t(&d_hidden);
    for (b, (block, pooled)) in ids.iter().zip(&enc.pooled).enumerate() {
        let g = &d_features[b * d..(b + 1) * d];
        params
            .encoder
            .backprop(&mut grads.encoder, block, pooled, g);
    }
    Ok(loss)
}

pub fn reader_loss_and_grads(
    params: &ReaderParams,
    batch: &[ReaderExample],
) -> Result<(f64, ReaderGrads)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty reader batch".into()));
    }
    let n = batch.len() as f64;
    let mut grads = params.zero_grads();
    let mut total = 0.0;
    for ex in batch {
        let ids = block_ids(params, &ex.claim, &ex.retrieved)?;
        total += accumulate(params, &ids, ex.gold, n, &mut grads)?;
    }
    Ok((total / n, grads))
}

pub fn reader_grads(params: &ReaderParams, batch: &[ReaderExample]) -> Result<ReaderGrads> {
    Ok(reader_loss_and_grads(params, batch)?.1)
}

/// Template and passage tokens of the training set.
pub fn reader_vocabulary(examples: &[ReaderExample]) -> Vocabulary {
    Vocabulary::new(examples.iter().flat_map(|ex| {
        tokenize(&render_template(&ex.claim))
            .into_iter()
            .chain(ex.retrieved.iter().flatten().cloned())
    }))
}

/// Trains a fresh reader over the vocabulary of `examples`.
pub fn train_reader(
    examples: &[ReaderExample],
    config: &ReaderConfig,
) -> Result<(ReaderParams, Vec<EpochLoss>)> {
    if examples.is_empty() {
        return Err(Error::InvalidArgument("no reader training examples".into()));
    }
    let params = ReaderParams::init(reader_vocabulary(examples), config)?;
    continue_training(params, examples, config)
}

/// Runs `config.epochs` epochs of mini-batch training from `params`.
pub fn continue_training(
    mut params: ReaderParams,
    examples: &[ReaderExample],
    config: &ReaderConfig,
) -> Result<(ReaderParams, Vec<EpochLoss>)> {
    config.validate()?;
    let optimizer = config.optimizer_config();
    let mut state = OptimizerState::new();
    let mut rng = rng::substream(config.seed, stream::READER_ORDER);
    let indexed = examples
        .iter()
        .map(|ex| Ok((block_ids(&params, &ex.claim, &ex.retrieved)?, ex.gold)))
        .collect::<Result<Vec<_>>>()?;
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(config.batch_size) {
            let n = chunk.len() as f64;
            let mut grads = params.zero_grads();
            let mut loss = 0.0;
            for &i in chunk {
                let (ids, gold) = &indexed[i];
                loss += accumulate(&params, ids, *gold, n, &mut grads)?;
            }
            optimizer_step(&mut params, &grads, &mut state, &optimizer)?;
            total += loss / n;
            batches += 1;
        }
        history.push(EpochLoss {
            epoch: epoch + 1,
            mean_loss: total / batches as f64,
        });
    }
    Ok((params, history))
}

/// Index of the largest entry; ties go to the earliest label.
fn argmax(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

pub fn classify(
    params: &ReaderParams,
    claim: &Claim,
    retrieved: &[Vec<Token>],
) -> Result<(VerdictLabel, Vec<f64>)> {
    let features = encode_blocks(params, claim, retrieved)?.features;
    let probs = reader_forward(params, &features)?;
    let label = VerdictLabel::from_index(argmax(&probs)).expect("seven logits");
    Ok((label, probs))
}

pub fn accuracy(params: &ReaderParams, examples: &[ReaderExample]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::InvalidArgument("no examples".into()));
    }
    let mut hits = 0;
    for ex in examples {
        if classify(params, &ex.claim, &ex.retrieved)?.0 == ex.gold {
            hits += 1;
        }
    }
    Ok(hits as f64 / examples.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub label: VerdictLabel,
    pub probs: Vec<f64>,
    pub evidence: RetrievalResult,
}

/// One line of a predictions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub claim_id: String,
    pub label: VerdictLabel,
    pub probs: Vec<f64>,
    pub evidence: Vec<String>,
}

impl Prediction {
    pub fn record(&self, claim_id: &str) -> PredictionRecord {
        PredictionRecord {
            claim_id: claim_id.to_string(),
            label: self.label,
            probs: self.probs.clone(),
            evidence: self.evidence.passage_ids().map(str::to_string).collect(),
        }
    }
}

/// Looks up the token sequences of a retrieval result.
pub fn evidence_tokens(
    result: &RetrievalResult,
    passages: &PassageCollection,
) -> Result<Vec<Vec<Token>>> {
    result
        .passage_ids()
        .map(|id| {
            passages
                .get(id)
                .map(|p| p.tokens.clone())
                .ok_or_else(|| Error::UnknownPassage(id.to_string()))
        })
        .collect()
}

/// Retrieve top-k, encode, classify.
pub fn predict<R: Retriever + ?Sized>(
    claim: &Claim,
    retriever: &R,
    passages: &PassageCollection,
    k: usize,
    params: &ReaderParams,
) -> Result<Prediction> {
    if k > params.k {
        return Err(Error::InvalidArgument(format!(
            "k = {k} exceeds the reader's k = {}",
            params.k
        )));
    }
    let evidence = retriever.retrieve(&Query::from_claim(claim), k)?;
    let tokens = evidence_tokens(&evidence, passages)?;
    let (label, probs) = classify(params, claim, &tokens)?;
    Ok(Prediction {
        label,
        probs,
        evidence,
    })
}
