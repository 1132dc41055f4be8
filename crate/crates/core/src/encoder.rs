//! Two-tower bag-of-embeddings encoder.
//!
//! Each tower maps a token sequence to `W · mean(E[t])` over its in-vocabulary
//! tokens; claims go through the claim tower, passages through the passage
//! tower, and relevance is the dot product of the two vectors. Tokens outside
//! the vocabulary are dropped, so an all-OOV input encodes to the zero vector.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::sync::Arc;

use rand::Rng as _;

use crate::checkpoint::{self, LineReader};
use crate::corpus::Token;
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, Matrix, Tensors};
use crate::rng::{self, stream};

const ENCODER_MAGIC: &str = "XICT-ENC";

/// An ordered token list with its inverse index.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Vocabulary {
    tokens: Vec<Token>,
    index: HashMap<Token, usize>,
}

impl Vocabulary {
    /// Sorted, deduplicated vocabulary.
    pub fn new<I: IntoIterator<Item = Token>>(tokens: I) -> Self {
        let mut tokens: Vec<Token> = tokens.into_iter().collect();
        tokens.sort();
        tokens.dedup();
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self { tokens, index }
    }

    /// Keeps the given order; duplicates are an error.
    pub fn from_ordered(tokens: Vec<Token>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Checkpoint(format!(
                    "duplicate vocabulary token `{t}`"
                )));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    /// In-vocabulary ids of `tokens`, repetitions kept.
    pub fn ids(&self, tokens: &[Token]) -> Vec<usize> {
        tokens.iter().filter_map(|t| self.id(t)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseVector(Vec<f64>);

impl DenseVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl From<Vec<f64>> for DenseVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// Dot-product relevance.
pub fn similarity(claim: &DenseVector, passage: &DenseVector) -> Result<f64> {
    if claim.len() != passage.len() {
        return Err(Error::DimensionMismatch {
            expected: claim.len(),
            found: passage.len(),
        });
    }
    Ok(dot(claim.as_slice(), passage.as_slice()))
}

/// Embedding table plus square projection.
#[derive(Debug, Clone, PartialEq)]
pub struct Tower {
    pub embedding: Matrix,
    pub projection: Matrix,
}

impl Tower {
    pub fn zeros(vocab_size: usize, dim: usize) -> Self {
        Self {
            embedding: Matrix::zeros(vocab_size, dim),
            projection: Matrix::zeros(dim, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.embedding.cols()
    }

    /// Mean embedding over `ids`; zero when `ids` is empty.
    pub fn pool(&self, ids: &[usize]) -> Vec<f64> {
        let mut mean = vec![0.0; self.dim()];
        if ids.is_empty() {
            return mean;
        }
        for &i in ids {
            axpy(&mut mean, 1.0, self.embedding.row(i));
        }
        let n = ids.len() as f64;
        mean.iter_mut().for_each(|v| *v /= n);
        mean
    }

    pub fn encode_ids(&self, ids: &[usize]) -> DenseVector {
        DenseVector(self.projection.matvec(&self.pool(ids)))
    }

    /// Accumulates the gradient of `g · (W · mean(E[ids]))` into `grad`,
    /// where `pooled` is the forward mean.
    pub(crate) fn backprop(&self, grad: &mut Tower, ids: &[usize], pooled: &[f64], g: &[f64]) {
        grad.projection.add_outer(1.0, g, pooled);
        if ids.is_empty() {
            return;
        }
        let mut d_mean = self.projection.matvec_t(g);
        let n = ids.len() as f64;
        d_mean.iter_mut().for_each(|v| *v /= n);
        for &i in ids {
            axpy(grad.embedding.row_mut(i), 1.0, &d_mean);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TowerKind {
    Claim,
    Passage,
}

/// Parameters of both towers over a shared vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    vocab: Arc<Vocabulary>,
    pub claim: Tower,
    pub passage: Tower,
}

/// Uniform `[-scale, scale]` embeddings, identity projections.
pub fn init_params(vocab: Vocabulary, dim: usize, seed: u64, scale: f64) -> Result<EncoderParams> {
    if vocab.is_empty() {
        return Err(Error::EmptyVocabulary);
    }
    if dim == 0 {
        return Err(Error::InvalidArgument(
            "encoder dimension must be at least 1".into(),
        ));
    }
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "init scale {scale} must be positive"
        )));
    }
    let mut rng = rng::substream(seed, stream::ENCODER_INIT);
    let tower = |rng: &mut rng::Rng| {
        let mut t = Tower::zeros(vocab.len(), dim);
        t.embedding
            .as_mut_slice()
            .iter_mut()
            .for_each(|v| *v = rng.gen_range(-scale..=scale));
        t.projection = Matrix::identity(dim);
        t
    };
    let claim = tower(&mut rng);
    let passage = tower(&mut rng);
    Ok(EncoderParams {
        vocab: Arc::new(vocab),
        claim,
        passage,
    })
}

impl EncoderParams {
    pub fn from_parts(vocab: Vocabulary, claim: Tower, passage: Tower) -> Result<Self> {
        let dim = claim.dim();
        for (name, t) in [("claim", &claim), ("passage", &passage)] {
            if t.embedding.rows() != vocab.len() {
                return Err(Error::DimensionMismatch {
                    expected: vocab.len(),
                    found: t.embedding.rows(),
                });
            }
            if t.dim() != dim || t.projection.shape() != (dim, dim) {
                return Err(Error::InvalidArgument(format!(
                    "{name} tower shape mismatch"
                )));
            }
        }
        Ok(Self {
            vocab: Arc::new(vocab),
            claim,
            passage,
        })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn dim(&self) -> usize {
        self.claim.dim()
    }

    pub fn tower(&self, kind: TowerKind) -> &Tower {
        match kind {
            TowerKind::Claim => &self.claim,
            TowerKind::Passage => &self.passage,
        }
    }

    pub fn encode(&self, kind: TowerKind, tokens: &[Token]) -> DenseVector {
        self.tower(kind).encode_ids(&self.vocab.ids(tokens))
    }

    pub fn zero_grads(&self) -> EncoderGrads {
        EncoderGrads {
            claim: Tower::zeros(self.vocab.len(), self.dim()),
            passage: Tower::zeros(self.vocab.len(), self.dim()),
        }
    }

    /// Header, vocabulary, then claim embedding, claim projection, passage
    /// embedding and passage projection, one row per line.
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "{ENCODER_MAGIC} v1 d={} |V|={}",
            self.dim(),
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
        let header = checkpoint::parse_header(&r.next_line("header")?, ENCODER_MAGIC)?;
        let dim = checkpoint::header_field(&header, "d")?;
        let n = checkpoint::header_field(&header, "|V|")?;
        if dim == 0 || n == 0 {
            return Err(Error::Checkpoint("empty dimension or vocabulary".into()));
        }
        let tokens = (0..n)
            .map(|_| r.next_line("vocabulary"))
            .collect::<Result<Vec<_>>>()?;
        let vocab = Vocabulary::from_ordered(tokens)?;
        let claim = Tower {
            embedding: r.read_matrix(n, dim, "claim embedding")?,
            projection: r.read_matrix(dim, dim, "claim projection")?,
        };
        let passage = Tower {
            embedding: r.read_matrix(n, dim, "passage embedding")?,
            projection: r.read_matrix(dim, dim, "passage projection")?,
        };
        r.expect_end()?;
        Self::from_parts(vocab, claim, passage)
    }

    pub fn checkpoint_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_checkpoint(&mut buf)
            .expect("writing to memory cannot fail");
        buf
    }

    /// SHA-256 of the checkpoint serialization.
    pub fn fingerprint(&self) -> String {
        checkpoint::sha256_hex(&self.checkpoint_bytes())
    }
}

impl Tensors for EncoderParams {
    fn tensors(&self) -> Vec<&Matrix> {
        vec![
            &self.claim.embedding,
            &self.claim.projection,
            &self.passage.embedding,
            &self.passage.projection,
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        vec![
            &mut self.claim.embedding,
            &mut self.claim.projection,
            &mut self.passage.embedding,
            &mut self.passage.projection,
        ]
    }
}

/// Gradient with the same tensor layout as [`EncoderParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderGrads {
    pub claim: Tower,
    pub passage: Tower,
}

impl Tensors for EncoderGrads {
    fn tensors(&self) -> Vec<&Matrix> {
        vec![
            &self.claim.embedding,
            &self.claim.projection,
            &self.passage.embedding,
            &self.passage.projection,
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        vec![
            &mut self.claim.embedding,
            &mut self.claim.projection,
            &mut self.passage.embedding,
            &mut self.passage.projection,
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vocab(n: usize) -> Vocabulary {
        Vocabulary::new((0..n).map(|i| format!("t{i}")))
    }

    fn toks(s: &[&str]) -> Vec<Token> {
        s.iter().map(|t| t.to_string()).collect()
    }

    #[test]
    fn init_is_seeded_with_identity_projection() {
        let a = init_params(vocab(6), 3, 9, 0.5).unwrap();
        let b = init_params(vocab(6), 3, 9, 0.5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.claim.projection, Matrix::identity(3));
        assert_eq!(a.passage.projection, Matrix::identity(3));
        assert_ne!(a.claim.embedding, a.passage.embedding);
        assert!(a.claim.embedding.as_slice().iter().all(|v| v.abs() <= 0.5));
        assert!(init_params(Vocabulary::default(), 3, 0, 0.1).is_err());
        assert!(init_params(vocab(2), 0, 0, 0.1).is_err());
        assert!(init_params(vocab(2), 2, 0, 0.0).is_err());
    }

    #[test]
    fn init_entries_pass_kolmogorov_smirnov() {
        // 10^5 entries; 1.63 / sqrt(n) is the 1% critical value.
        let p = init_params(vocab(12_500), 4, 3, 0.25).unwrap();
        let mut xs: Vec<f64> = p
            .claim
            .embedding
            .as_slice()
            .iter()
            .chain(p.passage.embedding.as_slice())
            .map(|v| (v + 0.25) / 0.5)
            .collect();
        assert_eq!(xs.len(), 100_000);
        xs.sort_by(f64::total_cmp);
        let n = xs.len() as f64;
        let d = xs
            .iter()
            .enumerate()
            .map(|(i, &x)| ((i + 1) as f64 / n - x).abs().max((x - i as f64 / n).abs()))
            .fold(0.0, f64::max);
        assert!(d < 1.63 / n.sqrt(), "KS statistic {d}");
    }

    #[test]
    fn encode_rules() {
        let p = init_params(vocab(5), 3, 1, 1.0).unwrap();
        assert_eq!(
            p.encode(TowerKind::Claim, &toks(&["nope", "missing"])),
            DenseVector::zeros(3)
        );
        let single = p.encode(TowerKind::Passage, &toks(&["t2"]));
        let row = p.passage.embedding.row(p.vocab().id("t2").unwrap());
        assert_eq!(single.as_slice(), row);
        let a = p.encode(TowerKind::Claim, &toks(&["t0", "t1", "t3", "t1"]));
        let b = p.encode(TowerKind::Claim, &toks(&["t1", "t3", "t1", "t0"]));
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn similarity_examples() {
        let p = DenseVector::new(vec![3.0, 4.0]);
        assert_eq!(similarity(&DenseVector::zeros(2), &p).unwrap(), 0.0);
        assert_eq!(
            similarity(&DenseVector::new(vec![1.0, 2.0]), &p).unwrap(),
            11.0
        );
        assert!(similarity(&DenseVector::zeros(3), &p).is_err());
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let p = init_params(vocab(7), 4, 5, 0.3).unwrap();
        let bytes = p.checkpoint_bytes();
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(text.starts_with("XICT-ENC v1 d=4 |V|=7\nt0\n"));
        let back = EncoderParams::read_checkpoint(std::io::Cursor::new(bytes)).unwrap();
        assert_eq!(back, p);
        assert_eq!(back.fingerprint(), p.fingerprint());
    }

    #[test]
    fn truncated_checkpoint_is_rejected() {
        let p = init_params(vocab(3), 2, 5, 0.3).unwrap();
        let bytes = p.checkpoint_bytes();
        let last_row = bytes[..bytes.len() - 1]
            .iter()
            .rposition(|&b| b == b'\n')
            .unwrap();
        let cut = &bytes[..=last_row];
        assert!(EncoderParams::read_checkpoint(std::io::Cursor::new(cut)).is_err());
    }

    proptest! {
        #[test]
        fn similarity_is_symmetric_and_bilinear(
            c in prop::collection::vec(-10.0f64..10.0, 4),
            p in prop::collection::vec(-10.0f64..10.0, 4),
            alpha in -5.0f64..5.0,
        ) {
            let (cv, pv) = (DenseVector::new(c.clone()), DenseVector::new(p));
            let s = similarity(&cv, &pv).unwrap();
            prop_assert!((s - similarity(&pv, &cv).unwrap()).abs() < 1e-12);
            let scaled = DenseVector::new(c.iter().map(|x| alpha * x).collect());
            let lhs = similarity(&scaled, &pv).unwrap();
            prop_assert!((lhs - alpha * s).abs() <= 1e-9 * (1.0 + s.abs() * alpha.abs()));
        }
    }
}
