//! Hashed bag-of-embeddings sentence encoder with mean pooling.
//!
//! Text is lowercased, split on runs of non-alphanumeric characters, and
//! each token is hashed into one of `vocab_buckets` rows of a trainable
//! `vocab_buckets x dim` table. A sentence embedding is the mean of its
//! token rows. Fine-tuning minimizes `(cos(ST(a), ST(b)) - target)^2` over
//! sentence pairs with Adam.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::optim::{AdamConstants, SparseRowAdam};
use crate::pairs::TrainPair;
use crate::rng::rng_from_seed;

/// Norms below this are treated as zero by [`cosine`].
pub const MIN_NORM: f64 = 1e-12;
pub const INIT_RANGE: f64 = 0.05;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EncoderError {
    #[error("text produced no tokens")]
    EmptyInput,
    #[error("vector norm below {MIN_NORM}")]
    ZeroNorm,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid encoder parameters: {0}")]
    InvalidParams(String),
    #[error("invalid fine-tuning config: {0}")]
    InvalidConfig(String),
    #[error("pair {index}: {source}")]
    Pair {
        index: usize,
        #[source]
        source: Box<EncoderError>,
    },
}

impl EncoderError {
    fn at_pair(self, index: usize) -> Self {
        EncoderError::Pair {
            index,
            source: Box::new(self),
        }
    }
}

/// Shape and hashing configuration of an encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub vocab_buckets: usize,
    pub dim: usize,
    pub max_len: usize,
    pub hash_seed: u64,
}

impl Default for EncoderSpec {
    fn default() -> Self {
        Self {
            vocab_buckets: 65_536,
            dim: 64,
            max_len: 256,
            hash_seed: 0,
        }
    }
}

impl EncoderSpec {
    pub fn validate(&self) -> Result<(), EncoderError> {
        if self.vocab_buckets == 0 || self.dim == 0 || self.max_len == 0 {
            return Err(EncoderError::InvalidParams(format!(
                "vocab_buckets, dim and max_len must be positive (got {}, {}, {})",
                self.vocab_buckets, self.dim, self.max_len
            )));
        }
        if self.vocab_buckets > u32::MAX as usize + 1 {
            return Err(EncoderError::InvalidParams(
                "vocab_buckets exceeds 2^32".into(),
            ));
        }
        Ok(())
    }
}

/// Token bucket ids, each in `[0, vocab_buckets)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSeq(pub Vec<u32>);

impl TokenSeq {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SentenceEmbedding(pub Vec<f64>);

impl SentenceEmbedding {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub adam: AdamConstants,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 16,
            epochs: 1,
            seed: 0,
            adam: AdamConstants::default(),
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<(), EncoderError> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(EncoderError::InvalidConfig(format!(
                "learning_rate must be finite and nonnegative, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(EncoderError::InvalidConfig(
                "batch_size must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Common surface for sentence encoders used by the pipeline.
pub trait SentenceEncoder: Sized {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<SentenceEmbedding, EncoderError>;
    fn train_on_pairs(
        &self,
        pairs: &[TrainPair],
        config: &FinetuneConfig,
    ) -> Result<Self, EncoderError>;
}

/// Gradient with respect to a subset of table rows.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SparseGrad {
    pub rows: BTreeMap<u32, Vec<f64>>,
}

impl SparseGrad {
    fn add_row(&mut self, row: u32, dim: usize, scale: f64, values: &[f64]) {
        let entry = self.rows.entry(row).or_insert_with(|| vec![0.0; dim]);
        for (e, v) in entry.iter_mut().zip(values) {
            *e += scale * v;
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    spec: EncoderSpec,
    table: Vec<f64>,
}

/// Table entries i.i.d. uniform in `[-0.05, 0.05]`.
pub fn init_params(spec: EncoderSpec, init_seed: u64) -> Result<EncoderParams, EncoderError> {
    spec.validate()?;
    let mut rng = rng_from_seed(init_seed);
    let table = (0..spec.vocab_buckets * spec.dim)
        .map(|_| rng.random_range(-INIT_RANGE..=INIT_RANGE))
        .collect();
    Ok(EncoderParams { spec, table })
}

fn fnv1a(seed: u64, token: &str) -> u64 {
    seed.to_le_bytes()
        .iter()
        .chain(token.as_bytes())
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

impl EncoderParams {
    pub fn from_table(spec: EncoderSpec, table: Vec<f64>) -> Result<Self, EncoderError> {
        spec.validate()?;
        if table.len() != spec.vocab_buckets * spec.dim {
            return Err(EncoderError::InvalidParams(format!(
                "table has {} entries, expected {}",
                table.len(),
                spec.vocab_buckets * spec.dim
            )));
        }
        if table.iter().any(|x| !x.is_finite()) {
            return Err(EncoderError::InvalidParams("non-finite table entry".into()));
        }
        Ok(Self { spec, table })
    }

    pub fn spec(&self) -> EncoderSpec {
        self.spec
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }

    pub fn table_mut(&mut self) -> &mut [f64] {
        &mut self.table
    }

    pub fn row(&self, id: u32) -> &[f64] {
        let d = self.spec.dim;
        &self.table[id as usize * d..(id as usize + 1) * d]
    }

    /// Rounds every table entry to the nearest `f32`.
    pub fn round_to_f32(&mut self) {
        for x in &mut self.table {
            *x = *x as f32 as f64;
        }
    }

    pub fn tokenize(&self, text: &str) -> TokenSeq {
        let lower = text.to_lowercase();
        let buckets = self.spec.vocab_buckets as u64;
        TokenSeq(
            lower
                .split(|c: char| !c.is_alphanumeric())
                .filter(|t| !t.is_empty())
                .take(self.spec.max_len)
                .map(|t| (fnv1a(self.spec.hash_seed, t) % buckets) as u32)
                .collect(),
        )
    }

    pub fn encode_tokens(&self, tokens: &TokenSeq) -> Result<SentenceEmbedding, EncoderError> {
        if tokens.is_empty() {
            return Err(EncoderError::EmptyInput);
        }
        let mut v = vec![0.0; self.spec.dim];
        for &id in &tokens.0 {
            for (acc, x) in v.iter_mut().zip(self.row(id)) {
                *acc += x;
            }
        }
        let inv = 1.0 / tokens.len() as f64;
        v.iter_mut().for_each(|x| *x *= inv);
        Ok(SentenceEmbedding(v))
    }

    pub fn encode(&self, text: &str) -> Result<SentenceEmbedding, EncoderError> {
        self.encode_tokens(&self.tokenize(text))
    }

    /// Loss of one pair on pre-tokenized input; when `grad` is given, the
    /// pair's gradient is added into it.
    fn tokens_loss(
        &self,
        a: &TokenSeq,
        b: &TokenSeq,
        target: f64,
        grad: Option<&mut SparseGrad>,
    ) -> Result<f64, EncoderError> {
        let u = self.encode_tokens(a)?;
        let v = self.encode_tokens(b)?;
        let (u, v) = (u.as_slice(), v.as_slice());
        let c = cosine(u, v)?;
        let loss = (c - target) * (c - target);
        if let Some(grad) = grad {
            let d = self.spec.dim;
            let coef = 2.0 * (c - target);
            let (du, dv) = if u == v {
                // cosine is stationary at u == v
                (vec![0.0; d], vec![0.0; d])
            } else {
                let nu2 = dot(u, u);
                let nv2 = dot(v, v);
                let inv_nunv = 1.0 / (nu2.sqrt() * nv2.sqrt());
                let du = (0..d)
                    .map(|k| coef * (v[k] * inv_nunv - c * u[k] / nu2))
                    .collect::<Vec<_>>();
                let dv = (0..d)
                    .map(|k| coef * (u[k] * inv_nunv - c * v[k] / nv2))
                    .collect::<Vec<_>>();
                (du, dv)
            };
            let sa = 1.0 / a.len() as f64;
            for &id in &a.0 {
                grad.add_row(id, d, sa, &du);
            }
            let sb = 1.0 / b.len() as f64;
            for &id in &b.0 {
                grad.add_row(id, d, sb, &dv);
            }
        }
        Ok(loss)
    }

    /// `(cos(ST(first), ST(second)) - target)^2`.
    pub fn pair_loss(&self, pair: &TrainPair) -> Result<f64, EncoderError> {
        let a = self.tokenize(&pair.first);
        let b = self.tokenize(&pair.second);
        self.tokens_loss(&a, &b, pair.target, None)
    }

    /// Loss and its gradient with respect to the table rows the pair touches.
    pub fn pair_loss_and_grad(&self, pair: &TrainPair) -> Result<(f64, SparseGrad), EncoderError> {
        let a = self.tokenize(&pair.first);
        let b = self.tokenize(&pair.second);
        let mut grad = SparseGrad::default();
        let loss = self.tokens_loss(&a, &b, pair.target, Some(&mut grad))?;
        Ok((loss, grad))
    }

    pub fn pair_loss_grad(&self, pair: &TrainPair) -> Result<SparseGrad, EncoderError> {
        self.pair_loss_and_grad(pair).map(|(_, g)| g)
    }

    /// Mean pair loss over a set; errors carry the offending pair index.
    pub fn mean_pair_loss(&self, pairs: &[TrainPair]) -> Result<f64, EncoderError> {
        if pairs.is_empty() {
            return Ok(0.0);
        }
        let mut total = 0.0;
        for (i, p) in pairs.iter().enumerate() {
            total += self.pair_loss(p).map_err(|e| e.at_pair(i))?;
        }
        Ok(total / pairs.len() as f64)
    }

    /// Siamese fine-tuning.
    ///
    /// Each epoch shuffles the pair order with a generator seeded once from
    /// `config.seed`, then walks it in batches of `batch_size` (the last may
    /// be short). A batch's gradient is the mean of its pair gradients,
    /// summed in batch order, and is applied with one Adam step.
    pub fn finetune(
        &self,
        pairs: &[TrainPair],
        config: &FinetuneConfig,
    ) -> Result<EncoderParams, EncoderError> {
        config.validate()?;
        let mut params = self.clone();
        if pairs.is_empty() || config.epochs == 0 {
            return Ok(params);
        }
        let tokenized: Vec<(TokenSeq, TokenSeq)> = pairs
            .iter()
            .map(|p| (self.tokenize(&p.first), self.tokenize(&p.second)))
            .collect();
        if let Some(i) = tokenized
            .iter()
            .position(|(a, b)| a.is_empty() || b.is_empty())
        {
            return Err(EncoderError::EmptyInput.at_pair(i));
        }

        let mut rng = rng_from_seed(config.seed);
        let mut adam = SparseRowAdam::new(self.spec.dim, config.learning_rate, config.adam);
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        for _ in 0..config.epochs {
            order.shuffle(&mut rng);
            for batch in order.chunks(config.batch_size) {
                let mut grad = SparseGrad::default();
                for &i in batch {
                    let (a, b) = &tokenized[i];
                    params
                        .tokens_loss(a, b, pairs[i].target, Some(&mut grad))
                        .map_err(|e| e.at_pair(i))?;
                }
                let inv = 1.0 / batch.len() as f64;
                for row in grad.rows.values_mut() {
                    row.iter_mut().for_each(|x| *x *= inv);
                }
                adam.step(&mut params.table, &grad.rows);
            }
        }
        Ok(params)
    }
}

impl SentenceEncoder for EncoderParams {
    fn dim(&self) -> usize {
        self.spec.dim
    }

    fn embed(&self, text: &str) -> Result<SentenceEmbedding, EncoderError> {
        self.encode(text)
    }

    fn train_on_pairs(
        &self,
        pairs: &[TrainPair],
        config: &FinetuneConfig,
    ) -> Result<Self, EncoderError> {
        self.finetune(pairs, config)
    }
}

fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

/// `u.v / (|u||v|)`, clamped to `[-1, 1]`.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64, EncoderError> {
    if u.len() != v.len() {
        return Err(EncoderError::DimensionMismatch {
            expected: u.len(),
            found: v.len(),
        });
    }
    let nu = dot(u, u).sqrt();
    let nv = dot(v, v).sqrt();
    if nu < MIN_NORM || nv < MIN_NORM {
        return Err(EncoderError::ZeroNorm);
    }
    if u == v {
        return Ok(1.0);
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}
