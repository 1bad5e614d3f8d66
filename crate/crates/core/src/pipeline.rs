//! Two-step training (`fit`), inference, and model persistence.
//!
//! # Model file layout
//!
//! All integers and floats are little-endian.
//!
//! | bytes            | content                                           |
//! |------------------|---------------------------------------------------|
//! | 13               | magic `SETFIT-DESK/1`                             |
//! | 4                | `u32` manifest length `m`                          |
//! | `m`              | UTF-8 JSON manifest (dims, tokenizer, labels, training config) |
//! | `4 * V * d`      | encoder table, `f32`, row-major                   |
//! | `4 * C * d`      | head weights, `f32`, row-major                    |
//! | `4 * C`          | head bias, `f32`                                  |
//! | 4                | CRC-32 (IEEE) of every preceding byte             |
//!
//! [`fit`] and [`crate::distill::distill`] round their parameters to `f32`
//! before returning, so a saved model loads back bit-identical.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusError, Dataset};
use crate::distill::DistillConfig;
use crate::encoder::{
    init_params, EncoderParams, EncoderSpec, FinetuneConfig, SentenceEmbedding, SentenceEncoder,
};
use crate::error::{Error, Result, ResultExt};
use crate::head::{head_predict, train_head, HeadParams, HeadTrainConfig, Prediction};
use crate::pairs::{generate_pairs, PairMode, PairSet, TrainPair};
use crate::rng::SeedPlan;

pub const MAGIC_PREFIX: &[u8; 12] = b"SETFIT-DESK/";
pub const FORMAT_VERSION: &str = "SETFIT-DESK/1";
pub const TOKENIZER_ID: &str = "lowercase+alnum-split+fnv1a64(seed_le||token)%V";

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("not a model file: {0}")]
    BadFormat(String),
    #[error("unsupported model format version {0:?}")]
    UnsupportedVersion(String),
    #[error("model file truncated: need {expected} bytes, have {found}")]
    Truncated { expected: usize, found: usize },
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("bad manifest: {0}")]
    Manifest(String),
}

/// Configuration of the two-step training procedure.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// Pairs per class per polarity.
    pub r_pairs: usize,
    pub pair_mode: PairMode,
    pub encoder: EncoderSpec,
    pub finetune: FinetuneConfig,
    pub head: HeadTrainConfig,
    pub pair_seed: u64,
    pub init_seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self::seeded(0)
    }
}

impl FitConfig {
    /// Defaults with every stage seed derived from `master`.
    pub fn seeded(master: u64) -> Self {
        Self {
            r_pairs: 20,
            pair_mode: PairMode::Strict,
            encoder: EncoderSpec::default(),
            finetune: FinetuneConfig::default(),
            head: HeadTrainConfig::default(),
            pair_seed: 0,
            init_seed: 0,
        }
        .with_seed(master)
    }

    /// Replaces the pair, init, shuffle and head seeds with streams derived
    /// from `master`.
    pub fn with_seed(mut self, master: u64) -> Self {
        let plan = SeedPlan::derive(master);
        self.pair_seed = plan.pairs;
        self.init_seed = plan.init;
        self.finetune.seed = plan.shuffle;
        self.head.seed = plan.head;
        self
    }
}

/// How a model was trained; stored in the model manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TrainSnapshot {
    Fit(FitConfig),
    Distill(DistillConfig),
}

/// A fine-tuned encoder composed with a classification head.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub encoder: EncoderParams,
    pub head: HeadParams,
    pub snapshot: TrainSnapshot,
}

/// A model plus what each training step consumed.
#[derive(Clone, Debug)]
pub struct FitOutcome {
    pub model: Model,
    pub pairs: PairSet,
    pub head_rows: usize,
}

impl Model {
    pub fn new(encoder: EncoderParams, head: HeadParams, snapshot: TrainSnapshot) -> Result<Self> {
        head.validate()?;
        if head.dim != encoder.dim() {
            return Err(Error::Config(format!(
                "head dimension {} does not match encoder dimension {}",
                head.dim,
                encoder.dim()
            )));
        }
        Ok(Self {
            encoder,
            head,
            snapshot,
        })
    }

    pub fn label_names(&self) -> &[String] {
        &self.head.label_names
    }

    pub fn embed(&self, text: &str) -> Result<SentenceEmbedding> {
        Ok(self.encoder.embed(text)?)
    }

    pub fn predict_full(&self, text: &str) -> Result<Prediction> {
        Ok(head_predict(&self.head, &self.embed(text)?)?)
    }

    pub fn predict(&self, text: &str) -> Result<usize> {
        self.predict_full(text).map(|p| p.label)
    }

    pub fn predict_proba(&self, text: &str) -> Result<Vec<f64>> {
        self.predict_full(text).map(|p| p.probabilities)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let manifest = Manifest {
            format_version: FORMAT_VERSION.to_string(),
            tokenizer: TOKENIZER_ID.to_string(),
            encoder: self.encoder.spec(),
            label_names: self.head.label_names.clone(),
            dtype: "f32le".to_string(),
            table_len: self.encoder.table().len(),
            weights_len: self.head.weights.len(),
            bias_len: self.head.bias.len(),
            training: self.snapshot.clone(),
        };
        let json = serde_json::to_vec(&manifest).expect("manifest serializes");
        let n_floats = manifest.table_len + manifest.weights_len + manifest.bias_len;
        let mut out = Vec::with_capacity(FORMAT_VERSION.len() + 8 + json.len() + 4 * n_floats);
        out.extend_from_slice(FORMAT_VERSION.as_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for x in self
            .encoder
            .table()
            .iter()
            .chain(&self.head.weights)
            .chain(&self.head.bias)
        {
            out.extend_from_slice(&(*x as f32).to_le_bytes());
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let magic_len = FORMAT_VERSION.len();
        if bytes.len() < MAGIC_PREFIX.len() || &bytes[..MAGIC_PREFIX.len()] != MAGIC_PREFIX {
            return Err(FormatError::BadFormat("missing SETFIT-DESK magic".into()).into());
        }
        if bytes.len() < magic_len {
            return Err(FormatError::Truncated {
                expected: magic_len,
                found: bytes.len(),
            }
            .into());
        }
        if &bytes[..magic_len] != FORMAT_VERSION.as_bytes() {
            let version = String::from_utf8_lossy(&bytes[..magic_len]).into_owned();
            return Err(FormatError::UnsupportedVersion(version).into());
        }
        let header_end = magic_len + 4;
        if bytes.len() < header_end {
            return Err(FormatError::Truncated {
                expected: header_end,
                found: bytes.len(),
            }
            .into());
        }
        let manifest_len =
            u32::from_le_bytes(bytes[magic_len..header_end].try_into().unwrap()) as usize;
        let manifest_end = header_end + manifest_len;
        if bytes.len() < manifest_end {
            return Err(FormatError::Truncated {
                expected: manifest_end,
                found: bytes.len(),
            }
            .into());
        }
        let manifest: Manifest = serde_json::from_slice(&bytes[header_end..manifest_end])
            .map_err(|e| FormatError::Manifest(e.to_string()))?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(FormatError::UnsupportedVersion(manifest.format_version).into());
        }
        if manifest.dtype != "f32le" {
            return Err(
                FormatError::Manifest(format!("unknown dtype {:?}", manifest.dtype)).into(),
            );
        }
        if manifest.tokenizer != TOKENIZER_ID {
            return Err(FormatError::Manifest(format!(
                "unknown tokenizer {:?}",
                manifest.tokenizer
            ))
            .into());
        }
        let n_floats = manifest.table_len + manifest.weights_len + manifest.bias_len;
        let expected = manifest_end + 4 * n_floats + 4;
        if bytes.len() < expected {
            return Err(FormatError::Truncated {
                expected,
                found: bytes.len(),
            }
            .into());
        }
        if bytes.len() > expected {
            return Err(FormatError::BadFormat(format!(
                "{} trailing bytes",
                bytes.len() - expected
            ))
            .into());
        }
        let body = &bytes[..expected - 4];
        let stored = u32::from_le_bytes(bytes[expected - 4..].try_into().unwrap());
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(FormatError::ChecksumMismatch { stored, computed }.into());
        }

        let mut floats = bytes[manifest_end..expected - 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64);
        let table: Vec<f64> = floats.by_ref().take(manifest.table_len).collect();
        let weights: Vec<f64> = floats.by_ref().take(manifest.weights_len).collect();
        let bias: Vec<f64> = floats.collect();
        let encoder = EncoderParams::from_table(manifest.encoder, table)?;
        let head = HeadParams {
            dim: manifest.encoder.dim,
            weights,
            bias,
            label_names: manifest.label_names,
        };
        Model::new(encoder, head, manifest.training)
    }
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format_version: String,
    tokenizer: String,
    encoder: EncoderSpec,
    label_names: Vec<String>,
    dtype: String,
    table_len: usize,
    weights_len: usize,
    bias_len: usize,
    training: TrainSnapshot,
}

pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    std::fs::write(path, model.to_bytes()).context(|| format!("writing {}", path.display()))
}

pub fn load_model(path: &Path) -> Result<Model> {
    let bytes = std::fs::read(path).context(|| format!("reading {}", path.display()))?;
    Model::from_bytes(&bytes).context(|| format!("loading {}", path.display()))
}

pub(crate) fn embed_all(encoder: &EncoderParams, texts: &[&str]) -> Result<Vec<SentenceEmbedding>> {
    texts
        .iter()
        .enumerate()
        .map(|(i, t)| encoder.embed(t).context(|| format!("text {i}")))
        .collect()
}

/// Step 1 shared by `fit` and distillation: fresh encoder, fine-tuned on
/// the contrastive pairs followed by `extra` pairs, rounded to `f32`.
pub(crate) fn train_encoder(
    spec: EncoderSpec,
    init_seed: u64,
    pairs: &[TrainPair],
    finetune: &FinetuneConfig,
) -> Result<EncoderParams> {
    let fresh = init_params(spec, init_seed)?;
    let mut tuned = fresh.train_on_pairs(pairs, finetune)?;
    tuned.round_to_f32();
    Ok(tuned)
}

/// Two-step training: contrastive encoder fine-tuning on
/// `generate_pairs(train, R)`, then a head fit on the fine-tuned
/// embeddings of the training examples.
pub fn fit(train: &Dataset, config: &FitConfig) -> Result<Model> {
    fit_with_trace(train, config).map(|o| o.model)
}

pub fn fit_with_trace(train: &Dataset, config: &FitConfig) -> Result<FitOutcome> {
    if train.is_empty() {
        return Err(CorpusError::EmptyDataset.into());
    }
    let pairs = generate_pairs(train, config.r_pairs, config.pair_seed, config.pair_mode)
        .context(|| "fit step 1 (pair generation)".into())?;
    let encoder = train_encoder(
        config.encoder,
        config.init_seed,
        &pairs.pairs,
        &config.finetune,
    )
    .context(|| "fit step 1 (encoder fine-tuning)".into())?;
    let head = train_head_on(&encoder, train, &config.head)
        .context(|| "fit step 2 (head training)".into())?;
    let head_rows = train.len();
    Ok(FitOutcome {
        model: Model::new(encoder, head, TrainSnapshot::Fit(*config))?,
        pairs,
        head_rows,
    })
}

fn train_head_on(
    encoder: &EncoderParams,
    train: &Dataset,
    config: &HeadTrainConfig,
) -> Result<HeadParams> {
    let texts: Vec<&str> = train.texts().collect();
    let embeddings = embed_all(encoder, &texts)?;
    let mut head = train_head(&embeddings, &train.labels(), train.label_names(), config)?;
    head.round_to_f32();
    Ok(head)
}

pub fn predict(model: &Model, text: &str) -> Result<usize> {
    model.predict(text)
}

pub fn predict_proba(model: &Model, text: &str) -> Result<Vec<f64>> {
    model.predict_proba(text)
}
