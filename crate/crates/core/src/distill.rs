//! Few-shot teacher to student distillation.
//!
//! The student encoder regresses the teacher encoder's cosine similarity on
//! pairs of unlabeled texts, alongside the usual contrastive pairs built
//! from the labeled examples. The student head then learns from hard labels
//! on the labeled texts and from the teacher head's class probabilities on
//! the unlabeled texts.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusError, Dataset};
use crate::encoder::{cosine, EncoderSpec, FinetuneConfig};
use crate::error::{Result, ResultExt};
use crate::head::{train_head_mixed, HeadTrainConfig};
use crate::pairs::{generate_pairs, PairMode, TrainPair};
use crate::pipeline::{embed_all, train_encoder, FitConfig, Model, TrainSnapshot};
use crate::rng::{rng_from_seed, SeedPlan};

#[derive(Debug, Error, PartialEq)]
pub enum DistillError {
    #[error("need at least 2 unlabeled texts to draw pairs, got {0}")]
    TooFewTexts(usize),
    #[error("alpha must lie in [0, 1], got {0}")]
    InvalidAlpha(f64),
    #[error("teacher labels {teacher:?} differ from dataset labels {dataset:?}")]
    LabelMismatch {
        teacher: Vec<String>,
        dataset: Vec<String>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistillConfig {
    /// Number of unlabeled pairs scored by the teacher (M).
    pub pairs: usize,
    pub student: EncoderSpec,
    pub r_pairs: usize,
    pub pair_mode: PairMode,
    pub finetune: FinetuneConfig,
    pub head: HeadTrainConfig,
    /// Weight of the soft (teacher) term in the head loss.
    pub alpha: f64,
    pub pair_seed: u64,
    pub init_seed: u64,
    pub unlabeled_seed: u64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self::seeded(0)
    }
}

impl DistillConfig {
    pub fn seeded(master: u64) -> Self {
        Self {
            pairs: 0,
            student: EncoderSpec {
                vocab_buckets: 16_384,
                dim: 32,
                ..EncoderSpec::default()
            },
            r_pairs: 20,
            pair_mode: PairMode::Strict,
            finetune: FinetuneConfig::default(),
            head: HeadTrainConfig::default(),
            alpha: 0.5,
            pair_seed: 0,
            init_seed: 0,
            unlabeled_seed: 0,
        }
        .with_seed(master)
    }

    /// Same seed fan-out as [`FitConfig::with_seed`], plus the unlabeled
    /// pair stream.
    pub fn with_seed(mut self, master: u64) -> Self {
        let plan = SeedPlan::derive(master);
        self.pair_seed = plan.pairs;
        self.init_seed = plan.init;
        self.finetune.seed = plan.shuffle;
        self.head.seed = plan.head;
        self.unlabeled_seed = plan.unlabeled;
        self
    }

    /// The plain [`fit`](crate::pipeline::fit) configuration this
    /// distillation reduces to when there is no unlabeled data.
    pub fn aligned_fit_config(&self) -> FitConfig {
        FitConfig {
            r_pairs: self.r_pairs,
            pair_mode: self.pair_mode,
            encoder: self.student,
            finetune: self.finetune,
            head: self.head,
            pair_seed: self.pair_seed,
            init_seed: self.init_seed,
        }
    }
}

/// A text pair with the teacher's cosine similarity as target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityPair {
    pub first: String,
    pub second: String,
    pub target: f64,
}

impl From<SimilarityPair> for TrainPair {
    fn from(p: SimilarityPair) -> Self {
        TrainPair {
            first: p.first,
            second: p.second,
            target: p.target,
        }
    }
}

/// `m` index pairs `(i, j)` over `n_texts` texts, uniform with `i != j`.
pub fn generate_unlabeled_pairs(
    n_texts: usize,
    m: usize,
    seed: u64,
) -> Result<Vec<(usize, usize)>, DistillError> {
    if m == 0 {
        return Ok(Vec::new());
    }
    if n_texts < 2 {
        return Err(DistillError::TooFewTexts(n_texts));
    }
    let mut rng = rng_from_seed(seed);
    Ok((0..m)
        .map(|_| {
            let i = rng.random_range(0..n_texts);
            let k = rng.random_range(0..n_texts - 1);
            (i, if k >= i { k + 1 } else { k })
        })
        .collect())
}

/// Cosine similarity of the teacher's embeddings for each pair, in input
/// order.
pub fn teacher_similarities(
    teacher: &Model,
    pairs: &[(&str, &str)],
) -> Result<Vec<SimilarityPair>> {
    pairs
        .par_iter()
        .enumerate()
        .map(|(k, &(a, b))| {
            let score = || -> Result<f64> {
                let u = teacher.embed(a)?;
                let v = teacher.embed(b)?;
                Ok(cosine(u.as_slice(), v.as_slice())?)
            };
            let target = score().context(|| format!("teacher similarity for pair {k}"))?;
            Ok(SimilarityPair {
                first: a.to_string(),
                second: b.to_string(),
                target,
            })
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct DistillOutcome {
    pub model: Model,
    pub labeled_pairs: usize,
    pub similarity_pairs: Vec<SimilarityPair>,
    pub soft_rows: usize,
}

pub fn distill(
    teacher: &Model,
    labeled: &Dataset,
    unlabeled: &[String],
    config: &DistillConfig,
) -> Result<Model> {
    distill_with_trace(teacher, labeled, unlabeled, config).map(|o| o.model)
}

pub fn distill_with_trace(
    teacher: &Model,
    labeled: &Dataset,
    unlabeled: &[String],
    config: &DistillConfig,
) -> Result<DistillOutcome> {
    if !(0.0..=1.0).contains(&config.alpha) {
        return Err(DistillError::InvalidAlpha(config.alpha).into());
    }
    if labeled.is_empty() {
        return Err(CorpusError::EmptyDataset.into());
    }
    if teacher.label_names() != labeled.label_names() {
        return Err(DistillError::LabelMismatch {
            teacher: teacher.label_names().to_vec(),
            dataset: labeled.label_names().to_vec(),
        }
        .into());
    }

    let contrastive = generate_pairs(labeled, config.r_pairs, config.pair_seed, config.pair_mode)
        .context(|| "distill step 1 (labeled pair generation)".into())?;
    let index_pairs =
        generate_unlabeled_pairs(unlabeled.len(), config.pairs, config.unlabeled_seed)
            .context(|| "distill step 1 (unlabeled pair generation)".into())?;
    let text_pairs: Vec<(&str, &str)> = index_pairs
        .iter()
        .map(|&(i, j)| (unlabeled[i].as_str(), unlabeled[j].as_str()))
        .collect();
    let similarity_pairs = teacher_similarities(teacher, &text_pairs)
        .context(|| "distill step 1 (teacher similarities)".into())?;

    let mut train_pairs = contrastive.pairs;
    train_pairs.extend(similarity_pairs.iter().cloned().map(TrainPair::from));
    let student = train_encoder(
        config.student,
        config.init_seed,
        &train_pairs,
        &config.finetune,
    )
    .context(|| "distill step 1 (student encoder fine-tuning)".into())?;

    let head = {
        let labeled_texts: Vec<&str> = labeled.texts().collect();
        let unlabeled_texts: Vec<&str> = unlabeled.iter().map(String::as_str).collect();
        let step = || -> Result<_> {
            let hard = embed_all(&student, &labeled_texts)?;
            let soft = embed_all(&student, &unlabeled_texts)?;
            let teacher_probs = unlabeled_texts
                .iter()
                .enumerate()
                .map(|(i, t)| {
                    teacher
                        .predict_proba(t)
                        .context(|| format!("teacher probabilities for unlabeled text {i}"))
                })
                .collect::<Result<Vec<_>>>()?;
            let mut head = train_head_mixed(
                (&hard, &labeled.labels()),
                (&soft, &teacher_probs),
                config.alpha,
                labeled.label_names(),
                &config.head,
            )?;
            head.round_to_f32();
            Ok(head)
        };
        step().context(|| "distill step 2 (student head training)".into())?
    };

    Ok(DistillOutcome {
        model: Model::new(student, head, TrainSnapshot::Distill(*config))?,
        labeled_pairs: train_pairs.len() - similarity_pairs.len(),
        soft_rows: unlabeled.len(),
        similarity_pairs,
    })
}
