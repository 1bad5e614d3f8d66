//! Multinomial logistic-regression classification head.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::SentenceEmbedding;
use crate::optim::{Adam, AdamConstants};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HeadError {
    #[error("training labels contain fewer than two distinct classes")]
    SingleClass,
    #[error("a head needs at least two classes, got {0}")]
    TooFewClasses(usize),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("{embeddings} embeddings but {targets} targets")]
    LengthMismatch { embeddings: usize, targets: usize },
    #[error("no training rows")]
    Empty,
    #[error("label {label} out of range for {n_classes} classes")]
    LabelOutOfRange { label: usize, n_classes: usize },
    #[error("row {row}: target is not a probability distribution ({reason})")]
    InvalidDistribution { row: usize, reason: String },
    #[error("invalid head config: {0}")]
    InvalidConfig(String),
    #[error("invalid head parameters: {0}")]
    InvalidParams(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadTrainConfig {
    pub l2_lambda: f64,
    pub max_iters: usize,
    /// Training stops once the absolute change in loss between consecutive
    /// iterations falls below this.
    pub tol: f64,
    pub learning_rate: f64,
    /// Recorded for reproducibility; full-batch training from zero draws no
    /// random numbers.
    pub seed: u64,
    pub adam: AdamConstants,
}

impl Default for HeadTrainConfig {
    fn default() -> Self {
        Self {
            l2_lambda: 1e-4,
            max_iters: 1000,
            tol: 1e-7,
            learning_rate: 0.1,
            seed: 0,
            adam: AdamConstants::default(),
        }
    }
}

impl HeadTrainConfig {
    pub fn validate(&self) -> Result<(), HeadError> {
        if !(self.l2_lambda >= 0.0 && self.l2_lambda.is_finite()) {
            return Err(HeadError::InvalidConfig(format!(
                "l2_lambda {}",
                self.l2_lambda
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(HeadError::InvalidConfig(format!(
                "learning_rate {}",
                self.learning_rate
            )));
        }
        if self.tol.is_nan() || self.tol < 0.0 {
            return Err(HeadError::InvalidConfig(format!("tol {}", self.tol)));
        }
        Ok(())
    }
}

/// `logits = W v + b` with `W` stored row-major, one row per class.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams {
    pub dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub label_names: Vec<String>,
}

impl HeadParams {
    pub fn zeros(dim: usize, label_names: Vec<String>) -> Self {
        let c = label_names.len();
        Self {
            dim,
            weights: vec![0.0; c * dim],
            bias: vec![0.0; c],
            label_names,
        }
    }

    pub fn n_classes(&self) -> usize {
        self.label_names.len()
    }

    pub fn validate(&self) -> Result<(), HeadError> {
        let c = self.n_classes();
        if c < 2 {
            return Err(HeadError::TooFewClasses(c));
        }
        if self.weights.len() != c * self.dim || self.bias.len() != c {
            return Err(HeadError::InvalidParams(format!(
                "weights {} / bias {} do not match {c} classes x {} dims",
                self.weights.len(),
                self.bias.len(),
                self.dim
            )));
        }
        if self
            .weights
            .iter()
            .chain(&self.bias)
            .any(|x| !x.is_finite())
        {
            return Err(HeadError::InvalidParams("non-finite entry".into()));
        }
        Ok(())
    }

    pub fn round_to_f32(&mut self) {
        for x in self.weights.iter_mut().chain(self.bias.iter_mut()) {
            *x = *x as f32 as f64;
        }
    }

    fn logits_into(&self, x: &[f64], out: &mut [f64]) {
        for (k, z) in out.iter_mut().enumerate() {
            let row = &self.weights[k * self.dim..(k + 1) * self.dim];
            *z = self.bias[k] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub label: usize,
    pub probabilities: Vec<f64>,
}

pub fn head_logits(head: &HeadParams, emb: &SentenceEmbedding) -> Result<Vec<f64>, HeadError> {
    if emb.dim() != head.dim {
        return Err(HeadError::DimensionMismatch {
            expected: head.dim,
            found: emb.dim(),
        });
    }
    let mut z = vec![0.0; head.n_classes()];
    head.logits_into(emb.as_slice(), &mut z);
    Ok(z)
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn head_predict(head: &HeadParams, emb: &SentenceEmbedding) -> Result<Prediction, HeadError> {
    let logits = head_logits(head, emb)?;
    Ok(Prediction {
        label: argmax(&logits),
        probabilities: softmax(&logits),
    })
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + z.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Weighted soft-target cross-entropy plus `(l2/2)|W|^2`:
///
/// `sum_i w_i H(t_i, softmax(W x_i + b)) + (l2/2) sum W^2`
///
/// Gradients are laid out as all of `W` (row-major) followed by `b`.
#[derive(Clone, Debug)]
pub struct HeadObjective<'a> {
    features: Vec<&'a [f64]>,
    targets: Vec<Vec<f64>>,
    row_weights: Vec<f64>,
    n_classes: usize,
    dim: usize,
    l2: f64,
}

fn check_dims(embeddings: &[&SentenceEmbedding]) -> Result<usize, HeadError> {
    let dim = embeddings.first().ok_or(HeadError::Empty)?.dim();
    for e in embeddings {
        if e.dim() != dim {
            return Err(HeadError::DimensionMismatch {
                expected: dim,
                found: e.dim(),
            });
        }
    }
    Ok(dim)
}

fn one_hot(labels: &[usize], n_classes: usize) -> Result<Vec<Vec<f64>>, HeadError> {
    labels
        .iter()
        .map(|&label| {
            if label >= n_classes {
                return Err(HeadError::LabelOutOfRange { label, n_classes });
            }
            let mut t = vec![0.0; n_classes];
            t[label] = 1.0;
            Ok(t)
        })
        .collect()
}

fn check_distributions(targets: &[Vec<f64>], n_classes: usize) -> Result<(), HeadError> {
    for (row, t) in targets.iter().enumerate() {
        let invalid = |reason: String| HeadError::InvalidDistribution { row, reason };
        if t.len() != n_classes {
            return Err(invalid(format!(
                "{} entries for {n_classes} classes",
                t.len()
            )));
        }
        if t.iter().any(|&p| !(p >= 0.0 && p.is_finite())) {
            return Err(invalid("negative or non-finite entry".into()));
        }
        let sum: f64 = t.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(invalid(format!("entries sum to {sum}")));
        }
    }
    Ok(())
}

impl<'a> HeadObjective<'a> {
    /// Rows weighted `1/n`: the mean cross-entropy.
    pub fn mean(
        embeddings: &'a [SentenceEmbedding],
        targets: Vec<Vec<f64>>,
        n_classes: usize,
        l2: f64,
    ) -> Result<Self, HeadError> {
        if embeddings.len() != targets.len() {
            return Err(HeadError::LengthMismatch {
                embeddings: embeddings.len(),
                targets: targets.len(),
            });
        }
        let refs: Vec<&SentenceEmbedding> = embeddings.iter().collect();
        let dim = check_dims(&refs)?;
        let w = 1.0 / embeddings.len() as f64;
        Ok(Self {
            features: embeddings.iter().map(SentenceEmbedding::as_slice).collect(),
            row_weights: vec![w; targets.len()],
            targets,
            n_classes,
            dim,
            l2,
        })
    }

    /// `alpha * mean(soft rows) + (1 - alpha) * mean(hard rows)`. When one
    /// group is empty the other is weighted by its plain mean.
    pub fn mixed(
        hard: (&'a [SentenceEmbedding], Vec<Vec<f64>>),
        soft: (&'a [SentenceEmbedding], Vec<Vec<f64>>),
        alpha: f64,
        n_classes: usize,
        l2: f64,
    ) -> Result<Self, HeadError> {
        let (hard_emb, hard_t) = hard;
        let (soft_emb, soft_t) = soft;
        if soft_emb.is_empty() {
            return Self::mean(hard_emb, hard_t, n_classes, l2);
        }
        if hard_emb.is_empty() {
            return Self::mean(soft_emb, soft_t, n_classes, l2);
        }
        for (e, t) in [(hard_emb, &hard_t), (soft_emb, &soft_t)] {
            if e.len() != t.len() {
                return Err(HeadError::LengthMismatch {
                    embeddings: e.len(),
                    targets: t.len(),
                });
            }
        }
        let refs: Vec<&SentenceEmbedding> = hard_emb.iter().chain(soft_emb).collect();
        let dim = check_dims(&refs)?;
        let wh = (1.0 - alpha) / hard_emb.len() as f64;
        let ws = alpha / soft_emb.len() as f64;
        let row_weights = std::iter::repeat_n(wh, hard_emb.len())
            .chain(std::iter::repeat_n(ws, soft_emb.len()))
            .collect();
        Ok(Self {
            features: refs.into_iter().map(SentenceEmbedding::as_slice).collect(),
            targets: hard_t.into_iter().chain(soft_t).collect(),
            row_weights,
            n_classes,
            dim,
            l2,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn row_terms(&self, params: &HeadParams, mut grad: Option<&mut [f64]>) -> f64 {
        let c = self.n_classes;
        let d = self.dim;
        let mut z = vec![0.0; c];
        let mut loss = 0.0;
        for ((x, t), &w) in self
            .features
            .iter()
            .zip(&self.targets)
            .zip(&self.row_weights)
        {
            params.logits_into(x, &mut z);
            let lse = log_sum_exp(&z);
            let mut row_loss = 0.0;
            for k in 0..c {
                if t[k] != 0.0 {
                    row_loss -= t[k] * (z[k] - lse);
                }
            }
            loss += w * row_loss;
            if let Some(g) = grad.as_deref_mut() {
                let mass: f64 = t.iter().sum();
                for k in 0..c {
                    let dz = w * (mass * (z[k] - lse).exp() - t[k]);
                    for (gw, xv) in g[k * d..(k + 1) * d].iter_mut().zip(x.iter()) {
                        *gw += dz * xv;
                    }
                    g[c * d + k] += dz;
                }
            }
        }
        loss
    }

    pub fn loss(&self, params: &HeadParams) -> f64 {
        let penalty: f64 = params.weights.iter().map(|w| w * w).sum();
        self.row_terms(params, None) + 0.5 * self.l2 * penalty
    }

    pub fn loss_and_grad(&self, params: &HeadParams) -> (f64, Vec<f64>) {
        let c = self.n_classes;
        let d = self.dim;
        let mut grad = vec![0.0; c * d + c];
        let data = self.row_terms(params, Some(&mut grad));
        let mut penalty = 0.0;
        for (g, w) in grad[..c * d].iter_mut().zip(&params.weights) {
            penalty += w * w;
            *g += self.l2 * w;
        }
        (data + 0.5 * self.l2 * penalty, grad)
    }
}

/// A trained head together with the loss seen at each iteration.
#[derive(Clone, Debug)]
pub struct HeadFit {
    pub params: HeadParams,
    pub loss_history: Vec<f64>,
}

/// Full-batch Adam from `W = 0, b = 0`.
pub fn train_objective(
    objective: &HeadObjective<'_>,
    label_names: &[String],
    config: &HeadTrainConfig,
) -> Result<HeadFit, HeadError> {
    config.validate()?;
    if label_names.len() < 2 {
        return Err(HeadError::TooFewClasses(label_names.len()));
    }
    if label_names.len() != objective.n_classes {
        return Err(HeadError::InvalidParams(format!(
            "{} label names for {} classes",
            label_names.len(),
            objective.n_classes
        )));
    }
    let mut params = HeadParams::zeros(objective.dim, label_names.to_vec());
    let n_params = params.weights.len() + params.bias.len();
    let mut adam = Adam::new(n_params, config.learning_rate, config.adam);
    let mut flat = vec![0.0; n_params];
    let split = params.weights.len();
    let mut history = Vec::new();
    for _ in 0..config.max_iters {
        let (loss, grad) = objective.loss_and_grad(&params);
        if let Some(&prev) = history.last() {
            let prev: f64 = prev;
            if (prev - loss).abs() < config.tol {
                history.push(loss);
                break;
            }
        }
        history.push(loss);
        flat[..split].copy_from_slice(&params.weights);
        flat[split..].copy_from_slice(&params.bias);
        adam.step(&mut flat, &grad);
        params.weights.copy_from_slice(&flat[..split]);
        params.bias.copy_from_slice(&flat[split..]);
    }
    Ok(HeadFit {
        params,
        loss_history: history,
    })
}

fn distinct_labels(labels: &[usize]) -> usize {
    let mut seen: Vec<usize> = labels.to_vec();
    seen.sort_unstable();
    seen.dedup();
    seen.len()
}

/// Fits the head on hard labels, minimizing mean cross-entropy + L2.
pub fn train_head(
    embeddings: &[SentenceEmbedding],
    labels: &[usize],
    label_names: &[String],
    config: &HeadTrainConfig,
) -> Result<HeadParams, HeadError> {
    train_head_with_history(embeddings, labels, label_names, config).map(|f| f.params)
}

pub fn train_head_with_history(
    embeddings: &[SentenceEmbedding],
    labels: &[usize],
    label_names: &[String],
    config: &HeadTrainConfig,
) -> Result<HeadFit, HeadError> {
    if embeddings.len() != labels.len() {
        return Err(HeadError::LengthMismatch {
            embeddings: embeddings.len(),
            targets: labels.len(),
        });
    }
    if embeddings.is_empty() {
        return Err(HeadError::Empty);
    }
    if distinct_labels(labels) < 2 {
        return Err(HeadError::SingleClass);
    }
    let targets = one_hot(labels, label_names.len())?;
    let objective = HeadObjective::mean(embeddings, targets, label_names.len(), config.l2_lambda)?;
    train_objective(&objective, label_names, config)
}

/// Fits the head on probability-vector targets.
pub fn train_head_soft(
    embeddings: &[SentenceEmbedding],
    soft_targets: &[Vec<f64>],
    label_names: &[String],
    config: &HeadTrainConfig,
) -> Result<HeadParams, HeadError> {
    check_distributions(soft_targets, label_names.len())?;
    let objective = HeadObjective::mean(
        embeddings,
        soft_targets.to_vec(),
        label_names.len(),
        config.l2_lambda,
    )?;
    train_objective(&objective, label_names, config).map(|f| f.params)
}

/// Hard labels and soft targets in one objective, see [`HeadObjective::mixed`].
pub fn train_head_mixed(
    hard: (&[SentenceEmbedding], &[usize]),
    soft: (&[SentenceEmbedding], &[Vec<f64>]),
    alpha: f64,
    label_names: &[String],
    config: &HeadTrainConfig,
) -> Result<HeadParams, HeadError> {
    let n_classes = label_names.len();
    if hard.0.len() != hard.1.len() {
        return Err(HeadError::LengthMismatch {
            embeddings: hard.0.len(),
            targets: hard.1.len(),
        });
    }
    if soft.0.is_empty() {
        return train_head(hard.0, hard.1, label_names, config);
    }
    check_distributions(soft.1, n_classes)?;
    let hard_targets = one_hot(hard.1, n_classes)?;
    let objective = HeadObjective::mixed(
        (hard.0, hard_targets),
        (soft.0, soft.1.to_vec()),
        alpha,
        n_classes,
        config.l2_lambda,
    )?;
    train_objective(&objective, label_names, config).map(|f| f.params)
}
