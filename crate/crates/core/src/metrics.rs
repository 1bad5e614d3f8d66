//! Evaluation metrics: accuracy, Matthews correlation, MAE x 100 and
//! average precision.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("length mismatch: {0} predictions vs {1} gold labels")]
    LengthMismatch(usize, usize),
    #[error("no examples")]
    Empty,
    #[error("label {0} is not binary (expected 0 or 1)")]
    NonBinary(usize),
    #[error("average precision needs at least one positive example")]
    NoPositives,
    #[error("score {0} is not finite")]
    NonFiniteScore(f64),
    #[error("unknown metric {0:?}")]
    UnknownMetric(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Accuracy,
    Mcc,
    MaeX100,
    AveragePrecision,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::Mcc => "mcc",
            Metric::MaeX100 => "mae_x100",
            Metric::AveragePrecision => "average_precision",
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Metric {
    type Err = MetricError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "accuracy" | "acc" => Ok(Metric::Accuracy),
            "mcc" => Ok(Metric::Mcc),
            "mae_x100" | "mae" => Ok(Metric::MaeX100),
            "average_precision" | "ap" => Ok(Metric::AveragePrecision),
            _ => Err(MetricError::UnknownMetric(s.to_string())),
        }
    }
}

fn check_lengths(pred: usize, gold: usize) -> Result<(), MetricError> {
    if pred != gold {
        return Err(MetricError::LengthMismatch(pred, gold));
    }
    if pred == 0 {
        return Err(MetricError::Empty);
    }
    Ok(())
}

pub fn accuracy(pred: &[usize], gold: &[usize]) -> Result<f64, MetricError> {
    check_lengths(pred.len(), gold.len())?;
    let correct = pred.iter().zip(gold).filter(|(p, g)| p == g).count();
    Ok(correct as f64 / pred.len() as f64)
}

/// Binary confusion counts with class 1 as the positive class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl Confusion {
    pub fn from_labels(pred: &[usize], gold: &[usize]) -> Result<Self, MetricError> {
        check_lengths(pred.len(), gold.len())?;
        let mut c = Confusion::default();
        for (&p, &g) in pred.iter().zip(gold) {
            match (p, g) {
                (1, 1) => c.tp += 1,
                (0, 0) => c.tn += 1,
                (1, 0) => c.fp += 1,
                (0, 1) => c.fn_ += 1,
                _ => return Err(MetricError::NonBinary(if p > 1 { p } else { g })),
            }
        }
        Ok(c)
    }

    /// Zero whenever a marginal in the denominator is zero.
    pub fn mcc(&self) -> f64 {
        let (tp, tn, fp, fn_) = (
            self.tp as f64,
            self.tn as f64,
            self.fp as f64,
            self.fn_ as f64,
        );
        let factors = [tp + fp, tp + fn_, tn + fp, tn + fn_];
        if factors.contains(&0.0) {
            return 0.0;
        }
        let denom = factors.iter().product::<f64>().sqrt();
        (tp * tn - fp * fn_) / denom
    }
}

pub fn mcc(pred: &[usize], gold: &[usize]) -> Result<f64, MetricError> {
    Ok(Confusion::from_labels(pred, gold)?.mcc())
}

/// `100 * mean |pred - gold|` over ordinal labels.
pub fn mae_x100(pred: &[usize], gold: &[usize]) -> Result<f64, MetricError> {
    check_lengths(pred.len(), gold.len())?;
    let total: u64 = pred
        .iter()
        .zip(gold)
        .map(|(&p, &g)| p.abs_diff(g) as u64)
        .sum();
    Ok(100.0 * total as f64 / pred.len() as f64)
}

/// Step-wise average precision: `sum_k (R_k - R_{k-1}) P_k` over the
/// distinct score thresholds in descending order. Examples sharing a score
/// enter at the same threshold.
pub fn average_precision(scores: &[f64], gold: &[bool]) -> Result<f64, MetricError> {
    check_lengths(scores.len(), gold.len())?;
    if let Some(&s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(MetricError::NonFiniteScore(s));
    }
    let total_pos = gold.iter().filter(|&&g| g).count();
    if total_pos == 0 {
        return Err(MetricError::NoPositives);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut ap = 0.0;
    let mut tp = 0usize;
    let mut seen = 0usize;
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        let tp_before = tp;
        while i < order.len() && scores[order[i]] == threshold {
            seen += 1;
            if gold[order[i]] {
                tp += 1;
            }
            i += 1;
        }
        if tp > tp_before {
            let recall_step = (tp - tp_before) as f64 / total_pos as f64;
            ap += recall_step * (tp as f64 / seen as f64);
        }
    }
    Ok(ap)
}
