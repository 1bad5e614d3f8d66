//! Contrastive pair generation.
//!
//! For each class `c`, in label order, [`generate_pairs`] emits `R`
//! positive pairs (both members from `c`, target 1) followed by `R` negative
//! pairs (first member from `c`, second from any other class, target 0), so
//! a strict-mode run over `|C|` classes yields exactly `2 R |C|` pairs.
//! Draws are with replacement; the trainer shuffles separately.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Dataset;
use crate::rng::rng_from_seed;

#[derive(Debug, Error, PartialEq)]
pub enum PairError {
    #[error(
        "class {class:?} has {size} example(s); positive pairs need at least 2 distinct examples"
    )]
    DegenerateClass { class: String, size: usize },
    #[error("negative pairs need at least two classes with examples")]
    NeedTwoClasses,
    #[error("pair target {0} outside [-1, 1]")]
    TargetOutOfRange(f64),
}

/// A sentence pair with the cosine similarity the encoder should produce.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainPair {
    pub first: String,
    pub second: String,
    pub target: f64,
}

impl TrainPair {
    pub fn new(
        first: impl Into<String>,
        second: impl Into<String>,
        target: f64,
    ) -> Result<Self, PairError> {
        if !(-1.0..=1.0).contains(&target) {
            return Err(PairError::TargetOutOfRange(target));
        }
        Ok(Self {
            first: first.into(),
            second: second.into(),
            target,
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairMode {
    /// Every class needs two examples; self-pairs never occur.
    #[default]
    Strict,
    /// A singleton class pairs its only example with itself.
    Permissive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairSet {
    pub pairs: Vec<TrainPair>,
    /// Source example indices of `(first, second)` for each pair.
    pub example_indices: Vec<(usize, usize)>,
    pub r: usize,
    pub class_count: usize,
}

impl PairSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// One `{"first":…,"second":…,"target":…}` object per line.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for pair in &self.pairs {
            writeln!(out, "{}", serde_json::to_string(pair)?)?;
        }
        Ok(())
    }
}

pub fn generate_pairs(
    train: &Dataset,
    r: usize,
    seed: u64,
    mode: PairMode,
) -> Result<PairSet, PairError> {
    let groups = train.indices_by_class();
    let class_count = groups.len();
    if r == 0 {
        return Ok(PairSet {
            pairs: Vec::new(),
            example_indices: Vec::new(),
            r,
            class_count,
        });
    }
    if groups.iter().filter(|g| !g.is_empty()).count() < 2 {
        return Err(PairError::NeedTwoClasses);
    }
    for (class, group) in groups.iter().enumerate() {
        let too_small = match mode {
            PairMode::Strict => group.len() < 2,
            PairMode::Permissive => group.is_empty(),
        };
        if too_small {
            return Err(PairError::DegenerateClass {
                class: train.label_names()[class].clone(),
                size: group.len(),
            });
        }
    }

    let mut rng = rng_from_seed(seed);
    let examples = train.examples();
    let mut pairs = Vec::with_capacity(2 * r * class_count);
    let mut example_indices = Vec::with_capacity(2 * r * class_count);
    let mut push = |i: usize, j: usize, target: f64| {
        pairs.push(TrainPair {
            first: examples[i].text.clone(),
            second: examples[j].text.clone(),
            target,
        });
        example_indices.push((i, j));
    };

    for (class, members) in groups.iter().enumerate() {
        for _ in 0..r {
            let a = rng.random_range(0..members.len());
            let b = if members.len() == 1 {
                a
            } else {
                let k = rng.random_range(0..members.len() - 1);
                if k >= a {
                    k + 1
                } else {
                    k
                }
            };
            push(members[a], members[b], 1.0);
        }
        let others: Vec<usize> = groups
            .iter()
            .enumerate()
            .filter(|&(c, _)| c != class)
            .flat_map(|(_, g)| g.iter().copied())
            .collect();
        for _ in 0..r {
            let a = members[rng.random_range(0..members.len())];
            let b = others[rng.random_range(0..others.len())];
            push(a, b, 0.0);
        }
    }

    Ok(PairSet {
        pairs,
        example_indices,
        r,
        class_count,
    })
}

/// Number of unordered pairs of distinct items among `k`: `k(k-1)/2`.
pub fn max_unique_pairs(k: u64) -> u64 {
    if k < 2 {
        0
    } else if k.is_multiple_of(2) {
        (k / 2) * (k - 1)
    } else {
        k * ((k - 1) / 2)
    }
}
