//! Seeded synthetic text-classification corpora.
//!
//! Each class owns a private vocabulary (`c{class}w{k}`) and all classes
//! share a pool of noise tokens (`s{k}`). Every token of a text is drawn from
//! the shared pool with probability `shared_fraction`, otherwise from a class
//! vocabulary: the text's own class, or with probability
//! `cross_class_rate` some other class. Within a vocabulary, token `k` is
//! drawn with Zipf weight `1 / (k + 1)^zipf_exponent`.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, LabeledExample};
use crate::error::{Error, Result};
use crate::rng::{rng_from_seed, Prng};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_classes: usize,
    pub class_vocab: usize,
    pub shared_vocab: usize,
    pub shared_fraction: f64,
    pub cross_class_rate: f64,
    pub min_tokens: usize,
    pub max_tokens: usize,
    pub zipf_exponent: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_classes: 2,
            class_vocab: 300,
            shared_vocab: 100,
            shared_fraction: 0.2,
            cross_class_rate: 0.0,
            min_tokens: 6,
            max_tokens: 14,
            zipf_exponent: 1.0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synthetic corpus: {m}")));
        if self.n_classes < 2 {
            return bad("need at least 2 classes");
        }
        if self.class_vocab == 0 || self.shared_vocab == 0 {
            return bad("vocabularies must be nonempty");
        }
        if !(0.0..=1.0).contains(&self.shared_fraction)
            || !(0.0..=1.0).contains(&self.cross_class_rate)
        {
            return bad("rates must lie in [0, 1]");
        }
        if self.min_tokens == 0 || self.min_tokens > self.max_tokens {
            return bad("need 1 <= min_tokens <= max_tokens");
        }
        if !(self.zipf_exponent >= 0.0 && self.zipf_exponent.is_finite()) {
            return bad("zipf_exponent must be finite and nonnegative");
        }
        Ok(())
    }

    pub fn label_names(&self) -> Vec<String> {
        (0..self.n_classes).map(|c| format!("class{c}")).collect()
    }
}

struct Sampler {
    config: SyntheticConfig,
    class_dist: WeightedIndex<f64>,
    shared_dist: WeightedIndex<f64>,
}

fn zipf(n: usize, exponent: f64) -> WeightedIndex<f64> {
    WeightedIndex::new((0..n).map(|k| 1.0 / ((k + 1) as f64).powf(exponent)))
        .expect("positive weights")
}

impl Sampler {
    fn new(config: SyntheticConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            class_dist: zipf(config.class_vocab, config.zipf_exponent),
            shared_dist: zipf(config.shared_vocab, config.zipf_exponent),
        })
    }

    fn text(&self, class: usize, rng: &mut Prng) -> String {
        let c = &self.config;
        let len = rng.random_range(c.min_tokens..=c.max_tokens);
        let mut words = Vec::with_capacity(len);
        for _ in 0..len {
            if rng.random::<f64>() < c.shared_fraction {
                words.push(format!("s{}", self.shared_dist.sample(rng)));
            } else {
                let source = if rng.random::<f64>() < c.cross_class_rate {
                    let k = rng.random_range(0..c.n_classes - 1);
                    if k >= class {
                        k + 1
                    } else {
                        k
                    }
                } else {
                    class
                };
                words.push(format!("c{source}w{}", self.class_dist.sample(rng)));
            }
        }
        words.join(" ")
    }
}

/// `n_per_class` texts per class, classes in label order.
pub fn generate(config: &SyntheticConfig, n_per_class: usize, seed: u64) -> Result<Dataset> {
    let sampler = Sampler::new(*config)?;
    let mut rng = rng_from_seed(seed);
    let mut examples = Vec::with_capacity(n_per_class * config.n_classes);
    for class in 0..config.n_classes {
        for _ in 0..n_per_class {
            examples.push(LabeledExample::new(sampler.text(class, &mut rng), class));
        }
    }
    Ok(Dataset::new(examples, config.label_names())?)
}

/// Unlabeled texts with classes drawn uniformly at random.
pub fn generate_unlabeled(config: &SyntheticConfig, n: usize, seed: u64) -> Result<Vec<String>> {
    let sampler = Sampler::new(*config)?;
    let mut rng = rng_from_seed(seed);
    Ok((0..n)
        .map(|_| {
            let class = rng.random_range(0..config.n_classes);
            sampler.text(class, &mut rng)
        })
        .collect())
}
