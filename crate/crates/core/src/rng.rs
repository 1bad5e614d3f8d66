//! Seeded random streams.
//!
//! Every random decision in the crate draws from a [`Prng`] built with
//! [`rng_from_seed`]. The generator is PCG-XSL-RR 128/64 (`Lcg128Xsl64`
//! from `rand_pcg`), recorded by [`PRNG_NAME`] in every experiment report.

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

pub type Prng = rand_pcg::Pcg64;

pub const PRNG_NAME: &str = "pcg64 (Lcg128Xsl64, rand_pcg 0.9, seed_from_u64)";

/// 64-bit golden-ratio constant used to separate per-split seed streams.
pub const SPLIT_SEED_STRIDE: u64 = 0x9E37_79B9_7F4A_7C15;

const PAIR_STREAM: u64 = 0x5041_4952_5f53_4545; // "PAIR_SEE"
const INIT_STREAM: u64 = 0x494e_4954_5f53_4545; // "INIT_SEE"
const SHUFFLE_STREAM: u64 = 0x5348_5546_5f53_4545; // "SHUF_SEE"
const HEAD_STREAM: u64 = 0x4845_4144_5f53_4545; // "HEAD_SEE"
const UNLABELED_STREAM: u64 = 0x554e_4c42_5f53_4545; // "UNLB_SEE"

pub fn rng_from_seed(seed: u64) -> Prng {
    Prng::seed_from_u64(seed)
}

/// Seed for split `index` of a multi-split run: `base ^ (index * 0x9E3779B97F4A7C15)`.
pub fn split_seed(base: u64, index: usize) -> u64 {
    base ^ (index as u64).wrapping_mul(SPLIT_SEED_STRIDE)
}

/// Independent seeds for each random stage of training, fanned out from a
/// single master seed by XOR with fixed per-stage constants.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedPlan {
    pub pairs: u64,
    pub init: u64,
    pub shuffle: u64,
    pub head: u64,
    pub unlabeled: u64,
}

impl SeedPlan {
    pub fn derive(master: u64) -> Self {
        Self {
            pairs: master ^ PAIR_STREAM,
            init: master ^ INIT_STREAM,
            shuffle: master ^ SHUFFLE_STREAM,
            head: master ^ HEAD_STREAM,
            unlabeled: master ^ UNLABELED_STREAM,
        }
    }
}
