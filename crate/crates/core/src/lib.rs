//! Few-shot text classification by contrastive fine-tuning of a sentence
//! encoder followed by a logistic-regression classification head.
//!
//! The training procedure has two steps:
//!
//! 1. Build a set of positive (same-class) and negative (cross-class)
//!    sentence pairs from a handful of labeled examples and fine-tune the
//!    encoder so that the cosine similarity of each pair matches its target
//!    ([`pairs`], [`encoder`]).
//! 2. Embed the labeled examples with the fine-tuned encoder and fit a
//!    softmax regression head on those embeddings ([`head`]).
//!
//! Prediction is `head(encoder(text))` ([`pipeline`]). On top of that the
//! crate provides teacher/student distillation ([`distill`]), a FLOPs cost
//! model ([`cost`]), evaluation metrics ([`metrics`]) and a multi-split
//! experiment harness ([`harness`]) driven by the `setfit` CLI.
//!
//! The encoder is a hashed bag-of-embeddings with mean pooling. It is small
//! enough to train with hand-derived gradients on a laptop and sits behind
//! the [`encoder::SentenceEncoder`] trait.

pub mod corpus;
pub mod cost;
pub mod distill;
pub mod encoder;
pub mod error;
pub mod harness;
pub mod head;
pub mod metrics;
pub mod optim;
pub mod pairs;
pub mod pipeline;
pub mod rng;
pub mod synthetic;

pub use error::{Error, Result};
