//! Hashtag-driven in-context learning for short social-media posts.
//!
//! The pipeline ingests posts ([`corpus`]), pre-trains a sentence encoder
//! contrastively on hashtag-sharing pairs ([`pretrain`]), stores capped
//! per-hashtag samples as unit embeddings for exact top-k search
//! ([`database`]), and fine-tunes classifiers on inputs enriched with
//! retrieved posts and trainable trigger terms ([`finetune`]). [`analysis`]
//! aggregates seeds and writes reports; [`cli`] drives every stage with
//! replayable run manifests.

pub mod analysis;
pub mod cli;
pub mod corpus;
pub mod database;
pub mod encoder;
pub mod error;
pub mod finetune;
pub mod gradcheck;
pub mod nn;
pub mod pretrain;
pub mod rng;
pub mod synthetic;
pub mod tensors;

mod binio;

pub use error::{Error, Result};
