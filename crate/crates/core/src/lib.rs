//! Knowledge-grounded dialogue generation.
//!
//! The pieces, bottom-up:
//! - [`text`]: tokenization, vocabulary, the scenario corpus schema, format
//!   unification, automatic entity annotation and a synthetic corpus generator.
//! - [`kg`]: an in-memory triple store with neighborhood recall.
//! - [`keywords`]: rule, TF-IDF, TextRank and CRF keyword extraction plus
//!   entity resolution against the store.
//! - [`model`]: the unified transformer with a discrete latent act, a
//!   pointer-generator output layer, bag-of-words and topic-switch heads.
//! - [`trainer`]: example construction, the multi-task loop, checkpoints.
//! - [`metrics`]: BLEU, Distinct and knowledge overlap scoring.

mod error;
pub mod keywords;
pub mod kg;
pub mod metrics;
pub mod model;
pub mod text;
pub mod trainer;

pub use error::{Error, Result};
