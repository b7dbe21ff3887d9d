//! Few-shot multi-label tagging with linear probes over precomputed audio
//! embeddings.
//!
//! The pipeline: frame embeddings are standardized with training-split
//! statistics, aggregated to mean ⊕ std per clip, optionally concatenated
//! across extractors, and fed to a one-vs-rest logistic probe trained either
//! on the whole training split or on a nested N-way-K-shot support set.
//! Probes are scored with mAP and mean ROC AUC over the entire test split.

pub mod analysis;
pub mod data;
pub mod error;
pub mod metrics;
pub mod probe;
pub mod runner;
pub mod sampler;

pub use error::{Error, Result};
