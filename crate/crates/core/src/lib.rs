//! Early detection of risk indications in chronological text streams.
//!
//! The crate covers the whole pipeline: corpus ingestion and chunking,
//! tokenization, user-level linguistic metadata, a small text CNN over word
//! embeddings, logistic regression with late fusion, a chunk-by-chunk
//! decision simulator, and the ERDE family of early-detection metrics.

pub mod classifiers;
pub mod corpus;
pub mod embeddings;
pub mod error;
pub mod metadata;
pub mod metrics;
pub mod neuralnet;
pub mod simulator;
pub mod textproc;

pub use error::{Error, Result};
