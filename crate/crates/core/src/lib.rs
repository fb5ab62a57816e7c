//! Contextual retrieval over hierarchical feature catalogs.
//!
//! This crate trains a small Siamese transformer bi-encoder that maps
//! feature descriptions and user queries into a shared embedding space,
//! builds an exact cosine-similarity index over catalog entries, and
//! evaluates retrieval quality against lexical baselines.

pub mod baselines;
pub mod catalog;
pub mod encoder;
pub mod error;
pub mod evalkit;
pub mod fixtures;
pub mod fingerprint;
pub mod index;
pub mod math;
pub mod tape;
pub mod tokenizer;
pub mod trainers;

pub use error::{Error, Result};
