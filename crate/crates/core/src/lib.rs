//! Cross-regional credit-card fraud detection on heterogeneous trade graphs.
//!
//! The pipeline turns transaction records into a typed graph of
//! transactions, card holders, merchants and hourly time slices, learns
//! transaction embeddings with node-level and semantic-level attention over
//! meta-paths, and trains across a sequence of regions while replaying
//! prototype samples and penalising drift of important parameters.
//!
//! Module map:
//! - [`data`]: records, CSV ingestion, region partitioning, splits, synthetic data.
//! - [`htg`]: graph construction, meta-path neighbourhoods, replay merging.
//! - [`model`]: parameters, forward pass and exact gradients.
//! - [`continual`]: replay buffers, prototypes, Fisher importance, smoothing loss.
//! - [`trainer`]: Adam, per-region training, the sequential protocol, metrics.
//! - [`cli`]: configuration files, run manifests and the command implementations.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod continual;
pub mod data;
mod error;
pub mod htg;
pub mod linalg;
pub mod model;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
