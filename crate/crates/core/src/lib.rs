//! Unsupervised person re-identification from tracklets: metric learning
//! under camera and timing constraints, cross-camera tracklet association
//! and iterative refinement.
//!
//! The crate is organised bottom-up:
//!
//! - [`data`]: tracklets, datasets, camera topology and their file formats.
//! - [`simulator`]: synthetic camera networks with ground truth.
//! - [`embedding`]: trainable embedding, batch-hard triplet loss, Adam.
//! - [`sampling`]: single-camera and camera-pair constrained batch samplers.
//! - [`association`]: spatio-temporal joint distance, reciprocal nearest
//!   neighbours and 1-D k-means match refinement.
//! - [`evaluation`]: CMC / mAP retrieval metrics and association precision/recall.
//! - [`pipeline`]: within-camera training followed by alternating
//!   association and cross-camera training.
//!
//! Data-parallel loops (feature pooling, distance matrices, per-query AP,
//! per-camera-pair association) run on rayon when the `parallel` feature is
//! enabled (the default) and fall back to plain iterators otherwise. Results
//! are identical either way.

pub mod association;
pub mod data;
pub mod embedding;
pub mod error;
pub mod evaluation;
pub mod par;
pub mod pipeline;
pub mod rng;
pub mod sampling;
pub mod simulator;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
