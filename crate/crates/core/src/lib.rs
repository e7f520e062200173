//! Counterfactual hard negative generation for graph contrastive learning.
//!
//! The pipeline has two training stages followed by a linear evaluation:
//!
//! 1. [`generator`] learns, per graph, a proximity-perturbation matrix and a
//!    feature mask that keep the graph close to the original while pushing a
//!    classifier's prediction away from it. The thresholded results are two
//!    hard negatives per graph.
//! 2. [`contrastive`] trains a query encoder and a key encoder with InfoNCE
//!    over a per-graph dictionary {original, proximity negative, feature
//!    negative}.
//! 3. [`eval`] scores frozen query embeddings with cross-validated linear SVMs.
//!
//! [`experiment`] wires the stages together and writes run artifacts.

pub mod autodiff;
pub mod batch;
pub mod config;
pub mod contrastive;
pub mod dataset;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod generator;
pub mod norms;
pub mod seed;
pub mod synthetic;

pub use error::{CgcError, Result};
