//! Gait-recognition embedding network built from a four-branch enhanced
//! convolution block (spatial-temporal, frame-level, horizontal-strip and
//! vertical-strip 3-D convolutions summed), with a structural
//! re-parameterization pass that collapses the branches into one 3x3x3
//! convolution for inference. Includes the feature-mapping pipeline
//! (temporal max aggregation, generalized-mean pooling, per-row linear
//! maps), evaluation losses, the batch-all sampler, and the gallery/probe
//! rank-1 retrieval protocol.
//!
//! Inference only: losses are evaluable functions, no gradients anywhere.

pub mod ecm;
pub mod error;
pub mod exec;
pub mod io;
pub mod metric;
pub mod model;
pub mod nn;
pub mod reparam;
pub mod selftest;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Shape, Tensor};
