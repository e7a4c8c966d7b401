//! Deterministic desk-scale engine for multiview self-supervised embedding
//! dynamics: a trainable siamese MLP system with centroid / singular value /
//! Brownian regularizers, and a network-free particle simulator driven by
//! the same loss gradients.

pub mod augment;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod dynamics;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod graph;
pub mod linalg;
pub mod losses;
pub mod model;
pub mod nn;
pub mod optim;
pub mod output;
pub mod rng;
pub mod train;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
