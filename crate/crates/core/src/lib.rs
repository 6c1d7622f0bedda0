//! Diagnostic properties for post-hoc saliency explanations of neural text
//! classifiers.
//!
//! The crate bundles a small reverse-mode autodiff engine, three compact
//! classifier architectures (CNN, BiLSTM, transformer encoder), nine saliency
//! explainers plus a random baseline, and the five diagnostic properties
//! computed over them: agreement with human rationales, confidence
//! indication, faithfulness, rationale consistency and dataset consistency.

pub mod data;
pub mod diagnostics;
pub mod engine;
pub mod explainers;
pub mod error;
pub mod models;
pub mod scalar;
pub mod stats;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Tensor instantiated with the crate's working precision.
pub type Tensor64 = engine::Tensor<f64>;
/// Graph instantiated with the crate's working precision.
pub type Graph64 = engine::Graph<f64>;
pub type Tensor32 = engine::Tensor<f32>;
pub type Graph32 = engine::Graph<f32>;
