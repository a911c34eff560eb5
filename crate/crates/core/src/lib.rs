//! Desk-scale laboratory for parameter-efficient fine-tuning on gridded
//! weather-like fields.
//!
//! The crate provides a small f64 tensor/autodiff substrate, a toy vision
//! transformer over `[V, H, W]` fields, dynamic prompt generation read off the
//! patch embedding, Fisher-guided selective fine-tuning, the usual PEFT
//! baselines, synthetic data generators, forecast-verification metrics, and a
//! deterministic experiment runner.
//!
//! Core math is generic over the scalar type (see [`scalar::Scalar`]); the
//! aliases below fix `f64`, which everything above the tensor layer uses.

pub mod autodiff;
pub mod backbone;
pub mod check;
pub mod checkpoint;
pub mod error;
pub mod graph;
pub mod metrics;
pub mod optim;
pub mod params;
pub mod peft;
pub mod rng;
pub mod scalar;
pub mod sfas;
pub mod tadp;
pub mod tasks;
pub mod tensor;

pub use error::{Error, Result};

/// Dense row-major `f64` tensor.
pub type Tensor = tensor::TensorBase<f64>;
/// Reverse-mode tape over `f64` tensors.
pub type GradientSession = autodiff::GradientSession<f64>;
/// Gradient map of one backward pass.
pub type Gradients = autodiff::Gradients<f64>;
/// Named `f64` parameter store.
pub type ParamStore = params::ParamStore<f64>;
/// Store-to-session binding helper.
pub type ModelGraph<'s, 'p> = graph::ModelGraph<'s, 'p, f64>;
/// Masked AdamW over a flat `f64` vector.
pub type AdamW = optim::AdamW<f64>;
