//! Federated learning simulation with decentralized knowledge distillation.
//!
//! The crate is organized bottom-up:
//!
//! * [`numerics`]: tensors, softmax, divergences, distillation losses, optimizers.
//! * [`model`]: dense/ReLU/batch-norm networks with exact gradients.
//! * [`data`]: synthetic data, heterogeneous partitioning, CSV ingestion.
//! * [`fed`]: local trainers, client sampling and the distillation engine.
//! * [`harness`]: experiment configuration, accounting, evaluation and the CLI.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the default `f64` instantiation.

pub mod data;
pub mod error;
pub mod fed;
pub mod harness;
pub mod model;
pub mod numerics;
mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor64 = numerics::Tensor<f64>;
pub type Tensor32 = numerics::Tensor<f32>;
pub type ParamSet64 = model::ParamSet<f64>;
pub type ParamSet32 = model::ParamSet<f32>;
pub type Distribution64 = numerics::Distribution<f64>;
pub type Dataset64 = data::Dataset<f64>;
pub type Dataset32 = data::Dataset<f32>;
