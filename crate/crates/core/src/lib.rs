//! Copula-enhanced multi-task CNN training.
//!
//! The crate bundles a small reverse-mode neural-network engine ([`nn`]),
//! Gaussian-copula mathematics ([`copula`], [`special`]), the training
//! objectives ([`losses`]), synthetic block-image benchmarks ([`synth`]), the
//! three-stage training pipeline with cross-validation ([`pipeline`]),
//! evaluation metrics ([`metrics`]) and a least-squares efficiency oracle
//! ([`gls`]).
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases below
//! fix the element type to `f64`, which is what the pipeline uses.

pub mod copula;
pub mod error;
pub mod gls;
pub mod linalg;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod scalar;
pub mod special;
pub mod synth;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor = nn::Tensor<f64>;
pub type Tensor32 = nn::Tensor<f32>;
pub type Backbone = nn::Backbone<f64>;
pub type Backbone32 = nn::Backbone<f32>;
pub type Tape = nn::Tape<f64>;
pub type Adam = nn::Adam<f64>;
pub type Matrix = linalg::Matrix<f64>;
