//! Multi-label fine-grained entity typing with a label-relational decoder.
//!
//! The decoder replaces independent per-type classifiers with type vectors
//! that are averaged over a type co-occurrence graph (optionally augmented
//! with type-name word similarities) before scoring. An attention-based
//! mention/context matching module produces the feature being scored.
//!
//! All numeric code is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the precision used for training and verification.

pub mod classifier;
pub mod data;
pub mod diff;
pub mod encoders;
pub mod error;
pub mod labelgraph;
pub mod matching;
pub mod metrics;
pub mod model;
pub mod scalar;
pub mod synthetic;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor64 = diff::Tensor<f64>;
pub type Tape64<'p> = diff::Tape<'p, f64>;
pub type ParamStore64 = diff::ParamStore<f64>;
pub type EntityTyper64 = model::EntityTyper<f64>;
