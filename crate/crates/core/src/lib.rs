//! Adversarially bootstrapped training for multi-turn dialogue models.
//!
//! The crate provides a small f64 autodiff engine, a hierarchical
//! encoder-decoder generator with a shared-encoder discriminator,
//! bootstrapped training objectives, policy sampling, corpus tooling,
//! text generation metrics, and a training loop that drives them.

pub mod corpus;
pub mod entropy;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod gru;
pub mod metrics;
pub mod model;
pub mod objectives;
pub mod params;
pub mod sampling;
pub mod streams;
pub mod tensor;
pub mod trainer;
pub mod vocab;

pub use error::{Error, Result};
pub use graph::{Gradients, Graph, NodeId};
pub use params::{ParamGroup, ParameterSet};
pub use tensor::Tensor;
