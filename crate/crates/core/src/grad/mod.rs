//! Reverse-mode automatic differentiation over dense real matrices.
//!
//! A [`Graph`] records every operation of one forward pass; parameters
//! live in a [`ParamStore`] that outlives the graph. After
//! [`Graph::backward`] the returned [`ParamGrads`] feed an [`Adam`] step.

mod adam;
mod graph;
mod matrix;
mod param;

pub use adam::{Adam, AdamConfig, AdamState};
pub use graph::{inject_log_sigmoid_grad_flip, Graph, Var};
pub use matrix::Matrix;
pub use param::{GroupSet, Param, ParamGrads, ParamGroup, ParamId, ParamStore};

/// Negative-side slope of every leaky ReLU in the discriminator.
pub const LEAKY_RELU_SLOPE: f64 = 0.2;
