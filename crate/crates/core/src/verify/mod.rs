//! Independent oracles: finite-difference gradients, brute-force
//! assignment and exact discrete maximizers of the contrastive objectives.

mod brute;
mod discrete;
mod gradcheck;
mod suite;

pub use brute::brute_force_assignment;
pub use discrete::{cross_entropy_maximizer, log_gap_maximizer_error, log_posterior_maximizer_error, AscentConfig, DiscreteJoint};
pub use gradcheck::{finite_diff_grad, param_gradient_error, relative_error};
pub use suite::*;
