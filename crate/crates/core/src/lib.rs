//! Conditional-GAN laboratory for the SONA discriminator.
//!
//! The discriminator sums a naturalness score `<omega, h(x)> + b` and an
//! alignment score `<omega_y, h(x) - <omega, h(x)> omega>`. It is trained
//! with a slicing-adversarial objective plus two Bradley-Terry objectives
//! whose log-sigmoid terms are balanced by learnable weights on the unit
//! sphere. The crate reproduces the 2D mixture-of-Gaussians study with
//! exact empirical Wasserstein-2 metrics.
//!
//! Every numeric module is generic over [`Scalar`] (`f32` or `f64`); the
//! `*64` aliases below fix the precision used by the experiments.

// `!(x > 0.0)` guards are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod error;
pub mod experiment;
pub mod grad;
pub mod mog;
pub mod nets;
pub mod objectives;
pub mod ot;
pub mod scalar;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Precision of every experiment run.
pub type Real = f64;

pub type Matrix64 = grad::Matrix<Real>;
pub type Graph64<'s> = grad::Graph<'s, Real>;
pub type ParamStore64 = grad::ParamStore<Real>;
pub type Adam64 = grad::Adam<Real>;
pub type Model64 = trainer::Model<Real>;
pub type Trainer64 = trainer::Trainer<Real>;
pub type Checkpoint64 = checkpoint::Checkpoint<Real>;
