//! Bottleneck conditional density estimation.
//!
//! A pair of sibling generative models — a joint model over `(x, y)` and a
//! conditional model for `y | x`, both with a low-dimensional stochastic
//! bottleneck `z` — trained with a hybrid objective that softly ties their
//! parameters. The crate provides the tensor/autodiff substrate, the
//! Gaussian/Bernoulli machinery (including natural-parameter merging for
//! factored inference), model construction, the variational objectives,
//! the Adam training loop with early stopping, and the quadrant-task data
//! pipeline.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod diag;
pub mod dist;
pub mod error;
pub mod model;
pub mod objectives;
pub mod rng;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::{Parameter, Tensor};
