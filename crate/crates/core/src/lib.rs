//! Continual learning by layer-wise weight-space ensembling.
//!
//! After each task the freshly trained model is blended with the model carried
//! over from earlier tasks, one coefficient per layer. The coefficients come
//! from a small generator network that reads per-layer gradient statistics and
//! is itself trained on a replay memory so that the blend forgets as little as
//! possible.
//!
//! The crate is organised bottom-up:
//!
//! - [`net`]: a deterministic multi-layer perceptron with exact gradients.
//! - [`ensemble`]: layer-wise interpolation of two parameter sets.
//! - [`coeffgen`]: gradient features and the coefficient generator.
//! - [`metaloop`]: outer loss, its exact gradient, the meta-update and the per-task driver.
//! - [`streams`]: task streams (synthetic, IDX, CSV) and the replay memory.
//! - [`metrics`]: the accuracy matrix, ACC, BWT and historical-highest accuracy.
//! - [`cli`]: run configuration, experiment sweeps, result files and checkpoints.

pub mod cli;
pub mod coeffgen;
pub mod ensemble;
pub mod error;
pub mod metaloop;
pub mod metrics;
pub mod net;
pub mod seed;
pub mod streams;
pub mod tensor;

pub use error::{Error, Result};
