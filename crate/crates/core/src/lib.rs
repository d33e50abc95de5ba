//! Neural Process toolkit.
//!
//! Learns distributions over functions from collections of sampled datasets
//! and applies them to 1-D regression, grayscale image completion,
//! Thompson-sampling black-box optimisation and the wheel contextual bandit.
//! Everything runs on a small self-contained f64 substrate: dense layers,
//! reverse-mode gradients and Adam, with seeded RNG streams end to end.

pub mod bo;
pub mod checkpoint;
pub mod gp;
pub mod image;
pub mod error;
pub mod model;
pub mod nn;
pub mod rng;
pub mod tape;
pub mod task;
pub mod tensor;
pub mod train;
pub mod wheel;

pub use error::{Error, Result};
pub use tensor::Tensor;
