//! Continual learning with dynamically pruned, freeze-masked networks.

pub mod baselines;
pub mod data;
pub mod error;
pub mod exec;
pub mod experiment;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod plot;
pub mod pruning;
pub mod rng;
pub mod tensor;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
