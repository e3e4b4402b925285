//! Learned point-cloud simplification: a contribution-scoring sampler
//! trained through a differentiable Top-k, the classical baselines it is
//! compared against, and the metrics used to compare them.

pub mod checkpoint;
pub mod csnet;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod pointcloud;
pub mod sampling;
pub mod tensor;
pub mod topk;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
