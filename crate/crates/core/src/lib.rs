//! Policy prediction networks: a policy-gradient learner that trains an
//! implicit latent transition model by unrolling it along recorded action
//! trajectories, while acting model-free.
//!
//! Module map:
//! - [`diffcore`]: reverse-mode differentiation over dense matrices
//! - [`model`]: network heads, transition, unroll, exploration schedule
//! - [`envs`]: built-in continuous-control tasks
//! - [`rollout`]: trajectory collection, GAE, returns, old-parameter caches
//! - [`objective`]: clipped policy/value/reward losses
//! - [`trainer`]: the iteration loop, Adam, metrics and checkpoints
//! - [`exec`]: model-free, MPC, trajectory and repeat action selection

pub mod checkpoint;
pub mod config;
pub mod diffcore;
pub mod envs;
pub mod error;
pub mod exec;
pub mod metrics;
pub mod model;
pub mod objective;
pub mod optim;
pub mod par;
pub mod rng;
pub mod rollout;
pub mod trainer;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
