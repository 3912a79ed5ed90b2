//! Chaotic control laboratory.
//!
//! Discrete maps and continuous flows wrapped as episodic control tasks, a
//! small dense-network engine, DQN / QRDQN / PPO learners, and the estimators
//! used to compare how scalar returns and return distributions vary across
//! state when the underlying dynamics are chaotic.

pub mod agents;
pub mod diagnostics;
pub mod dynamics;
pub mod envs;
pub mod error;
pub mod harness;
pub mod nn;
pub mod rng;
pub mod state;

pub use error::{Error, Result};
pub(crate) use error::invalid;
pub use rng::RngStream;
pub use state::StateVector;
