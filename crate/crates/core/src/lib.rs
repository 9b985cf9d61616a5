//! Teams of stochastic units trained by MAP propagation, together with the
//! baselines, classic-control tasks, numerical oracles and experiment harness
//! used to evaluate them.

pub mod env;
pub mod error;
pub mod harness;
pub mod learners;
pub mod network;
pub mod optim;
pub mod settle;
pub mod verify;

pub use error::{Error, Result};
