//! Interaction Networks: a DQN control unit that schedules trainable
//! processing units over shared tensor nodes, plus the environments and
//! harness used to train them.

pub mod error;
pub mod control;
pub mod env;
pub mod envs;
pub mod graph;
pub mod harness;
pub mod network;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod snapshot;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
