//! Concrete environments and the network layouts they are built around.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::nn::{Activation, FeedForwardNet};
use crate::optim::OptimizerConfig;
use crate::rng::Rng;

pub mod exp1;
pub mod exp2;
pub mod fixtures;
pub mod replay;

/// Architecture and optimizer shared by the PUs of an experiment layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PuConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub optimizer: OptimizerConfig,
}

impl Default for PuConfig {
    fn default() -> Self {
        PuConfig { hidden: vec![16], activation: Activation::Tanh, optimizer: OptimizerConfig::sgd(0.01) }
    }
}

impl PuConfig {
    pub fn net(&self, input: usize, output: usize, output_activation: Activation, rng: &mut Rng) -> Result<FeedForwardNet> {
        let mut dims = vec![input];
        dims.extend(&self.hidden);
        dims.push(output);
        FeedForwardNet::random(&dims, self.activation, output_activation, rng)
    }
}
