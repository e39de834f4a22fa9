//! Experience replay as an environment: stored PU executions are written back
//! to an input node on request and graded when the PU runs on them again.

use std::any::Any;
use std::collections::VecDeque;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::env::{EnvEvent, EnvIo, Environment, Harvest};
use crate::error::{Error, Result};
use crate::graph::{NodeId, PuId};
use crate::nn::mse_loss;
use crate::rng::Rng;

/// Bounded FIFO store of graded samples with uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayStore {
    capacity: usize,
    items: VecDeque<Harvest>,
}

impl ReplayStore {
    pub fn new(capacity: usize) -> Self {
        ReplayStore { capacity: capacity.max(1), items: VecDeque::new() }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, sample: Harvest) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(sample);
    }

    pub fn sample(&self, rng: &mut Rng) -> Option<&Harvest> {
        if self.items.is_empty() {
            None
        } else {
            self.items.get(rng.gen_range(0..self.items.len()))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplayConfig {
    pub capacity: usize,
    /// CU reward for a replay request that had something to replay.
    pub reward: f64,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        ReplayConfig { capacity: 1000, reward: 0.05 }
    }
}

/// Replays samples of one PU. `input` must be the PU's input node and
/// `output` one of its output nodes.
#[derive(Debug)]
pub struct ReplayEnv {
    config: ReplayConfig,
    pu: PuId,
    input: NodeId,
    output: NodeId,
    input_len: usize,
    output_len: usize,
    store: ReplayStore,
    rng: Rng,
    pending: Option<Harvest>,
    replays: u64,
}

impl ReplayEnv {
    pub fn new(config: ReplayConfig, pu: PuId, input: NodeId, output: NodeId, dims: (usize, usize), rng: Rng) -> Self {
        ReplayEnv {
            store: ReplayStore::new(config.capacity),
            config,
            pu,
            input,
            output,
            input_len: dims.0,
            output_len: dims.1,
            rng,
            pending: None,
            replays: 0,
        }
    }

    pub fn store(&self) -> &ReplayStore {
        &self.store
    }

    pub fn pending(&self) -> Option<&Harvest> {
        self.pending.as_ref()
    }
}

impl Environment for ReplayEnv {
    fn name(&self) -> &str {
        "replay"
    }

    fn action_count(&self) -> usize {
        1
    }

    fn watched(&self) -> Vec<NodeId> {
        vec![self.output]
    }

    fn perform_action(&mut self, index: usize, io: &mut EnvIo<'_>) -> Result<()> {
        if index != 0 {
            return Err(Error::Environment(format!("replay has no action {index}")));
        }
        let Some(sample) = self.store.sample(&mut self.rng).cloned() else {
            return Ok(());
        };
        io.write(self.input, sample.input.clone())?;
        io.reward(self.config.reward);
        io.event(EnvEvent::Replayed);
        self.pending = Some(sample);
        self.replays += 1;
        Ok(())
    }

    fn feedback_phase(&mut self, written: &[NodeId], io: &mut EnvIo<'_>) -> Result<()> {
        if !written.contains(&self.output) {
            return Ok(());
        }
        let Some(sample) = self.pending.take() else {
            return Ok(());
        };
        // Only grade the execution that actually ran on the replayed input.
        match io.writer_input(self.output) {
            Some((pu, input)) if pu == self.pu && input == sample.input => {
                let y = io.read(self.output)?;
                let (_, grad) = mse_loss(&y, &sample.target)?;
                io.gradient(self.output, grad);
            }
            _ => {}
        }
        Ok(())
    }

    fn harvest(&mut self, sample: &Harvest) {
        if sample.pu == self.pu && sample.input.len() == self.input_len && sample.target.len() == self.output_len {
            self.store.push(sample.clone());
        }
    }

    fn status(&self) -> serde_json::Value {
        serde_json::json!({
            "stored": self.store.len(),
            "replays": self.replays,
            "pending": self.pending.is_some(),
        })
    }

    fn as_any(&self) -> &dyn Any {
        self
    }

    fn as_any_mut(&mut self) -> &mut dyn Any {
        self
    }
}
