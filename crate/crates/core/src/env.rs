//! The interface between an Interaction Network and its environments.

use std::any::Any;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::graph::{ActionId, EnvId, Graph, NodeId, PuId};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum EnvEvent {
    TaskStarted,
    Succeeded,
    Failed,
    TimedOut,
    /// An action that is not allowed in the current task phase.
    Invalid,
    LengthChanged { from: usize, to: usize },
    Replayed,
}

/// A graded PU execution offered to replay environments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Harvest {
    pub pu: PuId,
    pub input: Vec<f64>,
    pub target: Vec<f64>,
}

/// Everything environments asked for during one iteration.
#[derive(Debug, Clone, Default)]
pub struct Effects {
    pub rewards: Vec<f64>,
    pub gradients: Vec<(NodeId, Vec<f64>)>,
    pub episode_end: bool,
    pub events: Vec<(EnvId, EnvEvent)>,
    pub harvest: Vec<Harvest>,
}

impl Effects {
    pub fn reward_sum(&self) -> f64 {
        self.rewards.iter().sum()
    }
}

/// An environment's handle on the network during one phase.
pub struct EnvIo<'a> {
    graph: &'a mut Graph,
    env: EnvId,
    effects: &'a mut Effects,
}

impl<'a> EnvIo<'a> {
    pub fn new(graph: &'a mut Graph, env: EnvId, effects: &'a mut Effects) -> Self {
        EnvIo { graph, env, effects }
    }

    pub fn id(&self) -> EnvId {
        self.env
    }

    pub fn graph(&self) -> &Graph {
        self.graph
    }

    pub fn read(&self, node: NodeId) -> Result<Vec<f64>> {
        self.graph.read(node).map(<[f64]>::to_vec)
    }

    /// External write; cuts the gradient chain at this node.
    pub fn write(&mut self, node: NodeId, values: Vec<f64>) -> Result<()> {
        self.graph.write_node(node, Tensor::vector(values)?)
    }

    /// Replace a slot value while keeping its provenance, so gradients treat
    /// the replacement as the identity.
    pub fn snap(&mut self, node: NodeId, values: Vec<f64>) -> Result<()> {
        self.graph.overwrite_keep_provenance(node, Tensor::vector(values)?)
    }

    pub fn clear(&mut self, node: NodeId) -> Result<()> {
        self.graph.clear_accumulator(node)
    }

    pub fn reward(&mut self, r: f64) {
        self.effects.rewards.push(r);
    }

    pub fn gradient(&mut self, node: NodeId, grad: Vec<f64>) {
        self.effects.gradients.push((node, grad));
    }

    pub fn end_episode(&mut self) {
        self.effects.episode_end = true;
    }

    pub fn event(&mut self, event: EnvEvent) {
        self.effects.events.push((self.env, event));
    }

    pub fn harvest(&mut self, sample: Harvest) {
        self.effects.harvest.push(sample);
    }

    /// PU and input vector of the execution that last wrote `node`, if it is
    /// still on the tape.
    pub fn writer_input(&self, node: NodeId) -> Option<(PuId, Vec<f64>)> {
        let w = self.graph.node(node).ok()?.last_writer()?;
        let entry = self.graph.tape().get(w.step)?;
        Some((entry.pu, entry.input_vector(w.batch.unwrap_or(0))))
    }
}

/// Curriculum progress reported by environments that have one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub required_len: usize,
    pub max_solved: usize,
}

pub trait Environment: Send + fmt::Debug {
    fn name(&self) -> &str;

    /// Called once when the environment joins a network.
    fn attach(&mut self, _id: EnvId) {}

    fn action_count(&self) -> usize {
        0
    }

    fn signal_len(&self) -> usize {
        0
    }

    /// Nodes whose writes trigger evaluation in the feedback phase.
    fn watched(&self) -> Vec<NodeId> {
        Vec::new()
    }

    /// Deliver outside input for this iteration.
    fn input_phase(&mut self, _io: &mut EnvIo<'_>) -> Result<()> {
        Ok(())
    }

    fn signals(&self) -> Vec<f64> {
        Vec::new()
    }

    fn perform_action(&mut self, index: usize, io: &mut EnvIo<'_>) -> Result<()>;

    /// Observe whichever action was executed this iteration.
    fn on_action(&mut self, _action: ActionId, _io: &mut EnvIo<'_>) -> Result<()> {
        Ok(())
    }

    /// `written` holds the watched nodes written since the input phase.
    fn feedback_phase(&mut self, written: &[NodeId], io: &mut EnvIo<'_>) -> Result<()>;

    /// The scripted-optimal next action, if this environment has a script.
    fn script(&self) -> Option<ActionId> {
        None
    }

    fn harvest(&mut self, _sample: &Harvest) {}

    /// Multiplier applied to the exploration rate.
    fn epsilon_scale(&self) -> f64 {
        1.0
    }

    fn progress(&self) -> Option<Progress> {
        None
    }

    fn status(&self) -> serde_json::Value;

    fn as_any(&self) -> &dyn Any;

    fn as_any_mut(&mut self) -> &mut dyn Any;
}
