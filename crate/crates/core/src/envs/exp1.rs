//! Experiment 1: two inputs arrive; if the first is larger the answer is
//! twice the first, otherwise half the second.
//!
//! Layout: n0 and n1 receive the inputs, n2 takes the submission, n3 holds
//! the comparison written by pu0. pu0 reads {n0, n1} and writes n3, pu1 maps
//! n0 to n2 and pu2 maps n1 to n2.

use std::any::Any;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::env::{EnvEvent, EnvIo, Environment, Harvest};
use crate::error::{Error, Result};
use crate::graph::{ActionId, EnvId, Graph, NodeId, NodeSpec, PuId, PuSpec};
use crate::nn::{mse_loss, Activation, FeedForwardNet};
use crate::rng::Rng;
use crate::tape::TapeConfig;

use super::PuConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exp1Variant {
    /// Only the comparison node is visible to the CU.
    #[default]
    Base,
    /// The two inputs are also given to the CU as signals.
    InputsToCu,
    /// Scripted CU training; the input nodes are CU-visible so the script can be followed.
    TrainingWheels,
    /// PUs start from supervised pretraining.
    PretrainedPus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Exp1Config {
    /// A graded submission with at least this reward counts as a success.
    pub success_reward: f64,
    /// Reward is `max(0, 1 - mse / mse_scale)`.
    pub mse_scale: f64,
}

impl Default for Exp1Config {
    fn default() -> Self {
        Exp1Config { success_reward: 0.9, mse_scale: 0.1 }
    }
}

impl Exp1Config {
    pub fn validate(&self) -> Result<()> {
        if !(self.mse_scale > 0.0) {
            return Err(Error::config("exp1.mse_scale must be positive"));
        }
        Ok(())
    }

    pub fn reward(&self, mse: f64) -> f64 {
        (1.0 - mse / self.mse_scale).max(0.0)
    }
}

pub fn exp1_target(a: f64, b: f64) -> f64 {
    if a > b {
        2.0 * a
    } else {
        b / 2.0
    }
}

/// Supervised labels for the three PUs on one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Exp1Labels {
    /// 1 when the first input is larger, else 0.
    pub compare: f64,
    pub double: f64,
    pub half: f64,
}

pub fn exp1_pretrain_targets(a: f64, b: f64) -> Exp1Labels {
    Exp1Labels { compare: if a > b { 1.0 } else { 0.0 }, double: 2.0 * a, half: b / 2.0 }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exp1Layout {
    pub first: NodeId,
    pub second: NodeId,
    pub submit: NodeId,
    pub compare: NodeId,
    pub comparer: PuId,
    pub doubler: PuId,
    pub halver: PuId,
}

/// Random PU networks for the layout: comparer 2→1 (sigmoid), doubler and halver 1→1.
pub fn exp1_nets(pu: &PuConfig, rng: &mut Rng) -> Result<[FeedForwardNet; 3]> {
    Ok([
        pu.net(2, 1, Activation::Sigmoid, rng)?,
        pu.net(1, 1, Activation::Identity, rng)?,
        pu.net(1, 1, Activation::Identity, rng)?,
    ])
}

pub fn build_exp1_graph(variant: Exp1Variant, nets: [FeedForwardNet; 3], pu: &PuConfig, tape: TapeConfig) -> Result<(Graph, Exp1Layout)> {
    let mut g = Graph::new(tape)?;
    let inputs_visible = variant == Exp1Variant::TrainingWheels;
    let input_spec = |name: &str| {
        let s = NodeSpec::slot(name, 1);
        if inputs_visible {
            s.visible(1)
        } else {
            s
        }
    };
    let first = g.add_node(input_spec("first"))?;
    let second = g.add_node(input_spec("second"))?;
    let submit = g.add_node(NodeSpec::slot("submit", 1))?;
    let compare = g.add_node(NodeSpec::slot("compare", 1).visible(1))?;
    let [n0, n1, n2] = nets;
    let comparer = g.add_pu(PuSpec::new("compare", n0, vec![first, second], vec![compare], pu.optimizer.clone()))?;
    let doubler = g.add_pu(PuSpec::new("double", n1, vec![first], vec![submit], pu.optimizer.clone()))?;
    let halver = g.add_pu(PuSpec::new("half", n2, vec![second], vec![submit], pu.optimizer.clone()))?;
    Ok((g, Exp1Layout { first, second, submit, compare, comparer, doubler, halver }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exp1Phase {
    AwaitingDelivery,
    Solving,
}

#[derive(Debug)]
pub struct Exp1Env {
    config: Exp1Config,
    variant: Exp1Variant,
    layout: Exp1Layout,
    rng: Rng,
    id: EnvId,
    a: f64,
    b: f64,
    phase: Exp1Phase,
    compared: bool,
    task_steps: u64,
    tasks: u64,
    successes: u64,
    last_reward: Option<f64>,
}

impl Exp1Env {
    pub fn new(config: Exp1Config, variant: Exp1Variant, layout: Exp1Layout, rng: Rng) -> Self {
        Exp1Env {
            config,
            variant,
            layout,
            rng,
            id: EnvId(0),
            a: 0.0,
            b: 0.0,
            phase: Exp1Phase::AwaitingDelivery,
            compared: false,
            task_steps: 0,
            tasks: 0,
            successes: 0,
            last_reward: None,
        }
    }

    pub fn layout(&self) -> &Exp1Layout {
        &self.layout
    }

    pub fn inputs(&self) -> (f64, f64) {
        (self.a, self.b)
    }

    pub fn phase(&self) -> Exp1Phase {
        self.phase
    }

    pub fn tasks(&self) -> u64 {
        self.tasks
    }

    pub fn last_reward(&self) -> Option<f64> {
        self.last_reward
    }

    /// The PU that submits the right answer for the current inputs.
    pub fn correct_submitter(&self) -> PuId {
        if self.a > self.b {
            self.layout.doubler
        } else {
            self.layout.halver
        }
    }

    /// Whether the comparison step belongs to the optimal sequence.
    pub fn script_compares(&self) -> bool {
        self.variant != Exp1Variant::InputsToCu
    }
}

impl Environment for Exp1Env {
    fn name(&self) -> &str {
        "exp1"
    }

    fn attach(&mut self, id: EnvId) {
        self.id = id;
    }

    fn signal_len(&self) -> usize {
        if self.variant == Exp1Variant::InputsToCu {
            2
        } else {
            0
        }
    }

    fn watched(&self) -> Vec<NodeId> {
        vec![self.layout.submit]
    }

    fn input_phase(&mut self, io: &mut EnvIo<'_>) -> Result<()> {
        if self.phase == Exp1Phase::AwaitingDelivery {
            self.a = self.rng.gen::<f64>();
            self.b = self.rng.gen::<f64>();
            io.write(self.layout.first, vec![self.a])?;
            io.write(self.layout.second, vec![self.b])?;
            self.phase = Exp1Phase::Solving;
            self.compared = false;
            self.task_steps = 0;
            self.tasks += 1;
            io.event(EnvEvent::TaskStarted);
        }
        Ok(())
    }

    fn signals(&self) -> Vec<f64> {
        if self.variant == Exp1Variant::InputsToCu {
            vec![self.a, self.b]
        } else {
            Vec::new()
        }
    }

    fn perform_action(&mut self, index: usize, _io: &mut EnvIo<'_>) -> Result<()> {
        Err(Error::Environment(format!("exp1 has no action {index}")))
    }

    fn on_action(&mut self, action: ActionId, _io: &mut EnvIo<'_>) -> Result<()> {
        if action == ActionId::Pu(self.layout.comparer) {
            self.compared = true;
        }
        Ok(())
    }

    fn feedback_phase(&mut self, written: &[NodeId], io: &mut EnvIo<'_>) -> Result<()> {
        self.task_steps += 1;
        if self.phase != Exp1Phase::Solving || !written.contains(&self.layout.submit) {
            return Ok(());
        }
        let y = io.read(self.layout.submit)?;
        let target = exp1_target(self.a, self.b);
        let (mse, grad) = mse_loss(&y, &[target])?;
        let reward = self.config.reward(mse);
        io.reward(reward);
        if let Some((pu, input)) = io.writer_input(self.layout.submit) {
            io.harvest(Harvest { pu, input, target: vec![target] });
        }
        io.gradient(self.layout.submit, grad);
        if reward >= self.config.success_reward {
            self.successes += 1;
            io.event(EnvEvent::Succeeded);
        } else {
            io.event(EnvEvent::Failed);
        }
        io.end_episode();
        self.last_reward = Some(reward);
        self.phase = Exp1Phase::AwaitingDelivery;
        Ok(())
    }

    fn script(&self) -> Option<ActionId> {
        if self.phase != Exp1Phase::Solving {
            return None;
        }
        if self.script_compares() && !self.compared {
            Some(ActionId::Pu(self.layout.comparer))
        } else {
            Some(ActionId::Pu(self.correct_submitter()))
        }
    }

    fn status(&self) -> serde_json::Value {
        serde_json::json!({
            "phase": self.phase,
            "inputs": [self.a, self.b],
            "target": exp1_target(self.a, self.b),
            "compared": self.compared,
            "task_steps": self.task_steps,
            "tasks": self.tasks,
            "successes": self.successes,
        })
    }

    fn as_any(&self) -> &dyn Any {
        self
    }

    fn as_any_mut(&mut self) -> &mut dyn Any {
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn target_rule() {
        assert!((exp1_target(0.8, 0.2) - 1.6).abs() < 1e-15);
        assert!((exp1_target(0.2, 0.8) - 0.4).abs() < 1e-15);
        assert_eq!(exp1_target(0.5, 0.5), 0.25);
    }

    #[test]
    fn pretrain_labels() {
        let l = exp1_pretrain_targets(0.9, 0.1);
        assert_eq!(l.compare, 1.0);
        assert!((l.double - 1.8).abs() < 1e-15);
        assert!((l.half - 0.05).abs() < 1e-15);
        assert_eq!(exp1_pretrain_targets(0.1, 0.9).compare, 0.0);
    }
}
