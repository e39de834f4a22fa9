//! Networks that emulate a plain feed-forward net and a recurrent net under a
//! scripted CU. Used to check that training inside a network matches training
//! the same model directly.

use std::any::Any;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::control::{CuConfig, TrainingWheels, WheelsMode};
use crate::env::{EnvEvent, EnvIo, Environment};
use crate::error::{Error, Result};
use crate::graph::{ActionId, EnvId, Graph, NodeId, NodeSpec, PuId, PuSpec};
use crate::network::{InteractionNetwork, NetworkParts, RuntimeConfig};
use crate::nn::{mse_loss, Activation, FeedForwardNet};
use crate::optim::OptimizerConfig;
use crate::rng::{stream, sub_stream, Rng, Stream};
use crate::tape::TapeConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FixtureKind {
    #[default]
    Fnn,
    Rnn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixtureConfig {
    pub kind: FixtureKind,
    pub input_len: usize,
    pub output_len: usize,
    /// Recurrent only.
    pub memory_len: usize,
    /// Recurrent only: items per sequence.
    pub seq_len: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub optimizer: OptimizerConfig,
}

impl Default for FixtureConfig {
    fn default() -> Self {
        FixtureConfig {
            kind: FixtureKind::Fnn,
            input_len: 2,
            output_len: 1,
            memory_len: 2,
            seq_len: 4,
            hidden: vec![8],
            activation: Activation::Tanh,
            optimizer: OptimizerConfig::sgd(0.05),
        }
    }
}

impl FixtureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_len == 0 || self.output_len == 0 {
            return Err(Error::config("fixture input_len and output_len must be positive"));
        }
        if self.kind == FixtureKind::Rnn && (self.memory_len == 0 || self.seq_len == 0) {
            return Err(Error::config("rnn fixture needs positive memory_len and seq_len"));
        }
        self.optimizer.validate()
    }

    fn dims(&self) -> (usize, usize) {
        match self.kind {
            FixtureKind::Fnn => (self.input_len, self.output_len),
            FixtureKind::Rnn => (self.input_len + self.memory_len, self.output_len + self.memory_len),
        }
    }

    fn net(&self, rng: &mut Rng) -> Result<FeedForwardNet> {
        let (i, o) = self.dims();
        let mut dims = vec![i];
        dims.extend(&self.hidden);
        dims.push(o);
        let out = match self.kind {
            FixtureKind::Fnn => Activation::Identity,
            FixtureKind::Rnn => Activation::Tanh,
        };
        FeedForwardNet::random(&dims, self.activation, out, rng)
    }

    /// Initial parameters of the trained model for `seed`.
    pub fn student(&self, seed: u64) -> Result<FeedForwardNet> {
        self.net(&mut stream(seed, Stream::PuInit))
    }

    /// Unroll a recurrent model over `xs` from a zero memory; returns every output.
    pub fn unroll(&self, net: &FeedForwardNet, xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let mut mem = vec![0.0; self.memory_len];
        let mut ys = Vec::with_capacity(xs.len());
        for x in xs {
            let mut input = x.clone();
            input.extend(&mem);
            let out = net.predict(&input)?;
            ys.push(out[..self.output_len].to_vec());
            mem = out[self.output_len..].to_vec();
        }
        Ok(ys)
    }
}

/// Seeded inputs labelled by a fixed random teacher of the same shape.
#[derive(Debug, Clone)]
pub struct SampleStream {
    config: FixtureConfig,
    teacher: FeedForwardNet,
    rng: Rng,
}

impl SampleStream {
    pub fn new(config: &FixtureConfig, seed: u64) -> Result<Self> {
        let teacher = config.net(&mut sub_stream(seed, Stream::Fixture as u64 * 100 + 1))?;
        Ok(SampleStream { config: config.clone(), teacher, rng: stream(seed, Stream::Fixture) })
    }

    fn input(&mut self) -> Vec<f64> {
        (0..self.config.input_len).map(|_| self.rng.gen_range(-1.0..1.0)).collect()
    }

    pub fn next_sample(&mut self) -> Result<(Vec<f64>, Vec<f64>)> {
        let x = self.input();
        let y = self.teacher.predict(&x)?;
        Ok((x, y))
    }

    /// A sequence and the teacher's output after its last item.
    pub fn next_sequence(&mut self) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
        let xs: Vec<Vec<f64>> = (0..self.config.seq_len).map(|_| self.input()).collect();
        let ys = self.config.unroll(&self.teacher, &xs)?;
        let last = ys.last().cloned().unwrap_or_default();
        Ok((xs, last))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureLayout {
    pub input: NodeId,
    pub output: NodeId,
    /// Recurrent only.
    pub memory: Option<NodeId>,
    pub pu: PuId,
}

pub fn build_fixture_graph(config: &FixtureConfig, net: FeedForwardNet, tape: TapeConfig) -> Result<(Graph, FixtureLayout)> {
    config.validate()?;
    let mut g = Graph::new(tape)?;
    let input = g.add_node(NodeSpec::slot("x", config.input_len))?;
    let output = g.add_node(NodeSpec::slot("y", config.output_len))?;
    let (memory, inputs, outputs) = match config.kind {
        FixtureKind::Fnn => (None, vec![input], vec![output]),
        FixtureKind::Rnn => {
            let m = g.add_node(NodeSpec::slot("memory", config.memory_len))?;
            (Some(m), vec![input, m], vec![output, m])
        }
    };
    let pu = g.add_pu(PuSpec::new("model", net, inputs, outputs, config.optimizer.clone()))?;
    Ok((g, FixtureLayout { input, output, memory, pu }))
}

/// Delivers samples to the input node and grades the model's output. Its one
/// action delivers the next sample (or sequence item).
#[derive(Debug)]
pub struct FixtureTask {
    config: FixtureConfig,
    layout: FixtureLayout,
    samples: SampleStream,
    id: EnvId,
    sequence: Vec<Vec<f64>>,
    target: Vec<f64>,
    cursor: usize,
    awaiting_model: bool,
    outputs: Vec<Vec<f64>>,
    graded: u64,
}

impl FixtureTask {
    pub fn new(config: FixtureConfig, layout: FixtureLayout, seed: u64) -> Result<Self> {
        let samples = SampleStream::new(&config, seed)?;
        Ok(FixtureTask {
            config,
            layout,
            samples,
            id: EnvId(0),
            sequence: Vec::new(),
            target: Vec::new(),
            cursor: 0,
            awaiting_model: false,
            outputs: Vec::new(),
            graded: 0,
        })
    }

    /// Every output the model wrote, in order.
    pub fn outputs(&self) -> &[Vec<f64>] {
        &self.outputs
    }

    pub fn graded(&self) -> u64 {
        self.graded
    }
}

impl Environment for FixtureTask {
    fn name(&self) -> &str {
        match self.config.kind {
            FixtureKind::Fnn => "fnn_task",
            FixtureKind::Rnn => "rnn_task",
        }
    }

    fn attach(&mut self, id: EnvId) {
        self.id = id;
    }

    fn action_count(&self) -> usize {
        1
    }

    fn watched(&self) -> Vec<NodeId> {
        vec![self.layout.output]
    }

    fn perform_action(&mut self, index: usize, io: &mut EnvIo<'_>) -> Result<()> {
        if index != 0 {
            return Err(Error::Environment(format!("fixture has no action {index}")));
        }
        if self.cursor == self.sequence.len() {
            match self.config.kind {
                FixtureKind::Fnn => {
                    let (x, y) = self.samples.next_sample()?;
                    self.sequence = vec![x];
                    self.target = y;
                }
                FixtureKind::Rnn => {
                    let (xs, y) = self.samples.next_sequence()?;
                    self.sequence = xs;
                    self.target = y;
                }
            }
            self.cursor = 0;
            io.event(EnvEvent::TaskStarted);
            if let Some(m) = self.layout.memory {
                io.write(m, vec![0.0; self.config.memory_len])?;
            }
        }
        io.write(self.layout.input, self.sequence[self.cursor].clone())?;
        self.cursor += 1;
        self.awaiting_model = true;
        Ok(())
    }

    fn feedback_phase(&mut self, written: &[NodeId], io: &mut EnvIo<'_>) -> Result<()> {
        if !written.contains(&self.layout.output) || !self.awaiting_model {
            return Ok(());
        }
        self.awaiting_model = false;
        let y = io.read(self.layout.output)?;
        self.outputs.push(y.clone());
        if self.cursor == self.sequence.len() {
            let (mse, grad) = mse_loss(&y, &self.target)?;
            io.gradient(self.layout.output, grad);
            io.reward((1.0 - mse).max(0.0));
            io.event(EnvEvent::Succeeded);
            io.end_episode();
            self.graded += 1;
        }
        Ok(())
    }

    fn script(&self) -> Option<ActionId> {
        Some(if self.awaiting_model { ActionId::Pu(self.layout.pu) } else { ActionId::Env(self.id, 0) })
    }

    fn status(&self) -> serde_json::Value {
        serde_json::json!({
            "cursor": self.cursor,
            "awaiting_model": self.awaiting_model,
            "graded": self.graded,
            "outputs": self.outputs.len(),
        })
    }

    fn as_any(&self) -> &dyn Any {
        self
    }

    fn as_any_mut(&mut self) -> &mut dyn Any {
        self
    }
}

/// A fixture network driven by its script forever, with CU learning off.
pub fn fixture_network(config: &FixtureConfig, seed: u64, tape: TapeConfig) -> Result<(InteractionNetwork, FixtureLayout)> {
    let (graph, layout) = build_fixture_graph(config, config.student(seed)?, tape.clone())?;
    let task = FixtureTask::new(config.clone(), layout, seed)?;
    let parts = NetworkParts {
        graph,
        envs: vec![Box::new(task)],
        cu: CuConfig { train: false, ..CuConfig::default() },
        tape,
        runtime: RuntimeConfig::default(),
        wheels: TrainingWheels { enabled: true, mode: WheelsMode::Drive, active_until: u64::MAX, reward: 1.0 },
    };
    let net = InteractionNetwork::new(parts, stream(seed, Stream::ControlUnit))?;
    Ok((net, layout))
}
