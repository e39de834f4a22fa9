//! Experiment 2: fold a learned function over a binary sequence delivered one
//! item at a time, under a curriculum on the sequence length.
//!
//! Layout: n0 receives sequence items, n1 takes the submission, n2 is the
//! working memory. pu0 maps n2 to n1 (submit), pu1 maps {n0, n2} to n2
//! (reduce) and pu2 maps n2 to n2 (reset). The environment's single action
//! delivers the next item.

use std::any::Any;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::env::{EnvEvent, EnvIo, Environment, Progress};
use crate::error::{Error, Result};
use crate::graph::{ActionId, EnvId, Graph, NodeId, NodeSpec, PuId, PuSpec};
use crate::nn::{mse_loss, Activation, Dense, FeedForwardNet};
use crate::rng::Rng;
use crate::tape::TapeConfig;

use super::PuConfig;

/// The function the reduce PU has to learn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Reductor {
    Constant { value: f64 },
    /// The latest item.
    Passthrough,
    /// Parity of the items so far.
    Xor,
}

impl Reductor {
    pub fn apply(&self, acc: f64, item: f64) -> f64 {
        match *self {
            Reductor::Constant { value } => value,
            Reductor::Passthrough => item,
            Reductor::Xor => {
                if (acc >= 0.5) != (item >= 0.5) {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Fold over `items` starting from a zero memory.
    pub fn fold(&self, items: &[f64]) -> f64 {
        items.iter().fold(0.0, |acc, &x| self.apply(acc, x))
    }

    /// A hand-built network computing this reductor exactly on binary inputs
    /// laid out as `[item, memory]`.
    pub fn oracle_net(&self) -> Result<FeedForwardNet> {
        match *self {
            Reductor::Constant { value } => {
                FeedForwardNet::from_layers(vec![Dense::new(vec![0.0, 0.0], vec![value], 2, Activation::Identity)?])
            }
            Reductor::Passthrough => FeedForwardNet::from_layers(vec![Dense::new(vec![1.0, 0.0], vec![0.0], 2, Activation::Identity)?]),
            // |x - m| = relu(x - m) + relu(m - x)
            Reductor::Xor => FeedForwardNet::from_layers(vec![
                Dense::new(vec![1.0, -1.0, -1.0, 1.0], vec![0.0, 0.0], 2, Activation::Relu)?,
                Dense::new(vec![1.0, 1.0], vec![0.0], 2, Activation::Identity)?,
            ]),
        }
    }
}

/// Round to the closer of 0 and 1.
pub fn round_binary(y: f64) -> f64 {
    if y >= 0.5 {
        1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Exp2Config {
    pub reductor: Reductor,
    pub start_len: usize,
    /// Upper end of the curriculum.
    pub max_len: usize,
    pub success_streak_up: u32,
    pub fail_streak_down: u32,
    /// Step budget is `max_steps_slope * n + max_steps_offset`.
    pub max_steps_slope: u64,
    pub max_steps_offset: u64,
    pub reward_success: f64,
    pub p_wrong: f64,
    pub p_timeout: f64,
    pub p_invalid: f64,
    /// Snap the memory node to {0, 1} after every reduce.
    pub round_intermediate: bool,
    /// Multiply the exploration rate by 1/n.
    pub exploration_scaling: bool,
}

impl Default for Exp2Config {
    fn default() -> Self {
        Exp2Config {
            reductor: Reductor::Constant { value: 1.0 },
            start_len: 1,
            max_len: 64,
            success_streak_up: 10,
            fail_streak_down: 50,
            max_steps_slope: 2,
            max_steps_offset: 4,
            reward_success: 1.0,
            p_wrong: -0.2,
            p_timeout: -0.5,
            p_invalid: -0.5,
            round_intermediate: false,
            exploration_scaling: true,
        }
    }
}

impl Exp2Config {
    pub fn validate(&self) -> Result<()> {
        if self.success_streak_up == 0 || self.fail_streak_down == 0 {
            return Err(Error::config("exp2 streak thresholds must be at least 1"));
        }
        if self.start_len == 0 || self.max_len < self.start_len {
            return Err(Error::config("exp2 needs 1 <= start_len <= max_len"));
        }
        Ok(())
    }

    pub fn max_steps(&self, n: usize) -> u64 {
        self.max_steps_slope * n as u64 + self.max_steps_offset
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exp2Layout {
    pub input: NodeId,
    pub output: NodeId,
    pub memory: NodeId,
    pub submitter: PuId,
    pub reducer: PuId,
    pub resetter: PuId,
}

/// Random networks for submit (1→1), reduce (2→1) and reset (1→1).
pub fn exp2_nets(pu: &PuConfig, rng: &mut Rng) -> Result<[FeedForwardNet; 3]> {
    Ok([
        pu.net(1, 1, Activation::Identity, rng)?,
        pu.net(2, 1, Activation::Identity, rng)?,
        pu.net(1, 1, Activation::Identity, rng)?,
    ])
}

/// Exact networks for the optimal policy: identity submit, the reductor, zero reset.
pub fn exp2_oracle_nets(reductor: Reductor) -> Result<[FeedForwardNet; 3]> {
    Ok([
        FeedForwardNet::from_layers(vec![Dense::new(vec![1.0], vec![0.0], 1, Activation::Identity)?])?,
        reductor.oracle_net()?,
        FeedForwardNet::from_layers(vec![Dense::new(vec![0.0], vec![0.0], 1, Activation::Identity)?])?,
    ])
}

pub fn build_exp2_graph(nets: [FeedForwardNet; 3], pu: &PuConfig, tape: TapeConfig) -> Result<(Graph, Exp2Layout)> {
    let mut g = Graph::new(tape)?;
    let input = g.add_node(NodeSpec::slot("input", 1))?;
    let output = g.add_node(NodeSpec::slot("output", 1))?;
    let memory = g.add_node(NodeSpec::slot("memory", 1))?;
    let [submit, reduce, reset] = nets;
    let submitter = g.add_pu(PuSpec::new("submit", submit, vec![memory], vec![output], pu.optimizer.clone()))?;
    let reducer = g.add_pu(PuSpec::new("reduce", reduce, vec![input, memory], vec![memory], pu.optimizer.clone()))?;
    let resetter = g.add_pu(PuSpec::new("reset", reset, vec![memory], vec![memory], pu.optimizer.clone()))?;
    Ok((g, Exp2Layout { input, output, memory, submitter, reducer, resetter }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeResult {
    Success,
    Failure,
}

#[derive(Debug)]
pub struct Exp2Env {
    config: Exp2Config,
    layout: Exp2Layout,
    rng: Rng,
    id: EnvId,
    sequence: Vec<f64>,
    cursor: usize,
    n: usize,
    success_streak: u32,
    fail_streak: u32,
    steps: u64,
    active: bool,
    reset_done: bool,
    pending_reduce: bool,
    max_solved: usize,
    episodes: u64,
    successes: u64,
}

impl Exp2Env {
    pub fn new(config: Exp2Config, layout: Exp2Layout, rng: Rng) -> Result<Self> {
        config.validate()?;
        Ok(Exp2Env {
            n: config.start_len,
            config,
            layout,
            rng,
            id: EnvId(0),
            sequence: Vec::new(),
            cursor: 0,
            success_streak: 0,
            fail_streak: 0,
            steps: 0,
            active: false,
            reset_done: false,
            pending_reduce: false,
            max_solved: 0,
            episodes: 0,
            successes: 0,
        })
    }

    pub fn required_len(&self) -> usize {
        self.n
    }

    pub fn max_solved(&self) -> usize {
        self.max_solved
    }

    pub fn sequence(&self) -> &[f64] {
        &self.sequence
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn layout(&self) -> &Exp2Layout {
        &self.layout
    }

    pub fn config(&self) -> &Exp2Config {
        &self.config
    }

    /// Apply one episode result to the curriculum and return the new length.
    pub fn curriculum_update(&mut self, result: EpisodeResult) -> usize {
        self.curriculum(result).1
    }

    fn curriculum(&mut self, result: EpisodeResult) -> (usize, usize) {
        let before = self.n;
        match result {
            EpisodeResult::Success => {
                self.max_solved = self.max_solved.max(self.n);
                self.success_streak += 1;
                self.fail_streak = 0;
                if self.success_streak >= self.config.success_streak_up {
                    self.n = (self.n + 1).min(self.config.max_len);
                    self.success_streak = 0;
                }
            }
            EpisodeResult::Failure => {
                self.fail_streak += 1;
                self.success_streak = 0;
                if self.fail_streak >= self.config.fail_streak_down {
                    self.n = self.n.saturating_sub(1).max(1);
                    self.fail_streak = 0;
                }
            }
        }
        (before, self.n)
    }

    fn finish(&mut self, result: EpisodeResult, reward: f64, event: EnvEvent, io: &mut EnvIo<'_>) {
        io.reward(reward);
        io.event(event);
        io.end_episode();
        self.active = false;
        self.episodes += 1;
        if result == EpisodeResult::Success {
            self.successes += 1;
        }
        let (from, to) = self.curriculum(result);
        if from != to {
            io.event(EnvEvent::LengthChanged { from, to });
        }
    }
}

impl Environment for Exp2Env {
    fn name(&self) -> &str {
        "exp2"
    }

    fn attach(&mut self, id: EnvId) {
        self.id = id;
    }

    fn action_count(&self) -> usize {
        1
    }

    fn signal_len(&self) -> usize {
        2
    }

    fn watched(&self) -> Vec<NodeId> {
        vec![self.layout.output]
    }

    fn input_phase(&mut self, io: &mut EnvIo<'_>) -> Result<()> {
        if !self.active {
            let n = self.n;
            self.sequence = (0..n).map(|_| if self.rng.gen_bool(0.5) { 1.0 } else { 0.0 }).collect();
            self.cursor = 0;
            self.steps = 0;
            self.reset_done = false;
            self.pending_reduce = false;
            self.active = true;
            io.event(EnvEvent::TaskStarted);
        }
        Ok(())
    }

    fn signals(&self) -> Vec<f64> {
        let n = self.sequence.len();
        vec![f64::from(u8::from(self.cursor == n)), f64::from(u8::from(self.cursor == 0))]
    }

    fn perform_action(&mut self, index: usize, io: &mut EnvIo<'_>) -> Result<()> {
        if index != 0 {
            return Err(Error::Environment(format!("exp2 has no action {index}")));
        }
        if !self.active {
            return Ok(());
        }
        if self.cursor < self.sequence.len() {
            io.write(self.layout.input, vec![self.sequence[self.cursor]])?;
            self.cursor += 1;
            self.pending_reduce = true;
        } else {
            self.finish(EpisodeResult::Failure, self.config.p_invalid, EnvEvent::Invalid, io);
        }
        Ok(())
    }

    fn on_action(&mut self, action: ActionId, io: &mut EnvIo<'_>) -> Result<()> {
        if action == ActionId::Pu(self.layout.resetter) {
            self.reset_done = true;
        } else if action == ActionId::Pu(self.layout.reducer) {
            self.pending_reduce = false;
            if self.config.round_intermediate {
                let m = io.read(self.layout.memory)?;
                io.snap(self.layout.memory, m.into_iter().map(round_binary).collect())?;
            }
        }
        Ok(())
    }

    fn feedback_phase(&mut self, written: &[NodeId], io: &mut EnvIo<'_>) -> Result<()> {
        if !self.active {
            return Ok(());
        }
        self.steps += 1;
        if written.contains(&self.layout.output) {
            if self.cursor < self.sequence.len() {
                self.finish(EpisodeResult::Failure, self.config.p_wrong, EnvEvent::Failed, io);
                return Ok(());
            }
            let y = io.read(self.layout.output)?;
            let target = self.config.reductor.fold(&self.sequence);
            let (_, grad) = mse_loss(&y, &[target])?;
            io.gradient(self.layout.output, grad);
            if round_binary(y[0]) == target {
                self.finish(EpisodeResult::Success, self.config.reward_success, EnvEvent::Succeeded, io);
            } else {
                self.finish(EpisodeResult::Failure, self.config.p_wrong, EnvEvent::Failed, io);
            }
        } else if self.steps >= self.config.max_steps(self.sequence.len()) {
            self.finish(EpisodeResult::Failure, self.config.p_timeout, EnvEvent::TimedOut, io);
        }
        Ok(())
    }

    fn script(&self) -> Option<ActionId> {
        if !self.active {
            return None;
        }
        let l = &self.layout;
        Some(if !self.reset_done {
            ActionId::Pu(l.resetter)
        } else if self.pending_reduce {
            ActionId::Pu(l.reducer)
        } else if self.cursor < self.sequence.len() {
            ActionId::Env(self.id, 0)
        } else {
            ActionId::Pu(l.submitter)
        })
    }

    fn epsilon_scale(&self) -> f64 {
        if self.config.exploration_scaling {
            1.0 / self.n as f64
        } else {
            1.0
        }
    }

    fn progress(&self) -> Option<Progress> {
        Some(Progress { required_len: self.n, max_solved: self.max_solved })
    }

    fn status(&self) -> serde_json::Value {
        serde_json::json!({
            "required_len": self.n,
            "max_solved": self.max_solved,
            "sequence": self.sequence,
            "cursor": self.cursor,
            "steps": self.steps,
            "success_streak": self.success_streak,
            "fail_streak": self.fail_streak,
            "episodes": self.episodes,
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
