//! The control unit: a DQN over the assembled network state that picks one
//! action per iteration.

use std::collections::{BTreeMap, VecDeque};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{ActionId, EnvId, NodeId};
use crate::nn::{Activation, FeedForwardNet, ParamGrads};
use crate::optim::{Optimizer, OptimizerConfig};
use crate::rng::Rng;

/// Meaning of one coordinate of the control unit's input vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKey {
    /// One-hot: the action executed `slot` iterations ago was `action` (slot 0 is the oldest).
    History { slot: usize, action: ActionId },
    Signal { env: EnvId, index: usize },
    Summary { node: NodeId, index: usize },
    LastAction(ActionId),
    /// 1 when the previous action was the argmax, 0 when it was exploratory.
    Greedy,
    /// Normalized iterations since the current task started.
    TaskSteps,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StateLayout {
    keys: Vec<FeatureKey>,
    #[serde(skip)]
    index: BTreeMap<FeatureKey, usize>,
}

impl StateLayout {
    pub fn new(keys: Vec<FeatureKey>) -> Result<Self> {
        let mut index = BTreeMap::new();
        for (i, k) in keys.iter().enumerate() {
            if index.insert(*k, i).is_some() {
                return Err(Error::config(format!("duplicate state feature {k:?}")));
            }
        }
        Ok(StateLayout { keys, index })
    }

    pub fn keys(&self) -> &[FeatureKey] {
        &self.keys
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn position(&self, key: &FeatureKey) -> Option<usize> {
        self.index.get(key).copied()
    }

    /// For each key of `self`, its position in `old` (if present there).
    pub fn mapping_from(&self, old: &StateLayout) -> Vec<Option<usize>> {
        self.keys.iter().map(|k| old.position(k)).collect()
    }
}

/// Remap a state vector laid out by the source of `map` into the new layout;
/// new features read as zero.
pub fn remap_state(state: &[f64], map: &[Option<usize>]) -> Vec<f64> {
    map.iter().map(|m| m.map_or(0.0, |i| state[i])).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: ActionId,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub episode_end: bool,
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer { capacity, items: VecDeque::with_capacity(capacity.min(1 << 14)) }
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

    pub fn push(&mut self, t: Transition) -> Result<()> {
        if !t.reward.is_finite() {
            return Err(Error::NonFinite("transition reward"));
        }
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
        Ok(())
    }

    /// `k` transitions drawn uniformly with replacement; `None` while fewer than `k` are stored.
    pub fn sample(&self, k: usize, rng: &mut Rng) -> Option<Vec<&Transition>> {
        if k == 0 || self.items.len() < k {
            return None;
        }
        Some((0..k).map(|_| &self.items[rng.gen_range(0..self.items.len())]).collect())
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    fn remap(&mut self, map: &[Option<usize>]) {
        for t in &mut self.items {
            t.state = remap_state(&t.state, map);
            t.next_state = remap_state(&t.next_state, map);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_steps: u64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        EpsilonSchedule { start: 1.0, end: 0.05, decay_steps: 20_000 }
    }
}

impl EpsilonSchedule {
    /// Linear decay from `start` to `end`, times `scale`, clamped to [0, 1].
    pub fn value(&self, step: u64, scale: f64) -> f64 {
        let frac = if self.decay_steps == 0 { 1.0 } else { (step as f64 / self.decay_steps as f64).min(1.0) };
        ((self.start + (self.end - self.start) * frac) * scale).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CuConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub gamma: f64,
    pub optimizer: OptimizerConfig,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    pub target_sync: u64,
    pub epsilon: EpsilonSchedule,
    pub history_window: usize,
    /// New action heads start this far below the lowest Q estimate seen so far.
    pub new_action_margin: f64,
    pub train: bool,
    pub meta_last_action: bool,
    pub meta_greedy_flag: bool,
    pub meta_task_steps: bool,
    /// TaskSteps feature is `min(steps, scale) / scale`.
    pub task_steps_scale: f64,
}

impl Default for CuConfig {
    fn default() -> Self {
        CuConfig {
            hidden: vec![64, 64],
            activation: Activation::Tanh,
            gamma: 0.9,
            optimizer: OptimizerConfig::adam(1e-3),
            buffer_capacity: 10_000,
            batch_size: 32,
            target_sync: 500,
            epsilon: EpsilonSchedule::default(),
            history_window: 2,
            new_action_margin: 1.0,
            train: true,
            meta_last_action: true,
            meta_greedy_flag: true,
            meta_task_steps: true,
            task_steps_scale: 16.0,
        }
    }
}

impl CuConfig {
    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::config("cu.gamma must lie in [0, 1]"));
        }
        if self.batch_size == 0 || self.buffer_capacity < self.batch_size {
            return Err(Error::config("cu.buffer_capacity must be at least cu.batch_size > 0"));
        }
        if self.target_sync == 0 {
            return Err(Error::config("cu.target_sync must be at least 1"));
        }
        let e = &self.epsilon;
        if !((0.0..=1.0).contains(&e.start) && (0.0..=1.0).contains(&e.end)) {
            return Err(Error::config("cu.epsilon start/end must lie in [0, 1]"));
        }
        if self.hidden.contains(&0) {
            return Err(Error::config("cu.hidden widths must be positive"));
        }
        if !(self.task_steps_scale > 0.0) {
            return Err(Error::config("cu.task_steps_scale must be positive"));
        }
        if !(self.new_action_margin >= 0.0) {
            return Err(Error::config("cu.new_action_margin must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Head {
    pub action: ActionId,
    pub retired: bool,
}

/// Outcome of one action selection.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub action: ActionId,
    /// False when the action came from random exploration.
    pub greedy: bool,
    pub argmax: ActionId,
}

#[derive(Debug, Clone)]
pub struct ControlUnit {
    config: CuConfig,
    q_net: FeedForwardNet,
    target_net: FeedForwardNet,
    optimizer: Optimizer,
    buffer: ReplayBuffer,
    heads: Vec<Head>,
    head_index: BTreeMap<ActionId, usize>,
    layout: StateLayout,
    min_q_seen: f64,
    updates: u64,
    rng: Rng,
}

impl ControlUnit {
    pub fn new(config: CuConfig, layout: StateLayout, actions: &[ActionId], mut rng: Rng) -> Result<Self> {
        config.validate()?;
        if actions.is_empty() {
            return Err(Error::config("the action catalog is empty"));
        }
        let mut dims = vec![layout.len().max(1)];
        dims.extend(&config.hidden);
        dims.push(actions.len());
        let q_net = FeedForwardNet::random(&dims, config.activation, Activation::Identity, &mut rng)?;
        let heads: Vec<Head> = actions.iter().map(|&action| Head { action, retired: false }).collect();
        let head_index = heads.iter().enumerate().map(|(i, h)| (h.action, i)).collect::<BTreeMap<_, _>>();
        if head_index.len() != heads.len() {
            return Err(Error::config("duplicate action in catalog"));
        }
        Ok(ControlUnit {
            optimizer: Optimizer::new(config.optimizer.clone()),
            buffer: ReplayBuffer::new(config.buffer_capacity),
            target_net: q_net.clone(),
            q_net,
            heads,
            head_index,
            layout,
            min_q_seen: f64::INFINITY,
            updates: 0,
            rng,
            config,
        })
    }

    pub fn config(&self) -> &CuConfig {
        &self.config
    }

    pub fn layout(&self) -> &StateLayout {
        &self.layout
    }

    pub fn q_net(&self) -> &FeedForwardNet {
        &self.q_net
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn heads(&self) -> &[Head] {
        &self.heads
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn min_q_seen(&self) -> f64 {
        self.min_q_seen
    }

    /// Active actions in catalog order.
    pub fn actions(&self) -> Vec<ActionId> {
        self.head_index.iter().filter(|(_, &i)| !self.heads[i].retired).map(|(a, _)| *a).collect()
    }

    /// An empty layout feeds one constant zero column.
    fn input<'a>(&self, state: &'a [f64]) -> std::borrow::Cow<'a, [f64]> {
        if self.layout.is_empty() {
            std::borrow::Cow::Owned(vec![0.0])
        } else {
            std::borrow::Cow::Borrowed(state)
        }
    }

    fn raw_q(&self, net: &FeedForwardNet, state: &[f64]) -> Result<Vec<f64>> {
        if state.len() != self.layout.len() {
            return Err(Error::Shape { expected: self.layout.len(), actual: state.len() });
        }
        net.predict(&self.input(state))
    }

    /// Q estimates of the active actions, in catalog order.
    pub fn q_values(&self, state: &[f64]) -> Result<Vec<(ActionId, f64)>> {
        let q = self.raw_q(&self.q_net, state)?;
        Ok(self.head_index.iter().filter(|(_, &i)| !self.heads[i].retired).map(|(a, &i)| (*a, q[i])).collect())
    }

    /// Best active head; exact ties go to the lowest action id.
    pub fn argmax(&self, q: &[f64]) -> ActionId {
        let mut best: Option<(ActionId, f64)> = None;
        for (a, &i) in &self.head_index {
            if self.heads[i].retired {
                continue;
            }
            if best.map_or(true, |(_, v)| q[i] > v) {
                best = Some((*a, q[i]));
            }
        }
        best.expect("at least one active action").0
    }

    /// Epsilon-greedy selection. Both random draws happen on every call so
    /// the stream does not depend on which branch is taken.
    pub fn select_action(&mut self, state: &[f64], epsilon: f64) -> Result<Decision> {
        let q = self.raw_q(&self.q_net, state)?;
        let active = self.actions();
        if active.is_empty() {
            return Err(Error::config("every action is retired"));
        }
        for (h, v) in self.heads.iter().zip(&q) {
            if !h.retired {
                self.min_q_seen = self.min_q_seen.min(*v);
            }
        }
        let argmax = self.argmax(&q);
        let u: f64 = self.rng.gen();
        let pick = self.rng.gen_range(0..active.len());
        if u < epsilon {
            Ok(Decision { action: active[pick], greedy: false, argmax })
        } else {
            Ok(Decision { action: argmax, greedy: true, argmax })
        }
    }

    /// TD target; episode ends cut the bootstrap.
    pub fn td_target(&self, t: &Transition) -> Result<f64> {
        if t.episode_end {
            return Ok(t.reward);
        }
        let q = self.raw_q(&self.target_net, &t.next_state)?;
        let best = self
            .heads
            .iter()
            .zip(&q)
            .filter(|(h, _)| !h.retired)
            .map(|(_, &v)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        Ok(t.reward + self.config.gamma * best)
    }

    /// One gradient step on the mean squared TD error of `batch`; returns the loss.
    pub fn td_update(&mut self, batch: &[&Transition]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::config("empty TD batch"));
        }
        let mut grads = ParamGrads::zeros_like(&self.q_net);
        let mut loss = 0.0;
        let n = batch.len() as f64;
        let mut out_grad = vec![0.0; self.heads.len()];
        for t in batch {
            let head = *self.head_index.get(&t.action).ok_or_else(|| Error::config(format!("unknown action {}", t.action)))?;
            let target = self.td_target(t)?;
            let (q, trace) = self.q_net.forward(&self.input(&t.state))?;
            let err = q[head] - target;
            loss += err * err / n;
            out_grad.iter_mut().for_each(|g| *g = 0.0);
            out_grad[head] = 2.0 * err / n;
            self.q_net.backward_accumulate(&trace, &out_grad, &mut grads)?;
        }
        self.optimizer.apply(&mut self.q_net, &grads)?;
        self.updates += 1;
        if self.updates % self.config.target_sync == 0 {
            self.target_net = self.q_net.clone();
        }
        Ok(loss)
    }

    pub fn store(&mut self, t: Transition) -> Result<()> {
        if t.state.len() != self.layout.len() || t.next_state.len() != self.layout.len() {
            return Err(Error::Shape { expected: self.layout.len(), actual: t.state.len() });
        }
        self.buffer.push(t)
    }

    /// Train on one sampled batch once the buffer holds at least a batch.
    pub fn train_step(&mut self) -> Result<Option<f64>> {
        if !self.config.train {
            return Ok(None);
        }
        let k = self.config.batch_size;
        let Some(batch) = self.buffer.sample(k, &mut self.rng) else {
            return Ok(None);
        };
        let batch: Vec<Transition> = batch.into_iter().cloned().collect();
        let refs: Vec<&Transition> = batch.iter().collect();
        self.td_update(&refs).map(Some)
    }

    /// Add an output head for `action` whose initial Q sits `margin` below the
    /// lowest estimate observed so far, so no greedy choice changes.
    pub fn register_action(&mut self, action: ActionId) -> Result<()> {
        if self.head_index.contains_key(&action) {
            return Err(Error::config(format!("action {action} already registered")));
        }
        let floor = if self.min_q_seen.is_finite() { self.min_q_seen } else { self.current_min_bias() };
        let bias = floor - self.config.new_action_margin;
        self.q_net.push_output(bias);
        self.target_net.push_output(bias);
        self.optimizer.push_output();
        self.head_index.insert(action, self.heads.len());
        self.heads.push(Head { action, retired: false });
        Ok(())
    }

    fn current_min_bias(&self) -> f64 {
        // Bound on |Q| before any state has been seen: tanh hidden units are in
        // [-1, 1], so |Q| <= sum |w| + |b| per head.
        let last = self.q_net.layers().last().expect("non-empty");
        (0..last.out_dim)
            .map(|r| {
                let w: f64 = last.weights[r * last.in_dim..(r + 1) * last.in_dim].iter().map(|v| v.abs()).sum();
                last.bias[r] - w
            })
            .fold(0.0, f64::min)
    }

    /// Mask a head from selection and bootstrapping.
    pub fn retire_action(&mut self, action: ActionId) -> Result<()> {
        let i = *self.head_index.get(&action).ok_or_else(|| Error::config(format!("unknown action {action}")))?;
        self.heads[i].retired = true;
        if self.heads.iter().all(|h| h.retired) {
            return Err(Error::config("every action is retired"));
        }
        Ok(())
    }

    /// Switch to a new state layout, keeping learned weights for features
    /// present in both layouts.
    pub fn relayout(&mut self, layout: StateLayout) {
        if layout.keys() == self.layout.keys() {
            return;
        }
        let map = layout.mapping_from(&self.layout);
        // A previously empty layout fed one constant zero column; it carries no weight.
        let net_map: Vec<Option<usize>> = if self.layout.is_empty() { vec![None; map.len()] } else { map.clone() };
        let net_map = if layout.is_empty() { vec![None] } else { net_map };
        self.q_net.remap_inputs(&net_map);
        self.target_net.remap_inputs(&net_map);
        self.optimizer.remap_inputs(&net_map);
        self.buffer.remap(&map);
        self.layout = layout;
    }

    pub fn rng_mut(&mut self) -> &mut Rng {
        &mut self.rng
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WheelsMode {
    /// The CU acts; it is rewarded for matching the script and the environment reward is ignored.
    #[default]
    Reward,
    /// The script's action is executed and environment rewards pass through.
    Drive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingWheels {
    pub enabled: bool,
    pub mode: WheelsMode,
    /// First iteration at which the wheels are off.
    pub active_until: u64,
    pub reward: f64,
}

impl Default for TrainingWheels {
    fn default() -> Self {
        TrainingWheels { enabled: false, mode: WheelsMode::Reward, active_until: 100_000, reward: 1.0 }
    }
}

impl TrainingWheels {
    pub fn active(&self, iteration: u64) -> bool {
        self.enabled && iteration < self.active_until
    }

    /// Reward for the CU under Reward mode.
    pub fn scripted_reward(&self, executed: ActionId, script: ActionId) -> f64 {
        if executed == script {
            self.reward
        } else {
            0.0
        }
    }
}
