//! The Interaction Network and its main loop.

use std::collections::{BTreeMap, VecDeque};
use std::ops::ControlFlow;

use serde::{Deserialize, Serialize};

use crate::control::{ControlUnit, CuConfig, FeatureKey, StateLayout, TrainingWheels, Transition, WheelsMode};
use crate::env::{EnvEvent, EnvIo, Effects, Environment};
use crate::error::{Error, Result};
use crate::graph::{ActionId, EnvId, Graph, NodeId, NodeSpec, PuId, PuSpec};
use crate::nn::ParamGrads;
use crate::rng::Rng;
use crate::tape::{backprop_from_node, interference_guard, normalize_route_grads, ApplyMode, TapeConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RuntimeConfig {
    /// CU reward added when an environment handler fails.
    pub env_error_penalty: f64,
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        RuntimeConfig { env_error_penalty: -0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientEvent {
    pub node: NodeId,
    pub norm: f64,
    /// Norm of the update each PU received, after normalization and guarding.
    pub pu_norms: Vec<(PuId, f64)>,
    pub depth: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationOutcome {
    pub iteration: u64,
    pub action: ActionId,
    pub greedy: bool,
    pub argmax: ActionId,
    /// The scripted-optimal action for the state the CU acted in.
    pub script: Option<ActionId>,
    pub wheels: bool,
    pub epsilon: f64,
    /// Reward stored for the CU.
    pub reward: f64,
    /// Sum of environment rewards, which differs from `reward` under training wheels.
    pub env_reward: f64,
    pub events: Vec<(EnvId, EnvEvent)>,
    pub gradients: Vec<GradientEvent>,
    pub episode_end: bool,
    pub cu_loss: Option<f64>,
}

/// Loop phases, for checking their order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Input,
    Assemble,
    Select,
    Dispatch,
    Feedback,
    Store,
}

#[derive(Debug)]
pub struct InteractionNetwork {
    graph: Graph,
    envs: Envs,
    cu: ControlUnit,
    tape_config: TapeConfig,
    runtime: RuntimeConfig,
    wheels: TrainingWheels,
    iteration: u64,
    history: VecDeque<Option<ActionId>>,
    last_greedy: bool,
    task_steps: u64,
    pending: BTreeMap<PuId, ParamGrads>,
    phase_log: Option<Vec<Phase>>,
}

/// Everything needed to assemble a network.
pub struct NetworkParts {
    pub graph: Graph,
    pub envs: Vec<Box<dyn Environment>>,
    pub cu: CuConfig,
    pub tape: TapeConfig,
    pub runtime: RuntimeConfig,
    pub wheels: TrainingWheels,
}

impl InteractionNetwork {
    pub fn new(parts: NetworkParts, cu_rng: Rng) -> Result<Self> {
        parts.tape.validate()?;
        if parts.graph.tape().horizon() != parts.tape.horizon || parts.graph.tape().capacity() != parts.tape.capacity {
            return Err(Error::config("graph tape does not match the tape config"));
        }
        let mut envs = BTreeMap::new();
        for (i, mut env) in parts.envs.into_iter().enumerate() {
            let id = EnvId(i);
            env.attach(id);
            for n in env.watched() {
                parts.graph.node(n)?;
            }
            envs.insert(id, env);
        }
        let catalog = catalog_of(&parts.graph, &envs);
        let layout = layout_of(&parts.cu, &parts.graph, &envs, &catalog)?;
        let window = parts.cu.history_window;
        let cu = ControlUnit::new(parts.cu, layout, &catalog, cu_rng)?;
        Ok(InteractionNetwork {
            cu,
            graph: parts.graph,
            envs,
            tape_config: parts.tape,
            runtime: parts.runtime,
            wheels: parts.wheels,
            iteration: 0,
            history: VecDeque::from(vec![None; window]),
            last_greedy: true,
            task_steps: 0,
            pending: BTreeMap::new(),
            phase_log: None,
        })
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    /// Direct graph access for tests and harness setup. Structural changes
    /// must go through the network so the CU is kept in step.
    pub fn graph_mut(&mut self) -> &mut Graph {
        &mut self.graph
    }

    pub fn cu(&self) -> &ControlUnit {
        &self.cu
    }

    pub fn cu_mut(&mut self) -> &mut ControlUnit {
        &mut self.cu
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn wheels(&self) -> &TrainingWheels {
        &self.wheels
    }

    pub fn tape_config(&self) -> &TapeConfig {
        &self.tape_config
    }

    pub fn env(&self, id: EnvId) -> Option<&dyn Environment> {
        self.envs.get(&id).map(|e| e.as_ref())
    }

    pub fn env_mut(&mut self, id: EnvId) -> Option<&mut (dyn Environment + 'static)> {
        self.envs.get_mut(&id).map(|e| e.as_mut())
    }

    pub fn envs(&self) -> impl Iterator<Item = (EnvId, &dyn Environment)> {
        self.envs.iter().map(|(k, v)| (*k, v.as_ref()))
    }

    pub fn last_action(&self) -> Option<ActionId> {
        self.history.back().copied().flatten()
    }

    pub fn record_phases(&mut self, on: bool) {
        self.phase_log = on.then(Vec::new);
    }

    pub fn take_phase_log(&mut self) -> Vec<Phase> {
        self.phase_log.as_mut().map(std::mem::take).unwrap_or_default()
    }

    fn log(&mut self, phase: Phase) {
        if let Some(l) = &mut self.phase_log {
            l.push(phase);
        }
    }

    /// All PU actions followed by all environment actions.
    pub fn catalog(&self) -> Vec<ActionId> {
        catalog_of(&self.graph, &self.envs)
    }

    /// The CU's view of the current network state.
    pub fn assemble_state(&self) -> Vec<f64> {
        let layout = self.cu.layout();
        let mut s = vec![0.0; layout.len()];
        let mut set = |key: FeatureKey, v: f64| {
            if let Some(i) = layout.position(&key) {
                s[i] = v;
            }
        };
        for (slot, a) in self.history.iter().enumerate() {
            if let Some(action) = a {
                set(FeatureKey::History { slot, action: *action }, 1.0);
            }
        }
        for (id, env) in &self.envs {
            for (index, v) in env.signals().into_iter().enumerate() {
                set(FeatureKey::Signal { env: *id, index }, v);
            }
        }
        for (id, node) in self.graph.nodes() {
            for (index, v) in node.summary().into_iter().enumerate() {
                set(FeatureKey::Summary { node: id, index }, v);
            }
        }
        if let Some(a) = self.last_action() {
            set(FeatureKey::LastAction(a), 1.0);
        }
        set(FeatureKey::Greedy, if self.last_greedy { 1.0 } else { 0.0 });
        let scale = self.cu.config().task_steps_scale;
        set(FeatureKey::TaskSteps, (self.task_steps as f64).min(scale) / scale);
        s
    }

    /// Current exploration rate, including environment scaling.
    pub fn epsilon(&self) -> f64 {
        let scale = self.envs.values().map(|e| e.epsilon_scale()).fold(1.0, f64::min);
        self.cu.config().epsilon.value(self.iteration, scale)
    }

    /// The first scripted action offered by an environment, in EnvId order.
    pub fn script(&self) -> Option<ActionId> {
        self.envs.values().find_map(|e| e.script())
    }

    fn env_failed(&self, effects: &mut Effects, id: EnvId, phase: &str, err: &Error) {
        log::warn!("environment {id} failed in {phase}: {err}");
        effects.rewards.push(self.runtime.env_error_penalty);
    }

    /// One pass of the main loop.
    pub fn step(&mut self) -> Result<IterationOutcome> {
        let iteration = self.iteration;
        let mut effects = Effects::default();

        self.log(Phase::Input);
        let ids: Vec<EnvId> = self.envs.keys().copied().collect();
        for id in &ids {
            let env = self.envs.get_mut(id).expect("env id");
            if let Err(e) = env.input_phase(&mut EnvIo::new(&mut self.graph, *id, &mut effects)) {
                self.env_failed(&mut effects, *id, "input phase", &e);
            }
        }
        // Environments do not trigger on their own input writes.
        self.graph.take_writes();

        self.log(Phase::Assemble);
        let state = self.assemble_state();

        self.log(Phase::Select);
        let epsilon = self.epsilon();
        let decision = self.cu.select_action(&state, epsilon)?;
        let wheels_on = self.wheels.active(iteration);
        let script = self.script();
        let scripted = if wheels_on { script } else { None };
        let (action, greedy) = match (scripted, self.wheels.mode) {
            (Some(s), WheelsMode::Drive) => (s, true),
            _ => (decision.action, decision.greedy),
        };

        self.log(Phase::Dispatch);
        match action {
            ActionId::Pu(pu) => {
                self.graph.execute_pu(pu, !greedy)?;
            }
            ActionId::Env(id, index) => {
                let env = self.envs.get_mut(&id).ok_or_else(|| Error::Environment(format!("unknown environment {id}")))?;
                if let Err(e) = env.perform_action(index, &mut EnvIo::new(&mut self.graph, id, &mut effects)) {
                    self.env_failed(&mut effects, id, "action", &e);
                }
            }
        }
        for id in &ids {
            let env = self.envs.get_mut(id).expect("env id");
            if let Err(e) = env.on_action(action, &mut EnvIo::new(&mut self.graph, *id, &mut effects)) {
                self.env_failed(&mut effects, *id, "action observer", &e);
            }
        }

        self.log(Phase::Feedback);
        let written = self.graph.take_writes();
        for id in &ids {
            let env = self.envs.get_mut(id).expect("env id");
            let watched = env.watched();
            let hits: Vec<NodeId> = written.iter().copied().filter(|n| watched.contains(n)).collect();
            if let Err(e) = env.feedback_phase(&hits, &mut EnvIo::new(&mut self.graph, *id, &mut effects)) {
                self.env_failed(&mut effects, *id, "feedback phase", &e);
            }
        }
        self.graph.take_writes();
        let env_reward = effects.reward_sum();
        let mut gradients = Vec::with_capacity(effects.gradients.len());
        for (node, grad) in std::mem::take(&mut effects.gradients) {
            gradients.push(self.route_gradient(node, &grad)?);
        }
        for sample in std::mem::take(&mut effects.harvest) {
            for env in self.envs.values_mut() {
                env.harvest(&sample);
            }
        }
        if let ApplyMode::Batched { every } = self.tape_config.apply {
            if (iteration + 1) % every == 0 {
                self.flush_gradients()?;
            }
        }

        self.log(Phase::Store);
        let reward = match scripted {
            Some(s) if self.wheels.mode == WheelsMode::Reward => self.wheels.scripted_reward(action, s),
            _ => env_reward,
        };
        if !reward.is_finite() {
            return Err(Error::NonFinite("CU reward"));
        }
        let episode_end = effects.episode_end;
        if !self.history.is_empty() {
            self.history.pop_front();
            self.history.push_back(Some(action));
        }
        self.last_greedy = greedy;
        self.task_steps = if episode_end { 0 } else { self.task_steps + 1 };
        let next_state = self.assemble_state();
        self.cu.store(Transition { state, action, reward, next_state, episode_end })?;
        let cu_loss = self.cu.train_step()?;
        self.iteration += 1;

        Ok(IterationOutcome {
            iteration,
            action,
            greedy,
            argmax: decision.argmax,
            script,
            wheels: wheels_on,
            epsilon,
            reward,
            env_reward,
            events: effects.events,
            gradients,
            episode_end,
            cu_loss,
        })
    }

    /// Run `n` iterations, calling `hook` after each; the hook may stop early.
    pub fn run<F>(&mut self, n: u64, mut hook: F) -> Result<u64>
    where
        F: FnMut(&InteractionNetwork, &IterationOutcome) -> ControlFlow<()>,
    {
        for done in 0..n {
            let out = self.step()?;
            if hook(self, &out).is_break() {
                return Ok(done + 1);
            }
        }
        Ok(n)
    }

    /// Backpropagate `grad` from `node` through the tape and update the PUs it reaches.
    pub fn route_gradient(&mut self, node: NodeId, grad: &[f64]) -> Result<GradientEvent> {
        let bp = backprop_from_node(&self.graph, node, grad, self.tape_config.horizon)?;
        let mut grads = bp.grads;
        normalize_route_grads(&mut grads, self.tape_config.normalize);
        let scales: BTreeMap<PuId, f64> = bp.exploratory.iter().map(|p| (*p, self.tape_config.exploratory_scale)).collect();
        interference_guard(&mut grads, &scales);
        let pu_norms = grads.iter().map(|(p, g)| (*p, g.norm())).collect();
        match self.tape_config.apply {
            ApplyMode::Immediate => {
                for (id, g) in &grads {
                    let pu = self.graph.pu_mut(*id)?;
                    pu.optimizer.apply(&mut pu.net, g)?;
                }
            }
            ApplyMode::Batched { .. } => {
                for (id, g) in grads {
                    match self.pending.get_mut(&id) {
                        Some(acc) if acc.same_layout(&g) => acc.add_assign(&g),
                        _ => {
                            self.pending.insert(id, g);
                        }
                    }
                }
            }
        }
        Ok(GradientEvent { node, norm: crate::tensor::l2_norm(grad), pu_norms, depth: bp.max_depth })
    }

    /// Apply gradients held back by batched mode.
    pub fn flush_gradients(&mut self) -> Result<()> {
        for (id, g) in std::mem::take(&mut self.pending) {
            if let Ok(pu) = self.graph.pu_mut(id) {
                pu.optimizer.apply(&mut pu.net, &g)?;
            }
        }
        Ok(())
    }

    fn refresh_cu(&mut self) -> Result<()> {
        let catalog = self.catalog();
        let layout = layout_of(self.cu.config(), &self.graph, &self.envs, &catalog)?;
        self.cu.relayout(layout);
        Ok(())
    }

    /// Add a PU and give the CU an action for it that starts below every
    /// estimate seen so far.
    pub fn add_pu(&mut self, spec: PuSpec) -> Result<PuId> {
        let id = self.graph.add_pu(spec)?;
        self.cu.register_action(ActionId::Pu(id))?;
        self.refresh_cu()?;
        Ok(id)
    }

    pub fn remove_pu(&mut self, id: PuId) -> Result<()> {
        self.graph.remove_pu(id)?;
        self.cu.retire_action(ActionId::Pu(id))?;
        self.pending.remove(&id);
        self.refresh_cu()
    }

    pub fn add_node(&mut self, spec: NodeSpec) -> Result<NodeId> {
        let id = self.graph.add_node(spec)?;
        self.refresh_cu()?;
        Ok(id)
    }

    pub fn remove_node(&mut self, id: NodeId) -> Result<()> {
        if self.envs.values().any(|e| e.watched().contains(&id)) {
            return Err(Error::Dangling(format!("{id} is watched by an environment")));
        }
        self.graph.remove_node(id)?;
        self.refresh_cu()
    }

    pub(crate) fn restore_runtime(&mut self, iteration: u64, history: Vec<Option<ActionId>>, last_greedy: bool, task_steps: u64) {
        self.iteration = iteration;
        self.history = history.into();
        self.last_greedy = last_greedy;
        self.task_steps = task_steps;
    }

    pub(crate) fn runtime_state(&self) -> (Vec<Option<ActionId>>, bool, u64) {
        (self.history.iter().copied().collect(), self.last_greedy, self.task_steps)
    }
}

type Envs = BTreeMap<EnvId, Box<dyn Environment>>;

fn catalog_of(graph: &Graph, envs: &Envs) -> Vec<ActionId> {
    let mut out: Vec<ActionId> = graph.pu_ids().into_iter().map(ActionId::Pu).collect();
    for (id, env) in envs {
        out.extend((0..env.action_count()).map(|i| ActionId::Env(*id, i)));
    }
    out
}

fn layout_of(cfg: &CuConfig, graph: &Graph, envs: &Envs, catalog: &[ActionId]) -> Result<StateLayout> {
    let mut keys = Vec::new();
    for slot in 0..cfg.history_window {
        keys.extend(catalog.iter().map(|&action| FeatureKey::History { slot, action }));
    }
    for (id, env) in envs {
        keys.extend((0..env.signal_len()).map(|index| FeatureKey::Signal { env: *id, index }));
    }
    for (id, node) in graph.nodes() {
        if let Some(k) = node.summary_len() {
            keys.extend((0..k).map(|index| FeatureKey::Summary { node: id, index }));
        }
    }
    if cfg.meta_last_action {
        keys.extend(catalog.iter().map(|&a| FeatureKey::LastAction(a)));
    }
    if cfg.meta_greedy_flag {
        keys.push(FeatureKey::Greedy);
    }
    if cfg.meta_task_steps {
        keys.push(FeatureKey::TaskSteps);
    }
    StateLayout::new(keys)
}
