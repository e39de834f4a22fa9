//! Provenance tape: a bounded record of PU executions, and backpropagation of
//! node gradients through the executions that produced a node's value.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId, PuId, WriteRef};
use crate::nn::{ForwardTrace, ParamGrads};

/// Values of one input node at execution time, with the write that produced
/// each value.
#[derive(Debug, Clone)]
pub struct InputSnapshot {
    pub node: NodeId,
    /// One value for slots, one per entry for accumulators.
    pub values: Vec<Vec<f64>>,
    pub writers: Vec<Option<WriteRef>>,
}

#[derive(Debug, Clone)]
pub struct TapeEntry {
    pub step: u64,
    pub pu: PuId,
    pub inputs: Vec<InputSnapshot>,
    /// Position in `inputs` of the accumulator the batch ran over, if any.
    pub batch_input: Option<usize>,
    pub traces: Vec<ForwardTrace>,
    pub outputs: Vec<(NodeId, Range<usize>)>,
    pub exploratory: bool,
}

impl TapeEntry {
    /// Concatenated network input for batch element `b`.
    pub fn input_vector(&self, b: usize) -> Vec<f64> {
        let mut x = Vec::new();
        for (pos, s) in self.inputs.iter().enumerate() {
            let i = if Some(pos) == self.batch_input { b } else { 0 };
            x.extend_from_slice(&s.values[i]);
        }
        x
    }

    fn writer(&self, pos: usize, b: usize) -> Option<WriteRef> {
        let s = &self.inputs[pos];
        let i = if Some(pos) == self.batch_input { b } else { 0 };
        s.writers.get(i).copied().flatten()
    }
}

/// How per-PU gradient totals are rescaled before they reach the optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case", deny_unknown_fields)]
pub enum RouteNorm {
    #[default]
    None,
    PerPuClip { max_norm: f64 },
    PerPuUnitNorm,
}

/// When routed gradients are applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum ApplyMode {
    #[default]
    Immediate,
    /// Accumulate and apply every `every` iterations.
    Batched { every: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TapeConfig {
    pub capacity: usize,
    pub horizon: usize,
    pub normalize: RouteNorm,
    /// Guard scale for gradients reaching a PU through an exploratory execution.
    pub exploratory_scale: f64,
    pub apply: ApplyMode,
}

impl Default for TapeConfig {
    fn default() -> Self {
        TapeConfig {
            capacity: 512,
            horizon: 8,
            normalize: RouteNorm::None,
            exploratory_scale: 0.25,
            apply: ApplyMode::Immediate,
        }
    }
}

impl TapeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::config("tape.horizon must be at least 1"));
        }
        if self.capacity < self.horizon {
            return Err(Error::config(format!(
                "tape.capacity ({}) must be at least tape.horizon ({})",
                self.capacity, self.horizon
            )));
        }
        if !(self.exploratory_scale > 0.0 && self.exploratory_scale <= 1.0) {
            return Err(Error::config("tape.exploratory_scale must lie in (0, 1]"));
        }
        match self.normalize {
            RouteNorm::PerPuClip { max_norm } if !(max_norm > 0.0 && max_norm.is_finite()) => {
                return Err(Error::config("tape.normalize.max_norm must be positive"));
            }
            _ => {}
        }
        if let ApplyMode::Batched { every: 0 } = self.apply {
            return Err(Error::config("tape.apply.every must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Tape {
    entries: VecDeque<TapeEntry>,
    next_step: u64,
    capacity: usize,
    horizon: usize,
}

impl Tape {
    pub fn new(config: TapeConfig) -> Result<Self> {
        config.validate()?;
        Ok(Tape {
            entries: VecDeque::with_capacity(config.capacity.min(4096)),
            next_step: 0,
            capacity: config.capacity,
            horizon: config.horizon,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Step index the next recorded entry will carry.
    pub fn next_step(&self) -> u64 {
        self.next_step
    }

    pub fn record(&mut self, entry: TapeEntry) {
        debug_assert_eq!(entry.step, self.next_step);
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.next_step = entry.step + 1;
        self.entries.push_back(entry);
    }

    /// The entry with this step, unless it was evicted.
    pub fn get(&self, step: u64) -> Option<&TapeEntry> {
        let first = self.entries.front()?.step;
        let idx = usize::try_from(step.checked_sub(first)?).ok()?;
        self.entries.get(idx)
    }

    pub fn latest(&self) -> Option<&TapeEntry> {
        self.entries.back()
    }

    pub fn iter(&self) -> impl Iterator<Item = &TapeEntry> {
        self.entries.iter()
    }
}

/// Per-PU gradients from one backprop walk.
#[derive(Debug, Clone, Default)]
pub struct Backprop {
    pub grads: BTreeMap<PuId, ParamGrads>,
    /// Steps of the entries whose backward pass ran, in visit order.
    pub visited: Vec<u64>,
    pub max_depth: usize,
    /// PUs reached through at least one exploratory execution.
    pub exploratory: BTreeSet<PuId>,
    /// Entries skipped because they were evicted or their PU was removed.
    pub inert: usize,
}

impl Backprop {
    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

/// Walk backwards from the writers of `node`'s current value. `grad` is laid
/// out like the node's value (entries concatenated for accumulators). Depth 1
/// is the node's own writer; nothing deeper than `horizon` is visited.
pub fn backprop_from_node(graph: &Graph, node: NodeId, grad: &[f64], horizon: usize) -> Result<Backprop> {
    let n = graph.node(node)?;
    if grad.len() != n.flat_len() {
        return Err(Error::Shape { expected: n.flat_len(), actual: grad.len() });
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("node gradient"));
    }
    let mut out = Backprop::default();
    let len = n.len();
    for (i, writer) in n.writers().into_iter().enumerate() {
        if let Some(w) = writer {
            walk(graph, node, w, &grad[i * len..(i + 1) * len], 1, horizon, &mut out)?;
        }
    }
    Ok(out)
}

fn walk(graph: &Graph, node: NodeId, writer: WriteRef, grad: &[f64], depth: usize, horizon: usize, out: &mut Backprop) -> Result<()> {
    if depth > horizon {
        return Ok(());
    }
    let Some(entry) = graph.tape().get(writer.step) else {
        out.inert += 1;
        return Ok(());
    };
    let Ok(pu) = graph.pu(entry.pu) else {
        out.inert += 1;
        return Ok(());
    };
    let Some((_, range)) = entry.outputs.iter().find(|(n, _)| *n == node) else {
        return Err(Error::StaleTrace(format!("step {} did not write {node}", entry.step)));
    };
    let batches: Vec<usize> = match writer.batch {
        Some(b) => vec![b],
        None => (0..entry.traces.len()).collect(),
    };
    if batches.is_empty() {
        return Ok(());
    }
    let weight = if writer.batch.is_some() { 1.0 } else { 1.0 / batches.len() as f64 };
    let mut out_grad = vec![0.0; pu.net.output_dim()];
    for (o, g) in out_grad[range.clone()].iter_mut().zip(grad) {
        *o = g * weight;
    }
    out.visited.push(entry.step);
    out.max_depth = out.max_depth.max(depth);
    if entry.exploratory {
        out.exploratory.insert(entry.pu);
    }
    for b in batches {
        let recomputed;
        let trace = match entry.traces.get(b) {
            Some(t) if pu.net.check_trace(t).is_ok() => t,
            _ => {
                // Parameters moved since the execution: replay the forward pass
                // on the stored inputs with the current weights.
                match pu.net.forward(&entry.input_vector(b)) {
                    Ok((_, t)) => {
                        recomputed = t;
                        &recomputed
                    }
                    Err(_) => {
                        out.inert += 1;
                        continue;
                    }
                }
            }
        };
        let acc = out.grads.entry(entry.pu).or_insert_with(|| ParamGrads::zeros_like(&pu.net));
        let input_grad = pu.net.backward_accumulate(trace, &out_grad, acc)?;
        for (pos, slice) in pu.input_slices().iter().enumerate() {
            if let Some(up) = entry.writer(pos, b) {
                walk(graph, entry.inputs[pos].node, up, &input_grad[slice.clone()], depth + 1, horizon, out)?;
            }
        }
    }
    Ok(())
}

/// Rescale each PU's total gradient. Zero gradients stay zero.
pub fn normalize_route_grads(grads: &mut BTreeMap<PuId, ParamGrads>, policy: RouteNorm) {
    for g in grads.values_mut() {
        let norm = g.norm();
        match policy {
            RouteNorm::None => {}
            RouteNorm::PerPuClip { max_norm } => {
                if norm > max_norm {
                    g.scale(max_norm / norm);
                }
            }
            RouteNorm::PerPuUnitNorm => {
                if norm > 0.0 {
                    g.scale(1.0 / norm);
                }
            }
        }
    }
}

/// Multiply each PU's gradient by its scale; PUs without an entry keep scale 1.
pub fn interference_guard(grads: &mut BTreeMap<PuId, ParamGrads>, scale: &BTreeMap<PuId, f64>) {
    for (pu, g) in grads.iter_mut() {
        if let Some(s) = scale.get(pu) {
            g.scale(*s);
        }
    }
}
