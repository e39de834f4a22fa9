//! Structural state of an Interaction Network: nodes, processing units and the
//! provenance tape their executions are recorded on.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::FeedForwardNet;
use crate::optim::{Optimizer, OptimizerConfig};
use crate::tape::{InputSnapshot, Tape, TapeConfig, TapeEntry};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PuId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EnvId(pub usize);

/// One entry of the control unit's action catalog. Ordering puts all PU
/// actions before environment actions; ties in Q are broken toward the lowest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionId {
    Pu(PuId),
    Env(EnvId, usize),
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

impl fmt::Display for PuId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "pu{}", self.0)
    }
}

impl fmt::Display for EnvId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "env{}", self.0)
    }
}

impl fmt::Display for ActionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ActionId::Pu(p) => write!(f, "{p}"),
            ActionId::Env(e, i) => write!(f, "{e}.{i}"),
        }
    }
}

/// Which output of which tape entry produced a node value. `batch` is set when
/// the value is one element of a batched execution; `None` means the whole
/// (possibly mean-reduced) output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WriteRef {
    pub step: u64,
    pub batch: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Slot,
    Accumulator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub name: String,
    pub kind: NodeKind,
    /// Length of the slot value, or of each accumulator entry.
    pub len: usize,
    /// Number of leading components the control unit sees; `None` hides the node.
    pub summary_len: Option<usize>,
}

impl NodeSpec {
    pub fn slot(name: &str, len: usize) -> Self {
        NodeSpec { name: name.to_string(), kind: NodeKind::Slot, len, summary_len: None }
    }

    pub fn accumulator(name: &str, len: usize) -> Self {
        NodeSpec { name: name.to_string(), kind: NodeKind::Accumulator, len, summary_len: None }
    }

    pub fn visible(mut self, k: usize) -> Self {
        self.summary_len = Some(k);
        self
    }
}

#[derive(Debug, Clone)]
enum NodeValue {
    Slot { value: Tensor, writer: Option<WriteRef> },
    Accumulator { entries: Vec<(Tensor, Option<WriteRef>)> },
}

#[derive(Debug, Clone)]
pub struct Node {
    spec: NodeSpec,
    value: NodeValue,
}

impl Node {
    fn new(spec: NodeSpec) -> Self {
        let value = match spec.kind {
            NodeKind::Slot => NodeValue::Slot { value: Tensor::zeros(spec.len), writer: None },
            NodeKind::Accumulator => NodeValue::Accumulator { entries: Vec::new() },
        };
        Node { spec, value }
    }

    pub fn spec(&self) -> &NodeSpec {
        &self.spec
    }

    pub fn name(&self) -> &str {
        &self.spec.name
    }

    pub fn kind(&self) -> NodeKind {
        self.spec.kind
    }

    pub fn len(&self) -> usize {
        self.spec.len
    }

    pub fn is_empty(&self) -> bool {
        match &self.value {
            NodeValue::Slot { .. } => false,
            NodeValue::Accumulator { entries } => entries.is_empty(),
        }
    }

    /// Slot value; `None` for accumulators.
    pub fn value(&self) -> Option<&Tensor> {
        match &self.value {
            NodeValue::Slot { value, .. } => Some(value),
            NodeValue::Accumulator { .. } => None,
        }
    }

    /// Accumulator entries in insertion order; a slot yields its single value.
    pub fn entries(&self) -> Vec<&Tensor> {
        match &self.value {
            NodeValue::Slot { value, .. } => vec![value],
            NodeValue::Accumulator { entries } => entries.iter().map(|(t, _)| t).collect(),
        }
    }

    pub fn entry_count(&self) -> usize {
        match &self.value {
            NodeValue::Slot { .. } => 1,
            NodeValue::Accumulator { entries } => entries.len(),
        }
    }

    pub fn last_writer(&self) -> Option<WriteRef> {
        match &self.value {
            NodeValue::Slot { writer, .. } => *writer,
            NodeValue::Accumulator { entries } => entries.last().and_then(|(_, w)| *w),
        }
    }

    pub fn writers(&self) -> Vec<Option<WriteRef>> {
        match &self.value {
            NodeValue::Slot { writer, .. } => vec![*writer],
            NodeValue::Accumulator { entries } => entries.iter().map(|(_, w)| *w).collect(),
        }
    }

    /// Length of the flattened value a gradient for this node must have.
    pub fn flat_len(&self) -> usize {
        self.spec.len * self.entry_count()
    }

    pub fn summary_len(&self) -> Option<usize> {
        match (self.spec.kind, self.spec.summary_len) {
            (_, None) => None,
            (NodeKind::Slot, Some(k)) => Some(k),
            (NodeKind::Accumulator, Some(_)) => Some(2),
        }
    }

    /// The CU-visible projection: the first `k` components of a slot, or
    /// `(count, mean of first components)` for an accumulator. Hidden nodes
    /// return an empty vector.
    pub fn summary(&self) -> Vec<f64> {
        let Some(k) = self.spec.summary_len else {
            return Vec::new();
        };
        match &self.value {
            NodeValue::Slot { value, .. } => value.as_slice()[..k].to_vec(),
            NodeValue::Accumulator { entries } => {
                if entries.is_empty() {
                    vec![0.0, 0.0]
                } else {
                    let n = entries.len() as f64;
                    let mean = entries.iter().map(|(t, _)| t.as_slice()[0]).sum::<f64>() / n;
                    vec![n, mean]
                }
            }
        }
    }
}

/// How a batched execution (one input is an accumulator) writes its outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchOutput {
    /// Slot outputs get the batch mean; accumulator outputs get one entry per batch element.
    #[default]
    AppendEntries,
    /// Every output gets the batch mean.
    MeanReduce,
}

#[derive(Debug, Clone)]
pub struct PuSpec {
    pub name: String,
    pub net: FeedForwardNet,
    pub inputs: Vec<NodeId>,
    pub outputs: Vec<NodeId>,
    pub optimizer: OptimizerConfig,
    pub batch_output: BatchOutput,
}

impl PuSpec {
    pub fn new(name: &str, net: FeedForwardNet, inputs: Vec<NodeId>, outputs: Vec<NodeId>, optimizer: OptimizerConfig) -> Self {
        PuSpec { name: name.to_string(), net, inputs, outputs, optimizer, batch_output: BatchOutput::default() }
    }
}

#[derive(Debug, Clone)]
pub struct ProcessingUnit {
    pub id: PuId,
    pub name: String,
    pub net: FeedForwardNet,
    pub inputs: Vec<NodeId>,
    pub outputs: Vec<NodeId>,
    pub optimizer: Optimizer,
    pub batch_output: BatchOutput,
    output_slices: Vec<Range<usize>>,
    input_slices: Vec<Range<usize>>,
}

impl ProcessingUnit {
    pub fn output_slice(&self, node: NodeId) -> Option<Range<usize>> {
        self.outputs.iter().position(|&n| n == node).map(|i| self.output_slices[i].clone())
    }

    pub fn input_slices(&self) -> &[Range<usize>] {
        &self.input_slices
    }

    /// Hex digest of all parameters; changes iff a parameter bit changes.
    pub fn checksum(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for p in self.net.params() {
            h.update(p.to_bits().to_le_bytes());
        }
        hex::encode(&h.finalize()[..8])
    }
}

/// Result of one PU execution.
#[derive(Debug, Clone)]
pub struct Execution {
    pub step: u64,
    pub written: Vec<NodeId>,
}

#[derive(Debug, Clone)]
pub struct Graph {
    nodes: BTreeMap<NodeId, Node>,
    pus: BTreeMap<PuId, ProcessingUnit>,
    tape: Tape,
    next_node: usize,
    next_pu: usize,
    pending_writes: Vec<NodeId>,
}

impl Graph {
    pub fn new(tape: TapeConfig) -> Result<Self> {
        Ok(Graph {
            nodes: BTreeMap::new(),
            pus: BTreeMap::new(),
            tape: Tape::new(tape)?,
            next_node: 0,
            next_pu: 0,
            pending_writes: Vec::new(),
        })
    }

    pub fn add_node(&mut self, spec: NodeSpec) -> Result<NodeId> {
        if spec.len == 0 {
            return Err(Error::config(format!("node {} needs a positive length", spec.name)));
        }
        if let (NodeKind::Slot, Some(k)) = (spec.kind, spec.summary_len) {
            if k == 0 || k > spec.len {
                return Err(Error::config(format!("summary length {k} out of range for node {}", spec.name)));
            }
        }
        let id = NodeId(self.next_node);
        self.next_node += 1;
        self.nodes.insert(id, Node::new(spec));
        Ok(id)
    }

    /// Removes a node no processing unit refers to.
    pub fn remove_node(&mut self, id: NodeId) -> Result<()> {
        if !self.nodes.contains_key(&id) {
            return Err(Error::UnknownNode(id));
        }
        if let Some(pu) = self.pus.values().find(|p| p.inputs.contains(&id) || p.outputs.contains(&id)) {
            return Err(Error::Dangling(format!("{id} is still used by {}", pu.id)));
        }
        self.nodes.remove(&id);
        Ok(())
    }

    pub fn add_pu(&mut self, spec: PuSpec) -> Result<PuId> {
        spec.optimizer.validate()?;
        let mut seen = std::collections::BTreeSet::new();
        if !spec.inputs.iter().all(|n| seen.insert(*n)) {
            return Err(Error::config(format!("{} lists an input node twice", spec.name)));
        }
        seen.clear();
        if !spec.outputs.iter().all(|n| seen.insert(*n)) {
            return Err(Error::config(format!("{} lists an output node twice", spec.name)));
        }
        if spec.inputs.is_empty() || spec.outputs.is_empty() {
            return Err(Error::config(format!("{} needs at least one input and one output", spec.name)));
        }
        let mut input_slices = Vec::new();
        let mut offset = 0;
        let mut accumulators = 0;
        for n in &spec.inputs {
            let node = self.nodes.get(n).ok_or(Error::UnknownNode(*n))?;
            accumulators += usize::from(node.kind() == NodeKind::Accumulator);
            input_slices.push(offset..offset + node.len());
            offset += node.len();
        }
        if accumulators > 1 {
            return Err(Error::config(format!("{} reads more than one accumulator", spec.name)));
        }
        if offset != spec.net.input_dim() {
            return Err(Error::Shape { expected: offset, actual: spec.net.input_dim() });
        }
        let mut output_slices = Vec::new();
        offset = 0;
        for n in &spec.outputs {
            let node = self.nodes.get(n).ok_or(Error::UnknownNode(*n))?;
            output_slices.push(offset..offset + node.len());
            offset += node.len();
        }
        if offset != spec.net.output_dim() {
            return Err(Error::Shape { expected: offset, actual: spec.net.output_dim() });
        }
        let id = PuId(self.next_pu);
        self.next_pu += 1;
        self.pus.insert(
            id,
            ProcessingUnit {
                id,
                name: spec.name,
                net: spec.net,
                inputs: spec.inputs,
                outputs: spec.outputs,
                optimizer: Optimizer::new(spec.optimizer),
                batch_output: spec.batch_output,
                output_slices,
                input_slices,
            },
        );
        Ok(id)
    }

    /// Removes a PU. Tape entries that reference it become inert.
    pub fn remove_pu(&mut self, id: PuId) -> Result<ProcessingUnit> {
        self.pus.remove(&id).ok_or(Error::UnknownPu(id))
    }

    pub fn node(&self, id: NodeId) -> Result<&Node> {
        self.nodes.get(&id).ok_or(Error::UnknownNode(id))
    }

    pub fn nodes(&self) -> impl Iterator<Item = (NodeId, &Node)> {
        self.nodes.iter().map(|(k, v)| (*k, v))
    }

    pub fn pu(&self, id: PuId) -> Result<&ProcessingUnit> {
        self.pus.get(&id).ok_or(Error::UnknownPu(id))
    }

    pub fn pu_mut(&mut self, id: PuId) -> Result<&mut ProcessingUnit> {
        self.pus.get_mut(&id).ok_or(Error::UnknownPu(id))
    }

    pub fn pus(&self) -> impl Iterator<Item = (PuId, &ProcessingUnit)> {
        self.pus.iter().map(|(k, v)| (*k, v))
    }

    pub fn pu_ids(&self) -> Vec<PuId> {
        self.pus.keys().copied().collect()
    }

    pub fn tape(&self) -> &Tape {
        &self.tape
    }

    /// Slot value as a slice.
    pub fn read(&self, id: NodeId) -> Result<&[f64]> {
        let node = self.node(id)?;
        node.value().map(Tensor::as_slice).ok_or(Error::WrongNodeKind(id))
    }

    fn check_len(node: &Node, tensor: &Tensor) -> Result<()> {
        if tensor.len() != node.len() {
            return Err(Error::Shape { expected: node.len(), actual: tensor.len() });
        }
        Ok(())
    }

    /// Write from outside the network. Slots are replaced, accumulators get a
    /// new entry; the gradient chain is cut at this value.
    pub fn write_node(&mut self, id: NodeId, tensor: Tensor) -> Result<()> {
        self.write_with_provenance(id, tensor, None)
    }

    pub(crate) fn write_with_provenance(&mut self, id: NodeId, tensor: Tensor, writer: Option<WriteRef>) -> Result<()> {
        let node = self.nodes.get_mut(&id).ok_or(Error::UnknownNode(id))?;
        Self::check_len(node, &tensor)?;
        match &mut node.value {
            NodeValue::Slot { value, writer: w } => {
                *value = tensor;
                *w = writer;
            }
            NodeValue::Accumulator { entries } => entries.push((tensor, writer)),
        }
        self.pending_writes.push(id);
        Ok(())
    }

    /// Replace a slot value but keep its provenance, so gradients pass through
    /// the replacement unchanged.
    pub fn overwrite_keep_provenance(&mut self, id: NodeId, tensor: Tensor) -> Result<()> {
        let node = self.nodes.get_mut(&id).ok_or(Error::UnknownNode(id))?;
        Self::check_len(node, &tensor)?;
        match &mut node.value {
            NodeValue::Slot { value, .. } => {
                *value = tensor;
                Ok(())
            }
            NodeValue::Accumulator { .. } => Err(Error::WrongNodeKind(id)),
        }
    }

    pub fn clear_accumulator(&mut self, id: NodeId) -> Result<()> {
        let node = self.nodes.get_mut(&id).ok_or(Error::UnknownNode(id))?;
        match &mut node.value {
            NodeValue::Accumulator { entries } => {
                entries.clear();
                Ok(())
            }
            NodeValue::Slot { .. } => Err(Error::WrongNodeKind(id)),
        }
    }

    /// Nodes written since the last call, in write order, without duplicates.
    pub fn take_writes(&mut self) -> Vec<NodeId> {
        let mut out: Vec<NodeId> = Vec::new();
        for n in self.pending_writes.drain(..) {
            if !out.contains(&n) {
                out.push(n);
            }
        }
        out
    }

    /// Run a PU on the current values of its input nodes, write its outputs and
    /// record the execution on the tape.
    pub fn execute_pu(&mut self, id: PuId, exploratory: bool) -> Result<Execution> {
        let pu = self.pus.get(&id).ok_or(Error::UnknownPu(id))?;
        let mut snapshots = Vec::with_capacity(pu.inputs.len());
        let mut batch_input = None;
        for (pos, n) in pu.inputs.iter().enumerate() {
            let node = self.nodes.get(n).ok_or(Error::UnknownNode(*n))?;
            if node.kind() == NodeKind::Accumulator {
                batch_input = Some(pos);
            }
            snapshots.push(InputSnapshot {
                node: *n,
                values: node.entries().into_iter().map(|t| t.as_slice().to_vec()).collect(),
                writers: node.writers(),
            });
        }
        let batch = batch_input.map_or(1, |pos| snapshots[pos].values.len());
        let out_dim = pu.net.output_dim();
        let mut traces = Vec::with_capacity(batch);
        let mut outputs = Vec::with_capacity(batch);
        let mut x = Vec::with_capacity(pu.net.input_dim());
        for b in 0..batch {
            x.clear();
            for (pos, s) in snapshots.iter().enumerate() {
                let v = if Some(pos) == batch_input { &s.values[b] } else { &s.values[0] };
                x.extend_from_slice(v);
            }
            let (y, trace) = pu.net.forward(&x)?;
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("processing unit output"));
            }
            outputs.push(y);
            traces.push(trace);
        }
        // An empty batch produces a zero output that depends on no parameters.
        let mean: Vec<f64> = if batch == 1 {
            outputs[0].clone()
        } else if batch == 0 {
            vec![0.0; out_dim]
        } else {
            (0..out_dim).map(|i| outputs.iter().map(|o| o[i]).sum::<f64>() / batch as f64).collect()
        };

        let step = self.tape.next_step();
        let mut writes: Vec<(NodeId, Tensor, Option<WriteRef>)> = Vec::new();
        let batched = batch_input.is_some() && batch > 0;
        for (n, range) in pu.outputs.iter().zip(&pu.output_slices) {
            let node = &self.nodes[n];
            let per_entry = batched && node.kind() == NodeKind::Accumulator && pu.batch_output == BatchOutput::AppendEntries;
            if per_entry {
                for (b, y) in outputs.iter().enumerate() {
                    writes.push((*n, Tensor::vector(y[range.clone()].to_vec())?, Some(WriteRef { step, batch: Some(b) })));
                }
            } else {
                writes.push((*n, Tensor::vector(mean[range.clone()].to_vec())?, Some(WriteRef { step, batch: None })));
            }
        }
        let entry = TapeEntry {
            step,
            pu: id,
            inputs: snapshots,
            batch_input,
            traces,
            outputs: pu.outputs.iter().copied().zip(pu.output_slices.iter().cloned()).collect(),
            exploratory,
        };
        let written: Vec<NodeId> = pu.outputs.clone();
        for (n, t, w) in writes {
            self.write_with_provenance(n, t, w)?;
        }
        self.tape.record(entry);
        Ok(Execution { step, written })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Dense};
    use crate::tape::TapeConfig;

    fn linear(w: Vec<f64>, b: Vec<f64>, in_dim: usize) -> FeedForwardNet {
        FeedForwardNet::from_layers(vec![Dense::new(w, b, in_dim, Activation::Identity).unwrap()]).unwrap()
    }

    fn graph() -> Graph {
        Graph::new(TapeConfig::default()).unwrap()
    }

    #[test]
    fn identity_pu_copies_and_records() {
        let mut g = graph();
        let n0 = g.add_node(NodeSpec::slot("n0", 2)).unwrap();
        let n1 = g.add_node(NodeSpec::slot("n1", 2)).unwrap();
        let pu = g
            .add_pu(PuSpec::new("id", linear(vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0], 2), vec![n0], vec![n1], OptimizerConfig::sgd(0.1)))
            .unwrap();
        g.write_node(n0, Tensor::vector(vec![1.0, 2.0]).unwrap()).unwrap();
        let before = g.tape().len();
        g.execute_pu(pu, false).unwrap();
        assert_eq!(g.read(n1).unwrap(), &[1.0, 2.0]);
        assert_eq!(g.tape().len(), before + 1);
        assert_eq!(g.node(n1).unwrap().last_writer().unwrap().step, 0);
    }

    #[test]
    fn uninitialized_slot_reads_zero() {
        let mut g = graph();
        let n0 = g.add_node(NodeSpec::slot("n0", 3)).unwrap();
        assert_eq!(g.read(n0).unwrap(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn recurrent_layout_snapshots_old_memory() {
        let mut g = graph();
        let n0 = g.add_node(NodeSpec::slot("x", 1)).unwrap();
        let n2 = g.add_node(NodeSpec::slot("mem", 1)).unwrap();
        // mem' = x + 0.5 * mem
        let pu = g.add_pu(PuSpec::new("rnn", linear(vec![1.0, 0.5], vec![0.0], 2), vec![n0, n2], vec![n2], OptimizerConfig::sgd(0.1))).unwrap();
        g.write_node(n0, Tensor::scalar(1.0).unwrap()).unwrap();
        g.write_node(n2, Tensor::scalar(4.0).unwrap()).unwrap();
        g.execute_pu(pu, false).unwrap();
        assert_eq!(g.read(n2).unwrap(), &[3.0]);
        let entry = g.tape().latest().unwrap();
        assert_eq!(entry.inputs[1].values[0], vec![4.0]);
    }

    #[test]
    fn execution_writes_only_declared_outputs() {
        let mut g = graph();
        let a = g.add_node(NodeSpec::slot("a", 1)).unwrap();
        let b = g.add_node(NodeSpec::slot("b", 1)).unwrap();
        let c = g.add_node(NodeSpec::slot("c", 1)).unwrap();
        g.write_node(c, Tensor::scalar(7.0).unwrap()).unwrap();
        g.take_writes();
        let pu = g.add_pu(PuSpec::new("p", linear(vec![3.0], vec![1.0], 1), vec![a], vec![b], OptimizerConfig::sgd(0.1))).unwrap();
        let exec = g.execute_pu(pu, false).unwrap();
        assert_eq!(exec.written, vec![b]);
        assert_eq!(g.take_writes(), vec![b]);
        assert_eq!(g.read(c).unwrap(), &[7.0]);
        assert_eq!(g.read(b).unwrap(), &[1.0]);
    }

    #[test]
    fn external_write_clears_provenance() {
        let mut g = graph();
        let a = g.add_node(NodeSpec::slot("a", 1)).unwrap();
        let b = g.add_node(NodeSpec::slot("b", 1)).unwrap();
        let pu = g.add_pu(PuSpec::new("p", linear(vec![1.0], vec![0.0], 1), vec![a], vec![b], OptimizerConfig::sgd(0.1))).unwrap();
        g.execute_pu(pu, false).unwrap();
        assert!(g.node(b).unwrap().last_writer().is_some());
        let t = Tensor::scalar(5.0).unwrap();
        g.write_node(b, t.clone()).unwrap();
        assert_eq!(g.node(b).unwrap().value(), Some(&t));
        assert!(g.node(b).unwrap().last_writer().is_none());
        assert!(matches!(g.write_node(b, Tensor::zeros(2)), Err(Error::Shape { .. })));
    }

    #[test]
    fn accumulator_append_clear_and_summary() {
        let mut g = graph();
        let acc = g.add_node(NodeSpec::accumulator("acc", 2).visible(1)).unwrap();
        assert_eq!(g.node(acc).unwrap().summary(), vec![0.0, 0.0]);
        for i in 0..3 {
            g.write_node(acc, Tensor::vector(vec![i as f64, -1.0]).unwrap()).unwrap();
        }
        let node = g.node(acc).unwrap();
        assert_eq!(node.entry_count(), 3);
        let firsts: Vec<f64> = node.entries().iter().map(|t| t.as_slice()[0]).collect();
        assert_eq!(firsts, vec![0.0, 1.0, 2.0]);
        assert_eq!(node.summary(), vec![3.0, 1.0]);
        g.clear_accumulator(acc).unwrap();
        assert_eq!(g.node(acc).unwrap().entry_count(), 0);
        g.clear_accumulator(acc).unwrap();
        let slot = g.add_node(NodeSpec::slot("s", 1)).unwrap();
        assert!(matches!(g.clear_accumulator(slot), Err(Error::WrongNodeKind(_))));
    }

    #[test]
    fn slot_summary_truncates() {
        let mut g = graph();
        let n = g.add_node(NodeSpec::slot("n", 3).visible(1)).unwrap();
        g.write_node(n, Tensor::vector(vec![5.0, 6.0, 7.0]).unwrap()).unwrap();
        assert_eq!(g.node(n).unwrap().summary(), vec![5.0]);
        let full = g.add_node(NodeSpec::slot("f", 3).visible(3)).unwrap();
        g.write_node(full, Tensor::vector(vec![5.0, 6.0, 7.0]).unwrap()).unwrap();
        assert_eq!(g.node(full).unwrap().summary(), vec![5.0, 6.0, 7.0]);
        assert!(g.add_node(NodeSpec::slot("bad", 2).visible(3)).is_err());
    }

    #[test]
    fn empty_accumulator_input_produces_zeros() {
        let mut g = graph();
        let acc = g.add_node(NodeSpec::accumulator("acc", 1)).unwrap();
        let out = g.add_node(NodeSpec::slot("out", 1)).unwrap();
        let pu = g.add_pu(PuSpec::new("p", linear(vec![2.0], vec![3.0], 1), vec![acc], vec![out], OptimizerConfig::sgd(0.1))).unwrap();
        g.write_node(acc, Tensor::scalar(1.0).unwrap()).unwrap();
        g.clear_accumulator(acc).unwrap();
        g.execute_pu(pu, false).unwrap();
        assert_eq!(g.read(out).unwrap(), &[0.0]);
    }

    #[test]
    fn batched_execution_mean_reduces_slots_and_appends_entries() {
        let mut g = graph();
        let acc = g.add_node(NodeSpec::accumulator("acc", 1)).unwrap();
        let ctx = g.add_node(NodeSpec::slot("ctx", 1)).unwrap();
        let slot_out = g.add_node(NodeSpec::slot("mean", 1)).unwrap();
        let acc_out = g.add_node(NodeSpec::accumulator("each", 1)).unwrap();
        // y = [x + c, 2x]
        let net = linear(vec![1.0, 1.0, 2.0, 0.0], vec![0.0, 0.0], 2);
        let pu = g.add_pu(PuSpec::new("p", net, vec![acc, ctx], vec![slot_out, acc_out], OptimizerConfig::sgd(0.1))).unwrap();
        g.write_node(ctx, Tensor::scalar(10.0).unwrap()).unwrap();
        for x in [1.0, 2.0, 3.0] {
            g.write_node(acc, Tensor::scalar(x).unwrap()).unwrap();
        }
        g.execute_pu(pu, false).unwrap();
        assert_eq!(g.read(slot_out).unwrap(), &[12.0]);
        let each: Vec<f64> = g.node(acc_out).unwrap().entries().iter().map(|t| t.as_slice()[0]).collect();
        assert_eq!(each, vec![2.0, 4.0, 6.0]);
    }

    #[test]
    fn pu_validation() {
        let mut g = graph();
        let a = g.add_node(NodeSpec::slot("a", 2)).unwrap();
        let b = g.add_node(NodeSpec::slot("b", 1)).unwrap();
        let bad_dim = PuSpec::new("p", linear(vec![1.0], vec![0.0], 1), vec![a], vec![b], OptimizerConfig::sgd(0.1));
        assert!(matches!(g.add_pu(bad_dim), Err(Error::Shape { .. })));
        let dup = PuSpec::new("p", linear(vec![1.0; 4], vec![0.0], 4), vec![a, a], vec![b], OptimizerConfig::sgd(0.1));
        assert!(g.add_pu(dup).is_err());
        let missing = PuSpec::new("p", linear(vec![1.0], vec![0.0], 1), vec![NodeId(99)], vec![b], OptimizerConfig::sgd(0.1));
        assert!(matches!(g.add_pu(missing), Err(Error::UnknownNode(_))));
        assert!(matches!(g.execute_pu(PuId(42), false), Err(Error::UnknownPu(_))));
    }

    #[test]
    fn node_removal_requires_no_references() {
        let mut g = graph();
        let a = g.add_node(NodeSpec::slot("a", 1)).unwrap();
        let b = g.add_node(NodeSpec::slot("b", 1)).unwrap();
        let pu = g.add_pu(PuSpec::new("p", linear(vec![1.0], vec![0.0], 1), vec![a], vec![b], OptimizerConfig::sgd(0.1))).unwrap();
        assert!(matches!(g.remove_node(a), Err(Error::Dangling(_))));
        g.remove_pu(pu).unwrap();
        g.remove_node(a).unwrap();
        assert!(g.node(a).is_err());
    }

    #[test]
    fn checksum_tracks_parameters() {
        let mut g = graph();
        let a = g.add_node(NodeSpec::slot("a", 1)).unwrap();
        let pu = g.add_pu(PuSpec::new("p", linear(vec![1.0], vec![0.0], 1), vec![a], vec![a], OptimizerConfig::sgd(0.1))).unwrap();
        let c0 = g.pu(pu).unwrap().checksum();
        assert_eq!(c0, g.pu(pu).unwrap().checksum());
        g.pu_mut(pu).unwrap().net.params_mut().for_each(|p| *p += 1e-12);
        assert_ne!(c0, g.pu(pu).unwrap().checksum());
    }
}
