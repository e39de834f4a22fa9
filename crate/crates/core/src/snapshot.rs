//! Point-in-time documents describing a network, and restoring node state from them.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{ActionId, EnvId, NodeId, NodeKind};
use crate::network::InteractionNetwork;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSnapshot {
    pub id: NodeId,
    pub name: String,
    pub kind: NodeKind,
    /// One value for a slot, one per entry for an accumulator.
    pub values: Vec<Vec<f64>>,
    pub summary: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionValue {
    pub action: ActionId,
    pub q: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSnapshot {
    pub id: EnvId,
    pub name: String,
    pub status: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub iteration: u64,
    pub nodes: Vec<NodeSnapshot>,
    pub catalog: Vec<ActionId>,
    pub last_action: Option<ActionId>,
    pub history: Vec<Option<ActionId>>,
    pub last_greedy: bool,
    pub task_steps: u64,
    pub q_values: Vec<ActionValue>,
    /// Parameter digest per PU, keyed by PU id ("pu0", ...).
    pub checksums: BTreeMap<String, String>,
    pub environments: Vec<EnvSnapshot>,
}

impl Snapshot {
    pub fn capture(net: &InteractionNetwork) -> Result<Self> {
        let graph = net.graph();
        let nodes = graph
            .nodes()
            .map(|(id, n)| NodeSnapshot {
                id,
                name: n.name().to_string(),
                kind: n.kind(),
                values: n.entries().iter().map(|t| t.as_slice().to_vec()).collect(),
                summary: n.summary(),
            })
            .collect();
        let state = net.assemble_state();
        let q_values = net.cu().q_values(&state)?.into_iter().map(|(action, q)| ActionValue { action, q }).collect();
        let checksums = graph.pus().map(|(id, pu)| (id.to_string(), pu.checksum())).collect();
        let environments = net
            .envs()
            .map(|(id, e)| EnvSnapshot { id, name: e.name().to_string(), status: e.status() })
            .collect();
        let (history, last_greedy, task_steps) = net.runtime_state();
        Ok(Snapshot {
            iteration: net.iteration(),
            nodes,
            catalog: net.catalog(),
            last_action: net.last_action(),
            history,
            last_greedy,
            task_steps,
            q_values,
            checksums,
            environments,
        })
    }

    /// Put node values and loop counters back. Restored values count as
    /// external writes, so they carry no gradient provenance.
    pub fn restore(&self, net: &mut InteractionNetwork) -> Result<()> {
        let ids: Vec<NodeId> = net.graph().nodes().map(|(id, _)| id).collect();
        let snap_ids: Vec<NodeId> = self.nodes.iter().map(|n| n.id).collect();
        if ids != snap_ids {
            return Err(Error::config("snapshot nodes do not match the network"));
        }
        if self.history.len() != net.cu().config().history_window {
            return Err(Error::config("snapshot history window does not match the network"));
        }
        let graph = net.graph_mut();
        for n in &self.nodes {
            match n.kind {
                NodeKind::Slot => {
                    let v = n.values.first().ok_or_else(|| Error::config(format!("slot {} has no value", n.id)))?;
                    graph.write_node(n.id, Tensor::vector(v.clone())?)?;
                }
                NodeKind::Accumulator => {
                    graph.clear_accumulator(n.id)?;
                    for v in &n.values {
                        graph.write_node(n.id, Tensor::vector(v.clone())?)?;
                    }
                }
            }
        }
        graph.take_writes();
        net.restore_runtime(self.iteration, self.history.clone(), self.last_greedy, self.task_steps);
        Ok(())
    }

    pub fn file_name(&self) -> String {
        format!("snapshot_{}.json", self.iteration)
    }

    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(self.file_name());
        std::fs::write(&path, serde_json::to_string_pretty(self)?)?;
        Ok(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}
