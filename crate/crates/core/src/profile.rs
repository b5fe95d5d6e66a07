//! Compute and transmission cost models.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{ModelGraph, NodeId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProfileError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("node {0} has no cost entry")]
    MissingNode(NodeId),
    #[error("unknown edge ({0}, {1})")]
    UnknownEdge(NodeId, NodeId),
    #[error("negative or non-finite coefficient on {0}")]
    InvalidCoefficient(String),
}

/// Mobile device (`M`) or GPU server (`R`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Device {
    Mobile,
    Server,
}

impl Device {
    pub const BOTH: [Device; 2] = [Device::Mobile, Device::Server];

    pub fn other(self) -> Device {
        match self {
            Device::Mobile => Device::Server,
            Device::Server => Device::Mobile,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Affine batch cost: `overhead_s + per_unit_s * count` for a non-empty batch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DeviceCost {
    pub overhead_s: f64,
    pub per_unit_s: f64,
}

impl DeviceCost {
    pub fn new(overhead_s: f64, per_unit_s: f64) -> Self {
        DeviceCost { overhead_s, per_unit_s }
    }

    #[inline]
    pub fn batch(&self, count: usize) -> f64 {
        if count == 0 {
            0.0
        } else {
            self.overhead_s + self.per_unit_s * count as f64
        }
    }

    fn valid(&self) -> bool {
        self.overhead_s.is_finite() && self.overhead_s >= 0.0 && self.per_unit_s.is_finite() && self.per_unit_s >= 0.0
    }
}

/// Per-node device costs and per-edge transfer volumes, indexed like the graph.
#[derive(Clone, Debug, PartialEq)]
pub struct ProfileTable {
    costs: Vec<[DeviceCost; 2]>,
    edge_bytes: Vec<f64>,
    ids: Vec<NodeId>,
}

impl ProfileTable {
    /// Profile with explicit costs for every non-virtual node; edge volumes default to the
    /// producer's `out_bytes_per_unit`.
    pub fn from_fn(g: &ModelGraph, mut cost: impl FnMut(usize, Device) -> DeviceCost) -> Self {
        let costs = (0..g.len())
            .map(|i| {
                if g.node(i).is_virtual {
                    [DeviceCost::default(); 2]
                } else {
                    [cost(i, Device::Mobile), cost(i, Device::Server)]
                }
            })
            .collect();
        let edge_bytes = g.edges().iter().map(|e| g.node(e.u).out_bytes_per_unit).collect();
        ProfileTable { costs, edge_bytes, ids: g.nodes().iter().map(|n| n.id).collect() }
    }

    pub fn cost(&self, device: Device, node: usize) -> DeviceCost {
        self.costs[node][device.index()]
    }

    pub fn set_cost(&mut self, device: Device, node: usize, cost: DeviceCost) {
        self.costs[node][device.index()] = cost;
    }

    /// Bytes per producer unit carried along edge `edge`.
    pub fn edge_bytes_per_unit(&self, edge: usize) -> f64 {
        self.edge_bytes[edge]
    }

    pub fn set_edge_bytes_per_unit(&mut self, edge: usize, bytes: f64) {
        self.edge_bytes[edge] = bytes;
    }

    /// Batched compute time of `count` units of node `node` on `device`.
    pub fn compute_time(&self, device: Device, node: usize, count: usize) -> Result<f64, ProfileError> {
        let c = self.costs.get(node).ok_or(ProfileError::UnknownNode(node as NodeId))?;
        Ok(c[device.index()].batch(count))
    }

    pub fn from_doc(g: &ModelGraph, doc: &ProfileDoc) -> Result<Self, ProfileError> {
        let mut costs: Vec<Option<[DeviceCost; 2]>> =
            g.nodes().iter().map(|n| if n.is_virtual { Some([DeviceCost::default(); 2]) } else { None }).collect();
        for n in &doc.nodes {
            let idx = g.index_of(n.id).ok_or(ProfileError::UnknownNode(n.id))?;
            if !n.m.valid() || !n.r.valid() {
                return Err(ProfileError::InvalidCoefficient(format!("node {}", n.id)));
            }
            if !g.node(idx).is_virtual {
                costs[idx] = Some([n.m, n.r]);
            }
        }
        let costs = costs
            .into_iter()
            .enumerate()
            .map(|(i, c)| c.ok_or(ProfileError::MissingNode(g.node(i).id)))
            .collect::<Result<Vec<_>, _>>()?;
        let mut edge_bytes: Vec<f64> = g.edges().iter().map(|e| g.node(e.u).out_bytes_per_unit).collect();
        for e in &doc.edges {
            let (Some(u), Some(v)) = (g.index_of(e.u), g.index_of(e.v)) else {
                return Err(ProfileError::UnknownEdge(e.u, e.v));
            };
            let k = g.edge_index(u, v).ok_or(ProfileError::UnknownEdge(e.u, e.v))?;
            if !(e.bytes_per_unit.is_finite() && e.bytes_per_unit >= 0.0) {
                return Err(ProfileError::InvalidCoefficient(format!("edge ({}, {})", e.u, e.v)));
            }
            edge_bytes[k] = e.bytes_per_unit;
        }
        Ok(ProfileTable { costs, edge_bytes, ids: g.nodes().iter().map(|n| n.id).collect() })
    }

    pub fn to_doc(&self, g: &ModelGraph) -> ProfileDoc {
        let nodes = g
            .nodes()
            .iter()
            .enumerate()
            .filter(|(_, n)| !n.is_virtual)
            .map(|(i, n)| NodeCostDoc { id: n.id, m: self.costs[i][0], r: self.costs[i][1] })
            .collect();
        let edges = g
            .edges()
            .iter()
            .enumerate()
            .map(|(k, e)| EdgeBytesDoc { u: self.ids[e.u], v: self.ids[e.v], bytes_per_unit: self.edge_bytes[k] })
            .collect();
        ProfileDoc { nodes, edges }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeCostDoc {
    pub id: NodeId,
    pub m: DeviceCost,
    pub r: DeviceCost,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeBytesDoc {
    pub u: NodeId,
    pub v: NodeId,
    pub bytes_per_unit: f64,
}

/// Profile document as stored on disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileDoc {
    pub nodes: Vec<NodeCostDoc>,
    #[serde(default)]
    pub edges: Vec<EdgeBytesDoc>,
}

impl ProfileDoc {
    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("profile document serializes")
    }
}

/// Full-duplex link between device and server.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkModel {
    pub bandwidth_bps: f64,
    pub per_message_latency: f64,
}

impl LinkModel {
    pub fn new(bandwidth_bps: f64, per_message_latency: f64) -> Self {
        LinkModel { bandwidth_bps, per_message_latency }
    }

    pub fn from_mbps(mbps: f64, per_message_latency: f64) -> Self {
        LinkModel { bandwidth_bps: mbps * 1e6, per_message_latency }
    }

    /// Seconds to move `bytes` one way; infinite when the link has no bandwidth.
    #[inline]
    pub fn tx_time(&self, bytes: f64) -> f64 {
        if bytes <= 0.0 {
            0.0
        } else if self.bandwidth_bps <= 0.0 {
            f64::INFINITY
        } else {
            self.per_message_latency + 8.0 * bytes / self.bandwidth_bps
        }
    }
}

pub fn tx_time(link: &LinkModel, bytes: f64) -> f64 {
    link.tx_time(bytes)
}

/// Parameters for [`synth_profile`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    /// Server speed relative to the device; server costs are device costs divided by this.
    pub speedup_ratio: f64,
    pub overhead_range: (f64, f64),
    pub per_unit_range: (f64, f64),
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams { speedup_ratio: 10.0, overhead_range: (1e-4, 5e-4), per_unit_range: (1e-4, 2e-3) }
    }
}

/// Seeded random profile standing in for offline profiling traces.
pub fn synth_profile(g: &ModelGraph, params: &SynthParams, seed: u64) -> ProfileTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |(lo, hi): (f64, f64)| if hi > lo { rng.gen_range(lo..hi) } else { lo };
    let device: Vec<DeviceCost> = (0..g.len())
        .map(|_| DeviceCost::new(draw(params.overhead_range), draw(params.per_unit_range)))
        .collect();
    let ratio = params.speedup_ratio;
    ProfileTable::from_fn(g, |i, d| match d {
        Device::Mobile => device[i],
        Device::Server => DeviceCost::new(device[i].overhead_s / ratio, device[i].per_unit_s / ratio),
    })
}
