//! Operator DAG, operator taxonomy and unit-range dependency arithmetic.
//!
//! Every operator output is indexed along a single unit axis. A local
//! operator can compute any contiguous sub-range of its output from a
//! contiguous sub-range of its input (the halo); a global operator has a
//! single output unit that depends on the whole input.

use std::collections::{BTreeSet, BinaryHeap, HashMap, HashSet};
use std::cmp::Reverse;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// External node identifier, as used in model, profile and plan documents.
pub type NodeId = u32;

/// Reserved id of the virtual `input` vertex.
pub const INPUT_ID: NodeId = u32::MAX - 1;
/// Reserved id of the virtual `output` vertex.
pub const OUTPUT_ID: NodeId = u32::MAX;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("cycle detected among nodes {0:?}")]
    CycleDetected(Vec<NodeId>),
    #[error("edge ({0}, {1}) references an unknown node")]
    DanglingEdge(NodeId, NodeId),
    #[error("block-wise node {0} is missing kernel/stride/padding/dilation")]
    MissingBlockParams(NodeId),
    #[error("invalid block parameters on node {0}: {1}")]
    InvalidBlockParams(NodeId, String),
    #[error("node {0} is not connected between input and output")]
    UnreachableNode(NodeId),
    #[error("unknown operator family `{0}` and no kind declared")]
    UnknownOperator(String),
    #[error("range [{lo}, {hi}) out of bounds for {units} units")]
    RangeOutOfBounds { lo: usize, hi: usize, units: usize },
    #[error("duplicate node id {0}")]
    DuplicateId(NodeId),
    #[error("node id {0} is reserved for virtual vertices")]
    ReservedId(NodeId),
    #[error("unit mismatch at {0}")]
    UnitMismatch(String),
    #[error("model has no operators")]
    EmptyModel,
    #[error("raw_input_bytes must be positive and finite")]
    InvalidInputSize,
}

/// Contiguous half-open range of unit indices `[lo, hi)`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct UnitRange {
    pub lo: usize,
    pub hi: usize,
}

impl From<[usize; 2]> for UnitRange {
    fn from(v: [usize; 2]) -> Self {
        UnitRange::new(v[0], v[1])
    }
}

impl From<UnitRange> for [usize; 2] {
    fn from(r: UnitRange) -> Self {
        [r.lo, r.hi]
    }
}

impl fmt::Debug for UnitRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{})", self.lo, self.hi)
    }
}

impl UnitRange {
    /// Builds `[lo, hi)`; empty and inverted pairs all become [`UnitRange::empty`].
    pub fn new(lo: usize, hi: usize) -> Self {
        if lo >= hi {
            UnitRange::empty()
        } else {
            UnitRange { lo, hi }
        }
    }

    pub const fn empty() -> Self {
        UnitRange { lo: 0, hi: 0 }
    }

    pub const fn full(units: usize) -> Self {
        UnitRange { lo: 0, hi: units }
    }

    pub fn len(&self) -> usize {
        self.hi - self.lo
    }

    pub fn is_empty(&self) -> bool {
        self.lo >= self.hi
    }

    pub fn within(&self, units: usize) -> bool {
        self.lo <= self.hi && self.hi <= units
    }

    pub fn contains_unit(&self, i: usize) -> bool {
        self.lo <= i && i < self.hi
    }

    /// Set inclusion; the empty range is a subset of everything.
    pub fn is_subset_of(&self, other: &UnitRange) -> bool {
        self.is_empty() || (other.lo <= self.lo && self.hi <= other.hi)
    }

    pub fn intersect(&self, other: &UnitRange) -> UnitRange {
        let lo = self.lo.max(other.lo);
        let hi = self.hi.min(other.hi);
        if lo >= hi {
            UnitRange::empty()
        } else {
            UnitRange { lo, hi }
        }
    }

    /// `self − other` as at most two disjoint pieces (left, right); either may be empty.
    pub fn difference(&self, other: &UnitRange) -> [UnitRange; 2] {
        if self.is_empty() {
            return [UnitRange::empty(), UnitRange::empty()];
        }
        let cut = self.intersect(other);
        if cut.is_empty() {
            return [*self, UnitRange::empty()];
        }
        let left = if self.lo < cut.lo { UnitRange::new(self.lo, cut.lo) } else { UnitRange::empty() };
        let right = if cut.hi < self.hi { UnitRange::new(cut.hi, self.hi) } else { UnitRange::empty() };
        [left, right]
    }

    /// Number of units in `self − other`.
    pub fn difference_len(&self, other: &UnitRange) -> usize {
        self.len() - self.intersect(other).len()
    }
}

/// Kernel/stride/padding/dilation of a block-wise operator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BlockParams {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl BlockParams {
    pub fn new(kernel: usize, stride: usize, padding: usize, dilation: usize) -> Self {
        BlockParams { kernel, stride, padding, dilation }
    }

    /// Width of one output unit's receptive field before clipping.
    pub fn span(&self) -> usize {
        self.dilation * (self.kernel - 1) + 1
    }

    /// Output length for `in_units` inputs, or `None` when no full window fits.
    pub fn out_units(&self, in_units: usize) -> Option<usize> {
        let padded = in_units + 2 * self.padding;
        if padded < self.span() {
            return None;
        }
        Some((padded - self.span()) / self.stride + 1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OperatorKind {
    ElementWise,
    BlockWise(BlockParams),
    RowWise,
    Global,
}

impl OperatorKind {
    pub fn is_global(&self) -> bool {
        matches!(self, OperatorKind::Global)
    }

    pub fn tag(&self) -> KindTag {
        match self {
            OperatorKind::ElementWise => KindTag::ElementWise,
            OperatorKind::BlockWise(_) => KindTag::BlockWise,
            OperatorKind::RowWise => KindTag::RowWise,
            OperatorKind::Global => KindTag::Global,
        }
    }
}

/// Kind as written in model documents (block parameters travel separately).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum KindTag {
    ElementWise,
    BlockWise,
    RowWise,
    Global,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OperatorNode {
    pub id: NodeId,
    pub name: String,
    pub kind: OperatorKind,
    pub in_units: usize,
    pub out_units: usize,
    pub out_bytes_per_unit: f64,
    pub is_virtual: bool,
}

impl OperatorNode {
    pub fn out_bytes(&self) -> f64 {
        self.out_units as f64 * self.out_bytes_per_unit
    }

    /// Input units needed to produce `out`.
    pub fn required_input_range(&self, out: UnitRange) -> Result<UnitRange, GraphError> {
        if !out.within(self.out_units) {
            return Err(GraphError::RangeOutOfBounds { lo: out.lo, hi: out.hi, units: self.out_units });
        }
        Ok(self.halo(out))
    }

    /// Unchecked variant of [`required_input_range`](Self::required_input_range).
    pub(crate) fn halo(&self, out: UnitRange) -> UnitRange {
        if out.is_empty() {
            return UnitRange::empty();
        }
        match self.kind {
            OperatorKind::ElementWise | OperatorKind::RowWise => out,
            OperatorKind::Global => UnitRange::full(self.in_units),
            OperatorKind::BlockWise(b) => {
                let lo = (out.lo * b.stride).saturating_sub(b.padding);
                let end = ((out.hi - 1) * b.stride + b.span()).saturating_sub(b.padding);
                UnitRange::new(lo.min(self.in_units), end.min(self.in_units))
            }
        }
    }

    /// Largest contiguous output range computable from `available` input units.
    pub fn child_cover(&self, available: UnitRange) -> UnitRange {
        let avail = available.intersect(&UnitRange::full(self.in_units));
        match self.kind {
            OperatorKind::ElementWise | OperatorKind::RowWise => avail.intersect(&UnitRange::full(self.out_units)),
            OperatorKind::Global => {
                if UnitRange::full(self.in_units).is_subset_of(&avail) {
                    UnitRange::full(self.out_units)
                } else {
                    UnitRange::empty()
                }
            }
            OperatorKind::BlockWise(b) => {
                if avail.is_empty() {
                    return UnitRange::empty();
                }
                let (s, p, span) = (b.stride as i64, b.padding as i64, b.span() as i64);
                let (a, e) = (avail.lo as i64, avail.hi as i64);
                // receptive start max(0, j·s − p) must be ≥ a
                let lo = if a == 0 { 0 } else { (a + p + s - 1).div_euclid(s) };
                // receptive end min(in, j·s − p + span) must be ≤ e
                let hi = if avail.hi >= self.in_units {
                    self.out_units as i64
                } else if e + p - span < 0 {
                    0
                } else {
                    (e + p - span).div_euclid(s) + 1
                };
                let hi = hi.min(self.out_units as i64);
                if lo >= hi {
                    UnitRange::empty()
                } else {
                    UnitRange::new(lo as usize, hi as usize)
                }
            }
        }
    }
}

/// Operator description as it appears in a model document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeDoc {
    pub id: NodeId,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<KindTag>,
    pub in_units: usize,
    pub out_units: usize,
    pub out_bytes_per_unit: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub block: Option<BlockParams>,
    /// Rows of the layer parameter matrix, for matrix operators.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub param_rows: Option<usize>,
}

/// Model-profile document: operators, edges and raw input size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelDoc {
    pub raw_input_bytes: f64,
    pub nodes: Vec<NodeDoc>,
    pub edges: Vec<[NodeId; 2]>,
}

impl ModelDoc {
    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model document serializes")
    }
}

fn operator_family(name: &str) -> String {
    let lower = name.to_ascii_lowercase();
    let head = lower.split(['_', '-', '.', ' ']).next().unwrap_or("");
    head.trim_end_matches(|c: char| c.is_ascii_digit()).to_string()
}

/// Assigns an [`OperatorKind`] from a declared kind or from the operator family name.
pub fn classify_operator(op: &NodeDoc) -> Result<OperatorKind, GraphError> {
    let block = || {
        let b = op.block.ok_or(GraphError::MissingBlockParams(op.id))?;
        if b.kernel == 0 || b.stride == 0 || b.dilation == 0 {
            return Err(GraphError::InvalidBlockParams(op.id, "kernel, stride and dilation must be >= 1".into()));
        }
        Ok(OperatorKind::BlockWise(b))
    };
    let row_wise = || {
        if op.param_rows == Some(1) {
            OperatorKind::Global
        } else {
            OperatorKind::RowWise
        }
    };
    if let Some(tag) = op.kind {
        return match tag {
            KindTag::ElementWise => Ok(OperatorKind::ElementWise),
            KindTag::BlockWise => block(),
            KindTag::RowWise => Ok(row_wise()),
            KindTag::Global => Ok(OperatorKind::Global),
        };
    }
    match operator_family(&op.name).as_str() {
        "relu" | "sigmoid" | "silu" | "tanh" | "gelu" | "add" | "mul" | "bn" | "batchnorm" | "dropout"
        | "identity" | "scale" => Ok(OperatorKind::ElementWise),
        "conv" | "convd" | "conv1d" | "conv2d" | "maxpool" | "avgpool" | "pool" => block(),
        "matmul" | "linear" | "gemm" | "fc" | "dense" => Ok(row_wise()),
        "softmax" | "layernorm" | "globalpool" | "mean" | "flatten" | "argmax" => Ok(OperatorKind::Global),
        _ => Err(GraphError::UnknownOperator(op.name.clone())),
    }
}

/// Directed edge between node indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct Edge {
    pub u: usize,
    pub v: usize,
}

/// Validated operator DAG with virtual `input` and `output` vertices.
///
/// Node index 0 is `input` and the last index is `output`. Parent and child
/// lists are ordered by topological position.
#[derive(Clone, Debug, Serialize)]
pub struct ModelGraph {
    nodes: Vec<OperatorNode>,
    edges: Vec<Edge>,
    raw_input_bytes: f64,
    #[serde(skip)]
    topo: Vec<usize>,
    #[serde(skip)]
    topo_pos: Vec<usize>,
    #[serde(skip)]
    parents: Vec<Vec<usize>>,
    #[serde(skip)]
    children: Vec<Vec<usize>>,
    #[serde(skip)]
    index: HashMap<NodeId, usize>,
}

/// Validates a model document and attaches the virtual vertices.
pub fn build_graph(doc: &ModelDoc) -> Result<ModelGraph, GraphError> {
    if doc.nodes.is_empty() {
        return Err(GraphError::EmptyModel);
    }
    if !(doc.raw_input_bytes.is_finite() && doc.raw_input_bytes > 0.0) {
        return Err(GraphError::InvalidInputSize);
    }
    let n = doc.nodes.len();
    let mut index = HashMap::with_capacity(n + 2);
    index.insert(INPUT_ID, 0);
    let mut nodes = Vec::with_capacity(n + 2);
    nodes.push(OperatorNode {
        id: INPUT_ID,
        name: "input".into(),
        kind: OperatorKind::ElementWise,
        in_units: 0,
        out_units: 0,
        out_bytes_per_unit: 0.0,
        is_virtual: true,
    });
    for (i, nd) in doc.nodes.iter().enumerate() {
        if nd.id == INPUT_ID || nd.id == OUTPUT_ID {
            return Err(GraphError::ReservedId(nd.id));
        }
        if index.insert(nd.id, i + 1).is_some() {
            return Err(GraphError::DuplicateId(nd.id));
        }
        let kind = classify_operator(nd)?;
        check_units(nd, &kind)?;
        if !(nd.out_bytes_per_unit.is_finite() && nd.out_bytes_per_unit >= 0.0) {
            return Err(GraphError::UnitMismatch(format!("node {} has invalid out_bytes_per_unit", nd.id)));
        }
        nodes.push(OperatorNode {
            id: nd.id,
            name: nd.name.clone(),
            kind,
            in_units: nd.in_units,
            out_units: nd.out_units,
            out_bytes_per_unit: nd.out_bytes_per_unit,
            is_virtual: false,
        });
    }
    let out_idx = n + 1;
    index.insert(OUTPUT_ID, out_idx);
    nodes.push(OperatorNode {
        id: OUTPUT_ID,
        name: "output".into(),
        kind: OperatorKind::ElementWise,
        in_units: 0,
        out_units: 0,
        out_bytes_per_unit: 0.0,
        is_virtual: true,
    });

    let mut edges = Vec::with_capacity(doc.edges.len() + 2);
    let mut seen = HashSet::new();
    for &[a, b] in &doc.edges {
        let (Some(&u), Some(&v)) = (index.get(&a), index.get(&b)) else {
            return Err(GraphError::DanglingEdge(a, b));
        };
        if u == 0 || v == 0 || u == out_idx || v == out_idx {
            return Err(GraphError::DanglingEdge(a, b));
        }
        if u == v {
            return Err(GraphError::CycleDetected(vec![a]));
        }
        if seen.insert((u, v)) {
            edges.push(Edge { u, v });
        }
    }
    let mut has_parent = vec![false; n + 2];
    let mut has_child = vec![false; n + 2];
    for e in &edges {
        has_child[e.u] = true;
        has_parent[e.v] = true;
    }
    for i in 1..=n {
        if !has_parent[i] {
            edges.push(Edge { u: 0, v: i });
        }
        if !has_child[i] {
            edges.push(Edge { u: i, v: out_idx });
        }
    }

    let total = n + 2;
    let mut indeg = vec![0usize; total];
    let mut out_adj = vec![Vec::new(); total];
    for (k, e) in edges.iter().enumerate() {
        indeg[e.v] += 1;
        out_adj[e.u].push(k);
    }
    let mut heap: BinaryHeap<Reverse<usize>> = (0..total).filter(|&i| indeg[i] == 0).map(Reverse).collect();
    let mut topo = Vec::with_capacity(total);
    while let Some(Reverse(i)) = heap.pop() {
        topo.push(i);
        for &k in &out_adj[i] {
            let v = edges[k].v;
            indeg[v] -= 1;
            if indeg[v] == 0 {
                heap.push(Reverse(v));
            }
        }
    }
    if topo.len() != total {
        let stuck = (0..total).filter(|&i| indeg[i] > 0).map(|i| nodes[i].id).collect();
        return Err(GraphError::CycleDetected(stuck));
    }
    // virtual vertices inherit the unit count of the operators they touch
    let src_units: BTreeSet<usize> = edges.iter().filter(|e| e.u == 0).map(|e| nodes[e.v].in_units).collect();
    let sink_units: BTreeSet<usize> = edges.iter().filter(|e| e.v == out_idx).map(|e| nodes[e.u].out_units).collect();
    if src_units.len() != 1 {
        return Err(GraphError::UnitMismatch(format!("source operators disagree on input units {src_units:?}")));
    }
    if sink_units.len() != 1 {
        return Err(GraphError::UnitMismatch(format!("sink operators disagree on output units {sink_units:?}")));
    }
    let iu = *src_units.iter().next().unwrap();
    let ou = *sink_units.iter().next().unwrap();
    for (idx, units) in [(0, iu), (out_idx, ou)] {
        let node = &mut nodes[idx];
        node.in_units = units;
        node.out_units = units;
        node.out_bytes_per_unit = doc.raw_input_bytes / units as f64;
    }
    for e in &edges {
        if nodes[e.u].out_units != nodes[e.v].in_units {
            return Err(GraphError::UnitMismatch(format!(
                "edge ({}, {}): producer has {} units, consumer expects {}",
                nodes[e.u].id, nodes[e.v].id, nodes[e.u].out_units, nodes[e.v].in_units
            )));
        }
    }

    let mut topo_pos = vec![0; total];
    for (p, &i) in topo.iter().enumerate() {
        topo_pos[i] = p;
    }

    let mut parents = vec![Vec::new(); total];
    let mut children = vec![Vec::new(); total];
    for (k, e) in edges.iter().enumerate() {
        parents[e.v].push(k);
        children[e.u].push(k);
    }
    for list in parents.iter_mut() {
        list.sort_by_key(|&k| topo_pos[edges[k].u]);
    }
    for list in children.iter_mut() {
        list.sort_by_key(|&k| topo_pos[edges[k].v]);
    }

    let graph = ModelGraph { nodes, edges, raw_input_bytes: doc.raw_input_bytes, topo, topo_pos, parents, children, index };
    graph.check_connected()?;
    Ok(graph)
}

fn check_units(nd: &NodeDoc, kind: &OperatorKind) -> Result<(), GraphError> {
    let bad = |msg: String| Err(GraphError::UnitMismatch(format!("node {}: {msg}", nd.id)));
    if nd.in_units == 0 || nd.out_units == 0 {
        return bad("unit counts must be >= 1".into());
    }
    match kind {
        OperatorKind::ElementWise | OperatorKind::RowWise if nd.in_units != nd.out_units => {
            bad(format!("in_units {} != out_units {}", nd.in_units, nd.out_units))
        }
        OperatorKind::Global if nd.out_units != 1 => bad("global operators have exactly one output unit".into()),
        OperatorKind::BlockWise(b) => {
            if b.padding >= b.span() {
                return Err(GraphError::InvalidBlockParams(nd.id, "padding must be smaller than the receptive span".into()));
            }
            match b.out_units(nd.in_units) {
                Some(o) if o == nd.out_units => Ok(()),
                o => bad(format!("block parameters give {o:?} output units, document says {}", nd.out_units)),
            }
        }
        _ => Ok(()),
    }
}

impl ModelGraph {
    fn check_connected(&self) -> Result<(), GraphError> {
        let total = self.nodes.len();
        let mut fwd = vec![false; total];
        fwd[0] = true;
        for &i in &self.topo {
            if fwd[i] {
                for &k in &self.children[i] {
                    fwd[self.edges[k].v] = true;
                }
            }
        }
        let mut bwd = vec![false; total];
        bwd[total - 1] = true;
        for &i in self.topo.iter().rev() {
            if bwd[i] {
                for &k in &self.parents[i] {
                    bwd[self.edges[k].u] = true;
                }
            }
        }
        match (0..total).find(|&i| !(fwd[i] && bwd[i])) {
            Some(i) => Err(GraphError::UnreachableNode(self.nodes[i].id)),
            None => Ok(()),
        }
    }

    pub fn nodes(&self) -> &[OperatorNode] {
        &self.nodes
    }

    pub fn node(&self, idx: usize) -> &OperatorNode {
        &self.nodes[idx]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn raw_input_bytes(&self) -> f64 {
        self.raw_input_bytes
    }

    pub fn input_index(&self) -> usize {
        0
    }

    pub fn output_index(&self) -> usize {
        self.nodes.len() - 1
    }

    /// Topological order over node indices, `input` first and `output` last.
    pub fn topo_order(&self) -> &[usize] {
        &self.topo
    }

    pub fn topo_position(&self, idx: usize) -> usize {
        self.topo_pos[idx]
    }

    /// Incoming edge indices of `idx`, ordered by producer topological position.
    pub fn parent_edges(&self, idx: usize) -> &[usize] {
        &self.parents[idx]
    }

    /// Outgoing edge indices of `idx`, ordered by consumer topological position.
    pub fn child_edges(&self, idx: usize) -> &[usize] {
        &self.children[idx]
    }

    pub fn index_of(&self, id: NodeId) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn edge_index(&self, u: usize, v: usize) -> Option<usize> {
        self.children.get(u)?.iter().copied().find(|&k| self.edges[k].v == v)
    }

    /// Non-virtual node indices in topological order.
    pub fn operators(&self) -> impl Iterator<Item = usize> + '_ {
        self.topo.iter().copied().filter(move |&i| !self.nodes[i].is_virtual)
    }

    /// Whether `idx`'s output exceeds the raw input size (the Π set).
    pub fn is_oversize(&self, idx: usize) -> bool {
        self.nodes[idx].out_bytes() > self.raw_input_bytes
    }

    /// Computable output of `v` given that each parent provides `available(parent)`.
    /// Multi-parent operators intersect the per-parent covers.
    pub fn child_cover_multi(&self, v: usize, mut available: impl FnMut(usize) -> UnitRange) -> UnitRange {
        let node = &self.nodes[v];
        let mut cover = UnitRange::full(node.out_units);
        for &k in &self.parents[v] {
            cover = cover.intersect(&node.child_cover(available(self.edges[k].u)));
        }
        cover
    }

    /// Reconstructs the document this graph was built from.
    pub fn to_doc(&self) -> ModelDoc {
        let out_idx = self.output_index();
        let nodes = self.nodes[1..out_idx]
            .iter()
            .map(|n| NodeDoc {
                id: n.id,
                name: n.name.clone(),
                kind: Some(n.kind.tag()),
                in_units: n.in_units,
                out_units: n.out_units,
                out_bytes_per_unit: n.out_bytes_per_unit,
                block: match n.kind {
                    OperatorKind::BlockWise(b) => Some(b),
                    _ => None,
                },
                param_rows: None,
            })
            .collect();
        let edges = self
            .edges
            .iter()
            .filter(|e| e.u != 0 && e.v != out_idx)
            .map(|e| [self.nodes[e.u].id, self.nodes[e.v].id])
            .collect();
        ModelDoc { raw_input_bytes: self.raw_input_bytes, nodes, edges }
    }
}

/// Ids of the operators whose output is larger than the raw model input.
pub fn oversize_set(g: &ModelGraph) -> BTreeSet<NodeId> {
    (0..g.len()).filter(|&i| g.is_oversize(i)).map(|i| g.node(i).id).collect()
}


#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    fn any_node() -> impl Strategy<Value = OperatorNode> {
        let block = (1usize..6, 1usize..4, 0usize..4, 1usize..3, 1usize..40).prop_filter_map("window must fit", |(k, s, p, d, inu)| {
            let b = BlockParams::new(k, s, p, d);
            if p >= b.span() {
                return None;
            }
            let out = b.out_units(inu)?;
            Some((OperatorKind::BlockWise(b), inu, out))
        });
        let local = (prop_oneof![Just(OperatorKind::ElementWise), Just(OperatorKind::RowWise)], 1usize..40).prop_map(|(k, n)| (k, n, n));
        let global = (1usize..40).prop_map(|n| (OperatorKind::Global, n, 1));
        prop_oneof![block, local, global].prop_map(|(kind, in_units, out_units)| OperatorNode {
            id: 1,
            name: "op".into(),
            kind,
            in_units,
            out_units,
            out_bytes_per_unit: 1.0,
            is_virtual: false,
        })
    }

    fn range_in(n: usize) -> impl Strategy<Value = UnitRange> {
        (0..=n, 0..=n).prop_map(|(a, b)| UnitRange::new(a.min(b), a.max(b)))
    }

    // brute-force maximal contiguous cover, independent of the closed form
    fn cover_oracle(v: &OperatorNode, avail: UnitRange) -> UnitRange {
        let ok: Vec<bool> = (0..v.out_units).map(|j| v.halo(UnitRange::new(j, j + 1)).is_subset_of(&avail)).collect();
        let mut best = UnitRange::empty();
        let mut j = 0;
        while j < ok.len() {
            if ok[j] {
                let start = j;
                while j < ok.len() && ok[j] {
                    j += 1;
                }
                if j - start > best.len() {
                    best = UnitRange::new(start, j);
                }
            } else {
                j += 1;
            }
        }
        best
    }

    proptest! {
        #[test]
        fn halo_is_monotone((v, a, b) in any_node().prop_flat_map(|v| { let n = v.out_units; (Just(v), range_in(n), range_in(n)) })) {
            let outer = UnitRange::new(a.lo.min(b.lo), a.hi.max(b.hi));
            prop_assert!(v.halo(a).is_subset_of(&v.halo(outer)));
        }

        #[test]
        fn cover_is_galois_and_maximal((v, r) in any_node().prop_flat_map(|v| { let n = v.in_units; (Just(v), range_in(n)) })) {
            let c = v.child_cover(r);
            prop_assert!(v.required_input_range(c).unwrap().is_subset_of(&r));
            prop_assert_eq!(c.len(), cover_oracle(&v, r).len());
            if !c.is_empty() {
                if c.lo > 0 {
                    prop_assert!(!v.halo(UnitRange::new(c.lo - 1, c.hi)).is_subset_of(&r));
                }
                if c.hi < v.out_units {
                    prop_assert!(!v.halo(UnitRange::new(c.lo, c.hi + 1)).is_subset_of(&r));
                }
            }
        }

        #[test]
        fn full_cover_identity(v in any_node()) {
            prop_assert_eq!(v.child_cover(UnitRange::full(v.in_units)), UnitRange::full(v.out_units));
        }

        #[test]
        fn halo_matches_union_of_receptive_fields((v, out) in any_node().prop_flat_map(|v| { let n = v.out_units; (Just(v), range_in(n)) })) {
            if let OperatorKind::BlockWise(b) = v.kind {
                let mut lo = usize::MAX;
                let mut hi = 0usize;
                for j in out.lo..out.hi {
                    let start = (j * b.stride) as i64 - b.padding as i64;
                    let end = start + b.span() as i64;
                    lo = lo.min(start.clamp(0, v.in_units as i64) as usize);
                    hi = hi.max(end.clamp(0, v.in_units as i64) as usize);
                }
                let expected = if out.is_empty() { UnitRange::empty() } else { UnitRange::new(lo, hi) };
                prop_assert_eq!(v.halo(out), expected);
            }
        }
    }
}
