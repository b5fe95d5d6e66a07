//! Reference 1-D kernels and tensor split/combine.
//!
//! A tensor is a sequence of units along the partition axis, each unit holding
//! `width` floats. Every kernel computes each output unit with a fixed
//! summation order, so any decomposition into ranges reproduces the
//! full-tensor result bit for bit.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{BlockParams, ModelGraph, NodeId, OperatorKind, OperatorNode, UnitRange};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("node {node}: input covers {have:?} but {need:?} is required")]
    InsufficientHalo { node: NodeId, have: UnitRange, need: UnitRange },
    #[error("range {range:?} out of bounds for {units} units")]
    RangeOutOfBounds { range: UnitRange, units: usize },
    #[error("unit {0} is not covered by any part")]
    CoverageGap(usize),
    #[error("replicated unit {0} carries different values")]
    ReplicaMismatch(usize),
    #[error("width mismatch: {0}")]
    WidthMismatch(String),
    #[error("node {0} has no kernel")]
    MissingKernel(NodeId),
    #[error("kernel for node {0} does not match its operator: {1}")]
    KernelMismatch(NodeId, String),
    #[error("unknown node {0} in kernel set")]
    UnknownNode(NodeId),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor1D {
    pub values: Vec<f32>,
    pub units: usize,
    pub width: usize,
}

impl Tensor1D {
    pub fn new(values: Vec<f32>, width: usize) -> Result<Self, KernelError> {
        if width == 0 || !values.len().is_multiple_of(width) {
            return Err(KernelError::WidthMismatch(format!("{} values do not split into rows of {width}", values.len())));
        }
        Ok(Tensor1D { units: values.len() / width, values, width })
    }

    /// Width-1 tensor.
    pub fn from_vec(values: Vec<f32>) -> Self {
        Tensor1D { units: values.len(), values, width: 1 }
    }

    pub fn as_part(&self) -> TensorPart {
        TensorPart { range: UnitRange::full(self.units), width: self.width, values: self.values.clone() }
    }

    /// Bitwise equality (distinguishes `-0.0` from `0.0`, equates identical NaNs).
    pub fn bit_eq(&self, other: &Tensor1D) -> bool {
        self.units == other.units
            && self.width == other.width
            && self.values.iter().zip(&other.values).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Values of the units in `range`.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorPart {
    pub range: UnitRange,
    pub width: usize,
    pub values: Vec<f32>,
}

impl TensorPart {
    pub fn new(range: UnitRange, width: usize, values: Vec<f32>) -> Result<Self, KernelError> {
        if values.len() != range.len() * width {
            return Err(KernelError::WidthMismatch(format!(
                "{} values for {} units of width {width}",
                values.len(),
                range.len()
            )));
        }
        Ok(TensorPart { range, width, values })
    }

    pub fn unit(&self, i: usize) -> &[f32] {
        let off = (i - self.range.lo) * self.width;
        &self.values[off..off + self.width]
    }

    /// Sub-part restricted to `r`, which must lie inside `self.range`.
    pub fn slice(&self, r: UnitRange) -> TensorPart {
        debug_assert!(r.is_subset_of(&self.range));
        if r.is_empty() {
            return TensorPart { range: r, width: self.width, values: Vec::new() };
        }
        let a = (r.lo - self.range.lo) * self.width;
        let b = (r.hi - self.range.lo) * self.width;
        TensorPart { range: r, width: self.width, values: self.values[a..b].to_vec() }
    }
}

/// Per-node computation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Kernel {
    Identity,
    Relu,
    Sigmoid,
    /// Element-wise sum over all parents, in parent order.
    Add,
    /// Cross-correlation along the unit axis with zero padding, applied to
    /// each of a unit's floats independently with shared taps.
    Conv1d { weights: Vec<f32>, bias: f32, block: BlockParams },
    MaxPool1d { block: BlockParams },
    /// Row-wise product with an `in_cols × out_cols` row-major matrix. A one-row
    /// matrix makes this a global operator producing a single flattened unit.
    MatMul { in_cols: usize, out_cols: usize, weights: Vec<f32> },
    Softmax,
}

impl Kernel {
    /// Output width for the given input widths and input unit count.
    fn out_width(&self, id: NodeId, in_widths: &[usize], in_units: usize) -> Result<usize, KernelError> {
        let mismatch = |m: &str| KernelError::KernelMismatch(id, m.to_string());
        let first = *in_widths.first().ok_or_else(|| mismatch("no inputs"))?;
        if !matches!(self, Kernel::Add) && in_widths.len() != 1 {
            return Err(mismatch("kernel takes exactly one input"));
        }
        match self {
            Kernel::Identity | Kernel::Relu | Kernel::Sigmoid => Ok(first),
            Kernel::Add => {
                if in_widths.iter().any(|&w| w != first) {
                    return Err(mismatch("add inputs differ in width"));
                }
                Ok(first)
            }
            Kernel::Conv1d { .. } | Kernel::MaxPool1d { .. } => Ok(first),
            Kernel::MatMul { in_cols, out_cols, .. } => {
                if first != *in_cols {
                    return Err(mismatch("matmul input width differs from in_cols"));
                }
                Ok(if *in_cols == 1 { in_units * out_cols } else { *out_cols })
            }
            Kernel::Softmax => Ok(in_units * first),
        }
    }

    fn check_kind(&self, node: &OperatorNode) -> Result<(), KernelError> {
        let ok = match (self, &node.kind) {
            (Kernel::Identity | Kernel::Relu | Kernel::Sigmoid | Kernel::Add, OperatorKind::ElementWise) => true,
            (Kernel::Conv1d { block, weights, .. }, OperatorKind::BlockWise(b)) => block == b && weights.len() == b.kernel,
            (Kernel::MaxPool1d { block }, OperatorKind::BlockWise(b)) => block == b,
            (Kernel::MatMul { in_cols, out_cols, weights }, kind) => {
                weights.len() == in_cols * out_cols
                    && *in_cols > 0
                    && match kind {
                        OperatorKind::RowWise => *in_cols > 1,
                        OperatorKind::Global => *in_cols == 1,
                        _ => false,
                    }
            }
            (Kernel::Softmax, OperatorKind::Global) => true,
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            Err(KernelError::KernelMismatch(node.id, format!("{self:?} vs {:?}", node.kind)))
        }
    }
}

/// Computes output units `out` of `node` from parts of its inputs (one per parent, parent order).
pub fn apply_range(node: &OperatorNode, kernel: &Kernel, inputs: &[TensorPart], out: UnitRange) -> Result<TensorPart, KernelError> {
    if !out.within(node.out_units) {
        return Err(KernelError::RangeOutOfBounds { range: out, units: node.out_units });
    }
    let need = node.halo(out);
    for p in inputs {
        if !need.is_subset_of(&p.range) {
            return Err(KernelError::InsufficientHalo { node: node.id, have: p.range, need });
        }
    }
    let widths: Vec<usize> = inputs.iter().map(|p| p.width).collect();
    let width = kernel.out_width(node.id, &widths, node.in_units)?;
    let mut values = Vec::with_capacity(out.len() * width);
    if out.is_empty() {
        return Ok(TensorPart { range: out, width, values });
    }
    let x = &inputs[0];
    match kernel {
        Kernel::Identity => (out.lo..out.hi).for_each(|j| values.extend_from_slice(x.unit(j))),
        Kernel::Relu => (out.lo..out.hi).for_each(|j| values.extend(x.unit(j).iter().map(|&v| if v > 0.0 { v } else { 0.0 }))),
        Kernel::Sigmoid => (out.lo..out.hi).for_each(|j| values.extend(x.unit(j).iter().map(|&v| 1.0 / (1.0 + (-v).exp())))),
        Kernel::Add => {
            for j in out.lo..out.hi {
                for c in 0..width {
                    let mut acc = 0.0f32;
                    for p in inputs {
                        acc += p.unit(j)[c];
                    }
                    values.push(acc);
                }
            }
        }
        Kernel::Conv1d { weights, bias, block } => {
            for j in out.lo..out.hi {
                for c in 0..width {
                    let mut acc = 0.0f32;
                    for (t, w) in weights.iter().enumerate() {
                        if let Some(i) = tap(block, j, t, node.in_units) {
                            acc += w * x.unit(i)[c];
                        }
                    }
                    values.push(acc + bias);
                }
            }
        }
        Kernel::MaxPool1d { block } => {
            for j in out.lo..out.hi {
                for c in 0..width {
                    let mut acc = f32::NEG_INFINITY;
                    for t in 0..block.kernel {
                        if let Some(i) = tap(block, j, t, node.in_units) {
                            acc = acc.max(x.unit(i)[c]);
                        }
                    }
                    values.push(acc);
                }
            }
        }
        Kernel::MatMul { in_cols, out_cols, weights } => {
            let rows = if *in_cols == 1 { 0..node.in_units } else { out.lo..out.hi };
            for i in rows {
                let row = x.unit(i);
                for c in 0..*out_cols {
                    let mut acc = 0.0f32;
                    for (k, xv) in row.iter().enumerate() {
                        acc += xv * weights[k * out_cols + c];
                    }
                    values.push(acc);
                }
            }
        }
        Kernel::Softmax => {
            let all: Vec<f32> = (0..node.in_units).flat_map(|i| x.unit(i).iter().copied()).collect();
            let max = all.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let exps: Vec<f32> = all.iter().map(|v| (v - max).exp()).collect();
            let mut sum = 0.0f32;
            for e in &exps {
                sum += e;
            }
            values.extend(exps.iter().map(|e| e / sum));
        }
    }
    Ok(TensorPart { range: out, width, values })
}

fn tap(b: &BlockParams, j: usize, t: usize, in_units: usize) -> Option<usize> {
    let pos = (j * b.stride + t * b.dilation) as i64 - b.padding as i64;
    (pos >= 0 && (pos as usize) < in_units).then_some(pos as usize)
}

/// Copies the selected ranges out of `t`; ranges may overlap.
pub fn split(t: &Tensor1D, ranges: &[UnitRange]) -> Result<Vec<TensorPart>, KernelError> {
    let whole = t.as_part();
    ranges
        .iter()
        .map(|&r| {
            if !r.within(t.units) {
                return Err(KernelError::RangeOutOfBounds { range: r, units: t.units });
            }
            Ok(whole.slice(r))
        })
        .collect()
}

/// Assembles `range` out of overlapping parts, checking replicas agree bit for bit.
pub fn assemble(parts: &[&TensorPart], range: UnitRange, width: usize) -> Result<TensorPart, KernelError> {
    let mut values = Vec::with_capacity(range.len() * width);
    for i in range.lo..range.hi {
        let mut found: Option<&[f32]> = None;
        for p in parts {
            if p.range.contains_unit(i) {
                if p.width != width {
                    return Err(KernelError::WidthMismatch(format!("part of width {} for width {width}", p.width)));
                }
                let u = p.unit(i);
                match found {
                    None => found = Some(u),
                    Some(prev) => {
                        if prev.iter().zip(u).any(|(a, b)| a.to_bits() != b.to_bits()) {
                            return Err(KernelError::ReplicaMismatch(i));
                        }
                    }
                }
            }
        }
        values.extend_from_slice(found.ok_or(KernelError::CoverageGap(i))?);
    }
    Ok(TensorPart { range, width, values })
}

/// Reconstructs a full tensor of `total` units from covering parts.
pub fn combine(parts: &[TensorPart], total: usize) -> Result<Tensor1D, KernelError> {
    let width = match parts.first() {
        Some(p) => p.width,
        None if total == 0 => 1,
        None => return Err(KernelError::CoverageGap(0)),
    };
    let refs: Vec<&TensorPart> = parts.iter().collect();
    let whole = assemble(&refs, UnitRange::full(total), width)?;
    Ok(Tensor1D { values: whole.values, units: total, width })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelEntry {
    pub id: NodeId,
    #[serde(flatten)]
    pub kernel: Kernel,
}

/// Weights document: input width plus one kernel per operator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelDoc {
    pub input_width: usize,
    pub nodes: Vec<KernelEntry>,
}

impl KernelDoc {
    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("kernel document serializes")
    }
}

/// Graph paired with validated kernels and per-node output widths.
#[derive(Clone, Debug)]
pub struct ExecModel {
    pub graph: ModelGraph,
    kernels: Vec<Kernel>,
    widths: Vec<usize>,
}

impl ExecModel {
    pub fn new(graph: ModelGraph, doc: &KernelDoc) -> Result<Self, KernelError> {
        let mut kernels: Vec<Option<Kernel>> =
            graph.nodes().iter().map(|n| if n.is_virtual { Some(Kernel::Identity) } else { None }).collect();
        for e in &doc.nodes {
            let idx = graph.index_of(e.id).ok_or(KernelError::UnknownNode(e.id))?;
            if graph.node(idx).is_virtual {
                return Err(KernelError::UnknownNode(e.id));
            }
            kernels[idx] = Some(e.kernel.clone());
        }
        let kernels = kernels
            .into_iter()
            .enumerate()
            .map(|(i, k)| k.ok_or(KernelError::MissingKernel(graph.node(i).id)))
            .collect::<Result<Vec<_>, _>>()?;
        let mut widths = vec![0; graph.len()];
        for &v in graph.topo_order() {
            let node = graph.node(v);
            if v == graph.input_index() {
                widths[v] = doc.input_width;
                if doc.input_width == 0 {
                    return Err(KernelError::WidthMismatch("input width must be positive".into()));
                }
                continue;
            }
            kernels[v].check_kind(node)?;
            let ins: Vec<usize> = graph.parent_edges(v).iter().map(|&k| widths[graph.edges()[k].u]).collect();
            widths[v] = kernels[v].out_width(node.id, &ins, node.in_units)?;
        }
        Ok(ExecModel { graph, kernels, widths })
    }

    pub fn kernel(&self, idx: usize) -> &Kernel {
        &self.kernels[idx]
    }

    /// Floats per output unit of node `idx`.
    pub fn width(&self, idx: usize) -> usize {
        self.widths[idx]
    }

    pub fn input_width(&self) -> usize {
        self.widths[self.graph.input_index()]
    }

    pub fn check_input(&self, input: &Tensor1D) -> Result<(), KernelError> {
        let n = self.graph.node(self.graph.input_index()).out_units;
        if input.units != n || input.width != self.input_width() {
            return Err(KernelError::WidthMismatch(format!(
                "input is {}x{}, model expects {}x{}",
                input.units,
                input.width,
                n,
                self.input_width()
            )));
        }
        Ok(())
    }

    /// Single-process execution of the whole model.
    pub fn reference_forward(&self, input: &Tensor1D) -> Result<Tensor1D, KernelError> {
        self.check_input(input)?;
        let g = &self.graph;
        let mut outs: Vec<Option<TensorPart>> = vec![None; g.len()];
        outs[g.input_index()] = Some(input.as_part());
        for &v in g.topo_order().iter().skip(1) {
            let node = g.node(v);
            let ins: Vec<TensorPart> = g
                .parent_edges(v)
                .iter()
                .map(|&k| outs[g.edges()[k].u].clone().expect("parents run first"))
                .collect();
            outs[v] = Some(apply_range(node, &self.kernels[v], &ins, UnitRange::full(node.out_units))?);
        }
        let out = outs[g.output_index()].take().expect("output computed");
        Ok(Tensor1D { units: out.range.len(), width: out.width, values: out.values })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn op(kind: OperatorKind, in_units: usize, out_units: usize) -> OperatorNode {
        OperatorNode { id: 1, name: "op".into(), kind, in_units, out_units, out_bytes_per_unit: 4.0, is_virtual: false }
    }

    fn part(lo: usize, v: Vec<f32>) -> TensorPart {
        TensorPart { range: UnitRange::new(lo, lo + v.len()), width: 1, values: v }
    }

    #[test]
    fn conv_with_zero_padding() {
        let block = BlockParams::new(3, 1, 1, 1);
        let node = op(OperatorKind::BlockWise(block), 4, 4);
        let k = Kernel::Conv1d { weights: vec![1.0, 0.0, -1.0], bias: 0.0, block };
        let out = apply_range(&node, &k, &[part(0, vec![1.0, 2.0, 3.0, 4.0])], UnitRange::full(4)).unwrap();
        assert_eq!(out.values, vec![-2.0, -2.0, -2.0, 3.0]);
    }

    #[test]
    fn relu_and_softmax() {
        let node = op(OperatorKind::ElementWise, 2, 2);
        let out = apply_range(&node, &Kernel::Relu, &[part(0, vec![-1.0, 2.0])], UnitRange::full(2)).unwrap();
        assert_eq!(out.values, vec![0.0, 2.0]);
        let node = op(OperatorKind::Global, 2, 1);
        let out = apply_range(&node, &Kernel::Softmax, &[part(0, vec![0.0, 0.0])], UnitRange::new(0, 1)).unwrap();
        assert_eq!(out.values, vec![0.5, 0.5]);
        assert_eq!(out.width, 2);
    }

    #[test]
    fn insufficient_halo_is_rejected() {
        let block = BlockParams::new(3, 1, 1, 1);
        let node = op(OperatorKind::BlockWise(block), 4, 4);
        let k = Kernel::Conv1d { weights: vec![1.0, 1.0, 1.0], bias: 0.0, block };
        let err = apply_range(&node, &k, &[part(0, vec![1.0, 2.0])], UnitRange::new(0, 2)).unwrap_err();
        assert!(matches!(err, KernelError::InsufficientHalo { .. }));
        assert!(apply_range(&node, &k, &[part(0, vec![1.0, 2.0, 3.0])], UnitRange::new(0, 2)).is_ok());
    }

    #[test]
    fn split_examples() {
        let t = Tensor1D::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
        let parts = split(&t, &[UnitRange::new(0, 2), UnitRange::new(2, 4)]).unwrap();
        assert_eq!(parts[0].values, vec![1.0, 2.0]);
        assert_eq!(parts[1].values, vec![3.0, 4.0]);
        assert_eq!(split(&t, &[UnitRange::full(4)]).unwrap()[0].values, t.values);
        let parts = split(&t, &[UnitRange::new(0, 3), UnitRange::new(2, 4)]).unwrap();
        assert_eq!(parts[0].values, vec![1.0, 2.0, 3.0]);
        assert_eq!(parts[1].values, vec![3.0, 4.0]);
        assert!(matches!(split(&t, &[UnitRange::new(3, 5)]), Err(KernelError::RangeOutOfBounds { .. })));
    }

    #[test]
    fn combine_errors() {
        let gap = vec![part(0, vec![1.0, 2.0, 3.0])];
        assert_eq!(combine(&gap, 4), Err(KernelError::CoverageGap(3)));
        let clash = vec![part(0, vec![1.0, 3.0]), part(1, vec![5.0, 4.0])];
        assert_eq!(combine(&clash, 3), Err(KernelError::ReplicaMismatch(1)));
        let ok = vec![part(0, vec![1.0, 3.0]), part(1, vec![3.0, 4.0])];
        assert_eq!(combine(&ok, 3).unwrap().values, vec![1.0, 3.0, 4.0]);
    }

    #[test]
    fn row_wise_matmul_keeps_rows_independent() {
        let node = op(OperatorKind::RowWise, 3, 3);
        let k = Kernel::MatMul { in_cols: 2, out_cols: 2, weights: vec![1.0, 2.0, 3.0, 4.0] };
        let x = TensorPart { range: UnitRange::full(3), width: 2, values: vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0] };
        let full = apply_range(&node, &k, std::slice::from_ref(&x), UnitRange::full(3)).unwrap();
        assert_eq!(full.values, vec![1.0, 2.0, 3.0, 4.0, 4.0, 6.0]);
        let mid = apply_range(&node, &k, &[x.slice(UnitRange::new(1, 2))], UnitRange::new(1, 2)).unwrap();
        assert_eq!(mid.values, vec![3.0, 4.0]);
    }

    proptest::proptest! {
        #[test]
        fn split_combine_round_trip(values in proptest::collection::vec(-100.0f32..100.0, 1..40), cuts in proptest::collection::vec((0usize..40, 0usize..40), 0..5)) {
            let t = Tensor1D::from_vec(values);
            let n = t.units;
            let mut ranges: Vec<UnitRange> = cuts.into_iter().map(|(a, b)| UnitRange::new(a.min(b) % n, (a.max(b) % n) + 1)).collect();
            // make sure the ranges cover everything
            ranges.push(UnitRange::new(0, n / 2));
            ranges.push(UnitRange::new(n / 2, n));
            let parts = split(&t, &ranges).unwrap();
            proptest::prop_assert!(combine(&parts, n).unwrap().bit_eq(&t));
        }
    }
}
