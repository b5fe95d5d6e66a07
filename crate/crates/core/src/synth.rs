//! Synthetic models: a VGG-16-shaped profile for bandwidth sweeps, random
//! operator DAGs for property checks, and random executable chains.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::graph::{build_graph, BlockParams, KindTag, ModelDoc, ModelGraph, NodeDoc, NodeId, UnitRange};
use crate::kernels::{Kernel, KernelDoc, KernelEntry};
use crate::profile::{Device, DeviceCost, ProfileTable};
use crate::scheduler::{is_feasible, plan_device_only, SchedulePlan};

/// Hardware assumptions behind [`vgg_like`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VggLikeParams {
    /// Input image side; rows are the partition units.
    pub image_side: usize,
    /// Bytes per raw input element (8-bit camera frames by default).
    pub input_bytes_per_element: f64,
    pub device_flops: f64,
    pub device_mem_bps: f64,
    pub device_launch_s: f64,
    pub server_speedup: f64,
    pub server_launch_s: f64,
}

impl Default for VggLikeParams {
    fn default() -> Self {
        VggLikeParams {
            image_side: 224,
            input_bytes_per_element: 1.0,
            device_flops: 200e9,
            device_mem_bps: 25e9,
            device_launch_s: 5e-4,
            server_speedup: 20.0,
            server_launch_s: 5e-5,
        }
    }
}

/// VGG-16 with rows as units: 3×3 convolutions and 2×2 pools along the row
/// axis, ReLU after every convolution and fully connected layer, and a
/// global classifier head. Costs come from per-row FLOP and byte counts.
pub fn vgg_like(params: &VggLikeParams) -> (ModelGraph, ProfileTable) {
    const CFG: [usize; 18] = [64, 64, 0, 128, 128, 0, 256, 256, 256, 0, 512, 512, 512, 0, 512, 512, 512, 0];
    let mut nodes = Vec::new();
    // per node: work in seconds-per-unit on the device (compute-bound or memory-bound)
    let mut per_unit = Vec::new();
    let mut side = params.image_side;
    let mut channels = 3usize;
    let mut next_id: NodeId = 1;
    let mut push = |nodes: &mut Vec<NodeDoc>, name: String, kind: KindTag, block: Option<BlockParams>, inu: usize, outu: usize, bytes: f64| {
        nodes.push(NodeDoc { id: next_id, name, kind: Some(kind), in_units: inu, out_units: outu, out_bytes_per_unit: bytes, block, param_rows: None });
        next_id += 1;
    };
    let (mut conv_i, mut pool_i) = (0, 0);
    for &c in &CFG {
        if c == 0 {
            pool_i += 1;
            let out = side / 2;
            let bytes = (out * channels * 4) as f64;
            push(&mut nodes, format!("pool{pool_i}"), KindTag::BlockWise, Some(BlockParams::new(2, 2, 0, 1)), side, out, bytes);
            per_unit.push((2.0 * side as f64 * channels as f64 * 4.0) / params.device_mem_bps);
            side = out;
        } else {
            conv_i += 1;
            let bytes = (side * c * 4) as f64;
            push(&mut nodes, format!("conv{conv_i}"), KindTag::BlockWise, Some(BlockParams::new(3, 1, 1, 1)), side, side, bytes);
            per_unit.push((side * c * channels * 9 * 2) as f64 / params.device_flops);
            push(&mut nodes, format!("relu{conv_i}"), KindTag::ElementWise, None, side, side, bytes);
            per_unit.push(2.0 * bytes / params.device_mem_bps);
            channels = c;
        }
    }
    let flat = side * side * channels;
    for (i, (inp, out)) in [(flat, 4096usize), (4096, 4096), (4096, 1000)].into_iter().enumerate() {
        let inu = if i == 0 { side } else { 1 };
        push(&mut nodes, format!("fc{}", i + 6), KindTag::Global, None, inu, 1, (out * 4) as f64);
        per_unit.push((inp * out * 2) as f64 / params.device_flops);
        if i < 2 {
            push(&mut nodes, format!("relu_fc{}", i + 6), KindTag::ElementWise, None, 1, 1, (out * 4) as f64);
            per_unit.push(2.0 * (out * 4) as f64 / params.device_mem_bps);
        }
    }
    push(&mut nodes, "softmax".into(), KindTag::Global, None, 1, 1, 4000.0);
    per_unit.push(3.0 * 4000.0 / params.device_mem_bps);

    let edges = nodes.windows(2).map(|w| [w[0].id, w[1].id]).collect();
    let raw = (params.image_side * params.image_side * 3) as f64 * params.input_bytes_per_element;
    let g = build_graph(&ModelDoc { raw_input_bytes: raw, nodes, edges }).expect("vgg-like graph is valid");
    let profile = ProfileTable::from_fn(&g, |v, d| {
        let m = DeviceCost::new(params.device_launch_s, per_unit[v - 1]);
        match d {
            Device::Mobile => m,
            Device::Server => DeviceCost::new(params.server_launch_s, m.per_unit_s / params.server_speedup),
        }
    });
    (g, profile)
}

/// Shape knobs for [`random_dag`].
#[derive(Clone, Debug)]
pub struct DagShape {
    pub max_ops: usize,
    pub max_units: usize,
    pub branch_prob: f64,
    /// Raw input size relative to the first operator's input bytes; smaller values enlarge the oversize set.
    pub raw_scale: f64,
}

impl Default for DagShape {
    fn default() -> Self {
        DagShape { max_ops: 8, max_units: 12, branch_prob: 0.3, raw_scale: 1.0 }
    }
}

fn random_block<R: Rng>(rng: &mut R, in_units: usize) -> Option<(BlockParams, usize)> {
    for _ in 0..8 {
        let k = rng.gen_range(1..=4);
        let s = rng.gen_range(1..=2);
        let d = rng.gen_range(1..=2);
        let span = d * (k - 1) + 1;
        let p = rng.gen_range(0..span.min(3));
        let b = BlockParams::new(k, s, p, d);
        if let Some(out) = b.out_units(in_units) {
            if out >= 1 {
                return Some((b, out));
            }
        }
    }
    None
}

/// Random operator DAG: a backbone of random operators plus occasional
/// element-wise joins fed by an earlier node of matching size.
pub fn random_dag<R: Rng>(rng: &mut R, shape: &DagShape) -> ModelDoc {
    let n_ops = rng.gen_range(1..=shape.max_ops.max(1));
    let first_units = rng.gen_range(1..=shape.max_units.max(1));
    let mut nodes: Vec<NodeDoc> = Vec::new();
    let mut edges = Vec::new();
    let mut units = first_units;
    let mut tail: Option<NodeId> = None;
    for i in 0..n_ops {
        let id = i as NodeId + 1;
        let bytes = rng.gen_range(1..=64) as f64;
        let join = tail.and_then(|t| {
            let same: Vec<NodeId> = nodes.iter().filter(|n| n.out_units == units && n.id != t).map(|n| n.id).collect();
            (rng.gen_bool(shape.branch_prob) && !same.is_empty()).then(|| *same.choose(rng).unwrap())
        });
        let (kind, block, out) = if join.is_some() {
            (KindTag::ElementWise, None, units)
        } else {
            match rng.gen_range(0..4) {
                0 => (KindTag::ElementWise, None, units),
                1 => match random_block(rng, units) {
                    Some((b, out)) => (KindTag::BlockWise, Some(b), out),
                    None => (KindTag::ElementWise, None, units),
                },
                2 => (KindTag::RowWise, None, units),
                _ => (KindTag::Global, None, 1),
            }
        };
        nodes.push(NodeDoc { id, name: format!("op{id}"), kind: Some(kind), in_units: units, out_units: out, out_bytes_per_unit: bytes, block, param_rows: None });
        if let Some(t) = tail {
            edges.push([t, id]);
        }
        if let Some(j) = join {
            edges.push([j, id]);
        }
        tail = Some(id);
        units = out;
    }
    let raw = (first_units as f64 * 32.0 * shape.raw_scale).max(1.0);
    ModelDoc { raw_input_bytes: raw, nodes, edges }
}

/// Random plan satisfying every constraint, or device-only after `attempts` failures.
pub fn random_feasible_plan<R: Rng>(rng: &mut R, g: &ModelGraph, attempts: usize) -> SchedulePlan {
    'outer: for _ in 0..attempts {
        let mut plan = plan_device_only(g);
        for v in g.operators() {
            let n = g.node(v).out_units;
            // oversized parents must already hold everything this node computes on each side
            let mut a_max = n;
            let mut b_min = 0;
            for &k in g.parent_edges(v) {
                let u = g.edges()[k].u;
                if g.is_oversize(u) {
                    let mc = g.node(v).child_cover(plan.m[u]);
                    a_max = a_max.min(if mc.is_empty() { 0 } else { mc.hi });
                    let rc = g.node(v).child_cover(plan.r[u]);
                    b_min = b_min.max(if rc.is_empty() { n } else { rc.lo });
                }
            }
            let mut options = Vec::new();
            for a in 0..=n {
                for b in 0..=a {
                    let m_ok = a == 0 || a <= a_max;
                    let r_ok = b == n || b >= b_min;
                    if m_ok && r_ok {
                        options.push((a, b));
                    }
                }
            }
            let Some(&(a, b)) = options.choose(rng) else {
                continue 'outer;
            };
            plan.set(v, UnitRange::new(0, a), UnitRange::new(b, n));
        }
        if is_feasible(g, &plan).map(|f| f.is_ok()).unwrap_or(false) {
            return plan;
        }
    }
    plan_device_only(g)
}

/// Random executable chain over conv, pool, relu, row-wise and one-row matmul,
/// softmax and residual adds, with matching weights. Byte sizes are 4 per float.
pub fn random_chain_model<R: Rng>(rng: &mut R, max_ops: usize, max_units: usize) -> (ModelDoc, KernelDoc) {
    let n_ops = rng.gen_range(2..=max_ops.max(2));
    let input_units = rng.gen_range(3..=max_units.max(3));
    let input_width = rng.gen_range(1..=3);
    let mut nodes: Vec<NodeDoc> = Vec::new();
    let mut kernels = Vec::new();
    let mut edges = Vec::new();
    let (mut units, mut width) = (input_units, input_width);
    let mut history: Vec<(NodeId, usize, usize)> = Vec::new();
    let weight = |rng: &mut R| (rng.gen_range(-8i32..=8) as f32) * 0.125;
    let mut has_block = false;
    for i in 0..n_ops {
        let id = i as NodeId + 1;
        let mut pick = rng.gen_range(0..7);
        if i + 1 == n_ops && !has_block && units > 1 {
            pick = 0;
        }
        let residual: Vec<NodeId> = history.iter().filter(|h| h.1 == units && h.2 == width).map(|h| h.0).collect();
        let (kind, block, out_units, out_width, kernel, param_rows, extra_parent) = match pick {
            0 | 1 => match random_block(rng, units) {
                Some((b, out)) => {
                    has_block = true;
                    if pick == 0 {
                        let w = (0..b.kernel).map(|_| weight(rng)).collect();
                        (KindTag::BlockWise, Some(b), out, width, Kernel::Conv1d { weights: w, bias: weight(rng), block: b }, None, None)
                    } else {
                        (KindTag::BlockWise, Some(b), out, width, Kernel::MaxPool1d { block: b }, None, None)
                    }
                }
                None => (KindTag::ElementWise, None, units, width, Kernel::Relu, None, None),
            },
            2 => (KindTag::ElementWise, None, units, width, Kernel::Relu, None, None),
            3 => {
                let cols = rng.gen_range(1..=3);
                let w = (0..width * cols).map(|_| weight(rng)).collect();
                let k = Kernel::MatMul { in_cols: width, out_cols: cols, weights: w };
                if width == 1 {
                    (KindTag::Global, None, 1, units * cols, k, Some(1), None)
                } else {
                    (KindTag::RowWise, None, units, cols, k, Some(width), None)
                }
            }
            4 if units > 1 || i + 1 == n_ops => (KindTag::Global, None, 1, units * width, Kernel::Softmax, None, None),
            5 if !residual.is_empty() && i > 0 => {
                let j = *residual.choose(rng).unwrap();
                (KindTag::ElementWise, None, units, width, Kernel::Add, None, Some(j))
            }
            _ => (KindTag::ElementWise, None, units, width, Kernel::Sigmoid, None, None),
        };
        let name = match &kernel {
            Kernel::Conv1d { .. } => "conv",
            Kernel::MaxPool1d { .. } => "maxpool",
            Kernel::Relu => "relu",
            Kernel::Sigmoid => "sigmoid",
            Kernel::Add => "add",
            Kernel::MatMul { .. } => "matmul",
            Kernel::Softmax => "softmax",
            Kernel::Identity => "identity",
        };
        nodes.push(NodeDoc {
            id,
            name: format!("{name}_{id}"),
            kind: Some(kind),
            in_units: units,
            out_units,
            out_bytes_per_unit: (4 * out_width) as f64,
            block,
            param_rows,
        });
        if i > 0 {
            edges.push([id - 1, id]);
        }
        if let Some(j) = extra_parent {
            if j != id - 1 {
                edges.push([j, id]);
            }
        }
        kernels.push(KernelEntry { id, kernel });
        history.push((id, out_units, out_width));
        units = out_units;
        width = out_width;
    }
    let raw = (input_units * input_width * 4) as f64;
    (ModelDoc { raw_input_bytes: raw, nodes, edges }, KernelDoc { input_width, nodes: kernels })
}
