use serde::{Deserialize, Serialize};

use super::ScheduleError;
use crate::graph::{ModelGraph, NodeId, UnitRange};
use crate::profile::Device;

/// Unit ranges assigned to the device (`m`) and the server (`r`) for every node,
/// indexed like the graph (virtual vertices included).
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SchedulePlan {
    pub plan_id: u32,
    pub m: Vec<UnitRange>,
    pub r: Vec<UnitRange>,
}

impl SchedulePlan {
    pub fn range(&self, device: Device, node: usize) -> UnitRange {
        match device {
            Device::Mobile => self.m[node],
            Device::Server => self.r[node],
        }
    }

    pub fn set(&mut self, node: usize, m: UnitRange, r: UnitRange) {
        self.m[node] = m;
        self.r[node] = r;
    }

    /// Device-side prefix length and server-side suffix start of node `node` with `units` units.
    pub fn split_point(&self, node: usize, units: usize) -> (usize, usize) {
        let a = if self.m[node].is_empty() { 0 } else { self.m[node].hi };
        let b = if self.r[node].is_empty() { units } else { self.r[node].lo };
        (a, b)
    }

    /// Plan from per-operator `(a, b)` pairs: device gets `[0, a)`, server gets `[b, n)`.
    pub fn from_split_points(g: &ModelGraph, points: impl Fn(usize) -> (usize, usize)) -> Self {
        let mut plan = plan_device_only(g);
        for v in g.operators() {
            let n = g.node(v).out_units;
            let (a, b) = points(v);
            plan.set(v, UnitRange::new(0, a.min(n)), UnitRange::new(b.min(n), n));
        }
        plan
    }

    /// Whether the two sides compute some units of an operator twice.
    pub fn has_replication(&self) -> bool {
        self.m.iter().zip(&self.r).any(|(m, r)| !m.intersect(r).is_empty())
    }

    pub fn to_doc(&self, g: &ModelGraph) -> PlanDoc {
        PlanDoc {
            plan_id: self.plan_id,
            ranges: g
                .operators()
                .map(|v| RangeDoc { node: g.node(v).id, m: self.m[v], r: self.r[v] })
                .collect(),
        }
    }

    pub fn from_doc(g: &ModelGraph, doc: &PlanDoc) -> Result<Self, ScheduleError> {
        let mut plan = plan_device_only(g);
        plan.plan_id = doc.plan_id;
        let mut seen = vec![false; g.len()];
        for rd in &doc.ranges {
            let v = g.index_of(rd.node).ok_or(ScheduleError::UnknownNode(rd.node))?;
            if g.node(v).is_virtual {
                return Err(ScheduleError::UnknownNode(rd.node));
            }
            seen[v] = true;
            plan.set(v, rd.m, rd.r);
        }
        if let Some(v) = g.operators().find(|&v| !seen[v]) {
            return Err(ScheduleError::ShapeMismatch(format!("plan has no ranges for node {}", g.node(v).id)));
        }
        Ok(plan)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RangeDoc {
    pub node: NodeId,
    pub m: UnitRange,
    pub r: UnitRange,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanDoc {
    pub plan_id: u32,
    pub ranges: Vec<RangeDoc>,
}

/// Everything on the device.
pub fn plan_device_only(g: &ModelGraph) -> SchedulePlan {
    let n = g.len();
    SchedulePlan {
        plan_id: 0,
        m: (0..n).map(|i| UnitRange::full(g.node(i).out_units)).collect(),
        r: vec![UnitRange::empty(); n],
    }
}

/// Every operator on the server; the virtual vertices stay on the device.
pub fn plan_server_only(g: &ModelGraph) -> SchedulePlan {
    let mut plan = plan_device_only(g);
    for v in g.operators() {
        let n = g.node(v).out_units;
        plan.set(v, UnitRange::empty(), UnitRange::full(n));
    }
    plan
}

/// Single-split plan: the first `split` operators (topological order) on the device, the rest on the server.
pub fn plan_layer_split(g: &ModelGraph, split: usize) -> SchedulePlan {
    let mut plan = plan_device_only(g);
    for (pos, v) in g.operators().enumerate() {
        if pos >= split {
            let n = g.node(v).out_units;
            plan.set(v, UnitRange::empty(), UnitRange::full(n));
        }
    }
    plan
}

/// One violated constraint of a plan.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub enum Violation {
    /// A range lies outside the operator's unit count.
    OutOfBounds { node: NodeId, device: Device },
    /// Some units are assigned to neither side.
    Coverage { node: NodeId, missing: UnitRange },
    /// Device range is not a prefix or server range is not a suffix.
    Orientation { node: NodeId, device: Device },
    /// Virtual input/output not wholly on the device.
    Location { node: NodeId, device: Device },
    /// Units cross the link right after an operator whose output exceeds the raw input.
    Oversize { u: NodeId, v: NodeId, device: Device },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::OutOfBounds { node, device } => write!(f, "range of node {node} on {device:?} is out of bounds"),
            Violation::Coverage { node, missing } => write!(f, "coverage: node {node} leaves units {missing:?} unassigned"),
            Violation::Orientation { node, device } => {
                write!(f, "orientation: node {node} on {device:?} must hold a {} range", if *device == Device::Mobile { "prefix" } else { "suffix" })
            }
            Violation::Location { node, device } => write!(f, "location: virtual node {node} has the wrong range on {device:?}"),
            Violation::Oversize { u, v, device } => {
                write!(f, "oversize: edge ({u}, {v}) transfers output of an oversized operator to {device:?}")
            }
        }
    }
}

/// Outcome of [`is_feasible`].
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Feasibility {
    pub violations: Vec<Violation>,
}

impl Feasibility {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

pub(crate) fn check_shape(g: &ModelGraph, plan: &SchedulePlan) -> Result<(), ScheduleError> {
    if plan.m.len() != g.len() || plan.r.len() != g.len() {
        return Err(ScheduleError::ShapeMismatch(format!(
            "plan covers {}/{} nodes, graph has {}",
            plan.m.len(),
            plan.r.len(),
            g.len()
        )));
    }
    Ok(())
}

/// Counts units sent across edges out of oversized operators.
pub(crate) fn oversize_violations(g: &ModelGraph, plan: &SchedulePlan, mut sink: impl FnMut(usize, Device)) {
    for u in 0..g.len() {
        if !g.is_oversize(u) {
            continue;
        }
        for &k in g.child_edges(u) {
            let w = g.edges()[k].v;
            for d in Device::BOTH {
                let rw = plan.range(d, w);
                if rw.is_empty() {
                    continue;
                }
                if g.node(w).halo(rw).difference_len(&plan.range(d, u)) > 0 {
                    sink(k, d);
                }
            }
        }
    }
}

/// Lists every constraint the plan violates.
pub fn is_feasible(g: &ModelGraph, plan: &SchedulePlan) -> Result<Feasibility, ScheduleError> {
    check_shape(g, plan)?;
    let mut violations = Vec::new();
    let (inp, out) = (g.input_index(), g.output_index());
    for i in 0..g.len() {
        let node = g.node(i);
        let n = node.out_units;
        let (m, r) = (plan.m[i], plan.r[i]);
        let mut bounded = true;
        for (d, range) in [(Device::Mobile, m), (Device::Server, r)] {
            if !range.within(n) {
                violations.push(Violation::OutOfBounds { node: node.id, device: d });
                bounded = false;
            }
        }
        if !bounded {
            continue;
        }
        if i == inp || i == out {
            if m != UnitRange::full(n) {
                violations.push(Violation::Location { node: node.id, device: Device::Mobile });
            }
            if !r.is_empty() {
                violations.push(Violation::Location { node: node.id, device: Device::Server });
            }
            continue;
        }
        if !m.is_empty() && m.lo != 0 {
            violations.push(Violation::Orientation { node: node.id, device: Device::Mobile });
        }
        if !r.is_empty() && r.hi != n {
            violations.push(Violation::Orientation { node: node.id, device: Device::Server });
        }
        let mut missing = UnitRange::empty();
        for unit in 0..n {
            if !m.contains_unit(unit) && !r.contains_unit(unit) {
                missing = if missing.is_empty() { UnitRange::new(unit, unit + 1) } else { UnitRange::new(missing.lo, unit + 1) };
            }
        }
        if !missing.is_empty() {
            violations.push(Violation::Coverage { node: node.id, missing });
        }
    }
    if violations.iter().all(|v| !matches!(v, Violation::OutOfBounds { .. })) {
        oversize_violations(g, plan, |k, d| {
            let e = g.edges()[k];
            violations.push(Violation::Oversize { u: g.node(e.u).id, v: g.node(e.v).id, device: d });
        });
    }
    Ok(Feasibility { violations })
}
