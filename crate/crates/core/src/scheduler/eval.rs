//! Makespan of a plan via the start-time recurrence.
//!
//! Nodes are visited in topological order. Each device runs its batches
//! serially in that order; a batch starts once the device is free, its
//! locally produced inputs are done and every cross-device transfer it needs
//! has arrived. A transfer for edge `(u, v)` is queued on the link in the
//! direction of the consumer as soon as the producer's batch finishes. Each
//! link direction is a FIFO; the two directions are independent.

use serde::Serialize;

use super::plan::{check_shape, is_feasible, SchedulePlan};
use super::ScheduleError;
use crate::graph::{ModelGraph, NodeId, UnitRange};
use crate::profile::{Device, LinkModel, ProfileTable};

/// One cross-device transfer.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Transfer {
    pub edge: usize,
    pub u: NodeId,
    pub v: NodeId,
    /// Sending side.
    pub from: Device,
    pub units: UnitRange,
    pub bytes: f64,
    pub start: f64,
    pub end: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MakespanReport {
    /// Time the final result is available on the device.
    pub makespan: f64,
    /// Batch start per node and device; `None` when the device runs nothing for that node.
    pub start: Vec<[Option<f64>; 2]>,
    pub finish: Vec<[Option<f64>; 2]>,
    pub transfers: Vec<Transfer>,
}

impl MakespanReport {
    pub fn bytes_transferred(&self) -> f64 {
        self.transfers.iter().map(|t| t.bytes).sum()
    }
}

/// Reusable buffers for repeated evaluation.
#[derive(Default, Clone, Debug)]
pub struct Scratch {
    start: Vec<[f64; 2]>,
    finish: Vec<[f64; 2]>,
    arrival: Vec<[f64; 2]>,
}

impl Scratch {
    fn reset(&mut self, nodes: usize, edges: usize) {
        self.start.clear();
        self.start.resize(nodes, [f64::NAN; 2]);
        self.finish.clear();
        self.finish.resize(nodes, [f64::NAN; 2]);
        self.arrival.clear();
        self.arrival.resize(edges, [f64::NAN; 2]);
    }
}

/// Runs the recurrence; the plan must satisfy coverage and orientation.
pub(crate) fn run(
    g: &ModelGraph,
    profile: &ProfileTable,
    link: &LinkModel,
    plan: &SchedulePlan,
    s: &mut Scratch,
    mut transfers: Option<&mut Vec<Transfer>>,
) -> f64 {
    s.reset(g.len(), g.edges().len());
    let edges = g.edges();
    let mut stream_free = [0.0f64; 2];
    let mut link_free = [0.0f64; 2];
    for &v in g.topo_order() {
        let node = g.node(v);
        for d in Device::BOTH {
            let range = plan.range(d, v);
            if range.is_empty() {
                continue;
            }
            let di = d.index();
            let need = node.halo(range);
            let mut ready = stream_free[di];
            for &k in g.parent_edges(v) {
                let u = edges[k].u;
                let local = plan.range(d, u);
                if !need.intersect(&local).is_empty() {
                    ready = ready.max(s.finish[u][di]);
                }
                if need.difference_len(&local) > 0 {
                    ready = ready.max(s.arrival[k][di]);
                }
            }
            let done = ready + profile.cost(d, v).batch(range.len());
            s.start[v][di] = ready;
            s.finish[v][di] = done;
            stream_free[di] = done;
        }
        for &k in g.child_edges(v) {
            let w = edges[k].v;
            for d in Device::BOTH {
                let rw = plan.range(d, w);
                if rw.is_empty() {
                    continue;
                }
                let need = g.node(w).halo(rw);
                let local = plan.range(d, v);
                let remote = need.difference_len(&local);
                if remote == 0 {
                    continue;
                }
                let src = d.other().index();
                debug_assert!(!plan.range(d.other(), v).is_empty(), "coverage violated");
                let bytes = remote as f64 * profile.edge_bytes_per_unit(k);
                let start = link_free[src].max(s.finish[v][src]);
                let end = start + link.tx_time(bytes);
                link_free[src] = end;
                s.arrival[k][d.index()] = end;
                if let Some(out) = transfers.as_deref_mut() {
                    let [left, right] = need.difference(&local);
                    let units = if right.is_empty() { left } else if left.is_empty() { right } else { UnitRange::new(left.lo, right.hi) };
                    out.push(Transfer {
                        edge: k,
                        u: node.id,
                        v: g.node(w).id,
                        from: d.other(),
                        units,
                        bytes,
                        start,
                        end,
                    });
                }
            }
        }
    }
    s.start[g.output_index()][0]
}

fn opt(x: f64) -> Option<f64> {
    if x.is_nan() {
        None
    } else {
        Some(x)
    }
}

/// Full report without the feasibility gate; coverage and orientation must hold.
pub(crate) fn report_unchecked(g: &ModelGraph, profile: &ProfileTable, link: &LinkModel, plan: &SchedulePlan) -> MakespanReport {
    let mut s = Scratch::default();
    let mut transfers = Vec::new();
    let makespan = run(g, profile, link, plan, &mut s, Some(&mut transfers));
    MakespanReport {
        makespan,
        start: s.start.iter().map(|t| [opt(t[0]), opt(t[1])]).collect(),
        finish: s.finish.iter().map(|t| [opt(t[0]), opt(t[1])]).collect(),
        transfers,
    }
}

/// Makespan and timing of a feasible plan.
pub fn evaluate_makespan(
    g: &ModelGraph,
    profile: &ProfileTable,
    link: &LinkModel,
    plan: &SchedulePlan,
) -> Result<MakespanReport, ScheduleError> {
    let verdict = is_feasible(g, plan)?;
    if !verdict.is_ok() {
        return Err(ScheduleError::InfeasiblePlan(verdict.violations));
    }
    Ok(report_unchecked(g, profile, link, plan))
}

/// Makespan only, reusing `scratch`. The plan must be coverage/orientation-valid.
pub fn makespan_with(g: &ModelGraph, profile: &ProfileTable, link: &LinkModel, plan: &SchedulePlan, scratch: &mut Scratch) -> Result<f64, ScheduleError> {
    check_shape(g, plan)?;
    Ok(run(g, profile, link, plan, scratch, None))
}
