//! Discrete-event execution of a plan, plus energy and phase accounting.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::ModelGraph;
use crate::profile::{Device, LinkModel, ProfileTable};
use crate::scheduler::{is_feasible, SchedulePlan, ScheduleError, Violation};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("infeasible plan: {0:?}")]
    InfeasiblePlan(Vec<Violation>),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error("simulation stalled with work remaining")]
    Deadlock,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Resource {
    MCompute,
    RCompute,
    LinkMR,
    LinkRM,
}

impl Resource {
    fn compute(d: Device) -> Resource {
        match d {
            Device::Mobile => Resource::MCompute,
            Device::Server => Resource::RCompute,
        }
    }

    fn link_from(d: Device) -> Resource {
        match d {
            Device::Mobile => Resource::LinkMR,
            Device::Server => Resource::LinkRM,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Resource::MCompute => "m_compute",
            Resource::RCompute => "r_compute",
            Resource::LinkMR => "link_mr",
            Resource::LinkRM => "link_rm",
        }
    }

    pub fn is_link(self) -> bool {
        matches!(self, Resource::LinkMR | Resource::LinkRM)
    }
}

impl fmt::Display for Resource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimelineEvent {
    pub resource: Resource,
    /// `node:<id>` for compute, `edge:<u>-<v>` for transfers.
    pub label: String,
    pub start: f64,
    pub end: f64,
    /// Payload of a transfer; zero for compute.
    pub bytes: f64,
}

impl TimelineEvent {
    /// Events that never start, behind an unbounded wait, take no time.
    pub fn duration(&self) -> f64 {
        if self.start.is_finite() {
            self.end - self.start
        } else {
            0.0
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timeline {
    pub events: Vec<TimelineEvent>,
    pub makespan: f64,
}

impl Timeline {
    pub fn on(&self, r: Resource) -> impl Iterator<Item = &TimelineEvent> {
        self.events.iter().filter(move |e| e.resource == r)
    }

    pub fn bytes_transferred(&self) -> f64 {
        self.events.iter().map(|e| e.bytes).sum()
    }

    pub fn bytes_free(&self) -> bool {
        self.events.iter().all(|e| !e.resource.is_link())
    }

    /// `resource,label,start_s,end_s` rows with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("resource,label,start_s,end_s\n");
        for e in &self.events {
            let _ = writeln!(out, "{},{},{},{}", e.resource, e.label, e.start, e.end);
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Time(f64);

impl Eq for Time {}

impl PartialOrd for Time {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Time {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Kind {
    ComputeDone { device: Device, node: usize },
    TransferDone { from: Device, edge: usize },
}

#[derive(PartialEq, Eq)]
struct Pending {
    time: Time,
    seq: u64,
    kind: Kind,
}

impl Ord for Pending {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on (time, seq)
        (other.time, other.seq).cmp(&(self.time, self.seq))
    }
}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct QueuedTransfer {
    edge: usize,
    bytes: f64,
}

struct Sim<'a> {
    g: &'a ModelGraph,
    profile: &'a ProfileTable,
    link: &'a LinkModel,
    plan: &'a SchedulePlan,
    heap: BinaryHeap<Pending>,
    seq: u64,
    /// Per device: node indices with work, topological order.
    batches: [Vec<usize>; 2],
    next: [usize; 2],
    busy: [bool; 2],
    done: Vec<[bool; 2]>,
    /// Per edge, per consumer device: remote units still in flight.
    waiting: Vec<[bool; 2]>,
    queues: [VecDeque<QueuedTransfer>; 2],
    link_busy: [bool; 2],
    events: Vec<TimelineEvent>,
    makespan: Option<f64>,
}

impl<'a> Sim<'a> {
    fn push(&mut self, time: f64, kind: Kind) {
        self.seq += 1;
        self.heap.push(Pending { time: Time(time), seq: self.seq, kind });
    }

    fn needs_remote(&self, d: Device, edge: usize) -> bool {
        let e = self.g.edges()[edge];
        let rv = self.plan.range(d, e.v);
        !rv.is_empty() && self.g.node(e.v).halo(rv).difference_len(&self.plan.range(d, e.u)) > 0
    }

    fn try_launch(&mut self, d: Device, now: f64) {
        let di = d.index();
        if self.busy[di] || self.next[di] >= self.batches[di].len() {
            return;
        }
        let v = self.batches[di][self.next[di]];
        let ready = self.g.parent_edges(v).iter().all(|&k| {
            let u = self.g.edges()[k].u;
            let need = self.g.node(v).halo(self.plan.range(d, v));
            let local_ok = need.intersect(&self.plan.range(d, u)).is_empty() || self.done[u][di];
            local_ok && !self.waiting[k][di]
        });
        if !ready {
            return;
        }
        self.next[di] += 1;
        self.busy[di] = true;
        let count = self.plan.range(d, v).len();
        let end = now + self.profile.cost(d, v).batch(count);
        let node = self.g.node(v);
        if v == self.g.output_index() && d == Device::Mobile {
            self.makespan = Some(now);
        }
        if !node.is_virtual {
            self.events.push(TimelineEvent { resource: Resource::compute(d), label: format!("node:{}", node.id), start: now, end, bytes: 0.0 });
        }
        self.push(end, Kind::ComputeDone { device: d, node: v });
    }

    fn try_start_link(&mut self, from: Device, now: f64) {
        let fi = from.index();
        if self.link_busy[fi] {
            return;
        }
        let Some(t) = self.queues[fi].pop_front() else {
            return;
        };
        self.link_busy[fi] = true;
        let end = now + self.link.tx_time(t.bytes);
        let e = self.g.edges()[t.edge];
        self.events.push(TimelineEvent {
            resource: Resource::link_from(from),
            label: format!("edge:{}-{}", self.g.node(e.u).id, self.g.node(e.v).id),
            start: now,
            end,
            bytes: t.bytes,
        });
        self.push(end, Kind::TransferDone { from, edge: t.edge });
    }

    fn run(mut self) -> Result<Timeline, SimError> {
        self.try_launch(Device::Mobile, 0.0);
        self.try_launch(Device::Server, 0.0);
        while let Some(Pending { time: Time(now), kind, .. }) = self.heap.pop() {
            match kind {
                Kind::ComputeDone { device, node } => {
                    let di = device.index();
                    self.busy[di] = false;
                    self.done[node][di] = true;
                    let target = device.other();
                    for &k in self.g.child_edges(node) {
                        if self.needs_remote(target, k) {
                            let e = self.g.edges()[k];
                            let rw = self.plan.range(target, e.v);
                            let units = self.g.node(e.v).halo(rw).difference_len(&self.plan.range(target, node));
                            let bytes = units as f64 * self.profile.edge_bytes_per_unit(k);
                            self.queues[di].push_back(QueuedTransfer { edge: k, bytes });
                        }
                    }
                    self.try_start_link(device, now);
                    self.try_launch(device, now);
                }
                Kind::TransferDone { from, edge } => {
                    let fi = from.index();
                    self.link_busy[fi] = false;
                    self.waiting[edge][from.other().index()] = false;
                    self.try_start_link(from, now);
                    self.try_launch(from.other(), now);
                }
            }
        }
        let finished = (0..2).all(|d| self.next[d] == self.batches[d].len()) && !self.busy.iter().any(|&b| b);
        match self.makespan {
            Some(makespan) if finished => Ok(Timeline { events: self.events, makespan }),
            _ => Err(SimError::Deadlock),
        }
    }
}

/// Event-driven execution of a feasible plan.
///
/// Each device runs one batch per assigned operator, serially in topological
/// order, launching once every needed unit is present locally. A finished
/// batch immediately queues the units its consumers on the other side lack;
/// each link direction serves its queue first-in first-out.
pub fn simulate(g: &ModelGraph, profile: &ProfileTable, link: &LinkModel, plan: &SchedulePlan) -> Result<Timeline, SimError> {
    simulate_checked(g, profile, link, plan, false)
}

/// [`simulate`] for baseline plans, which may ship the output of an oversized
/// operator across the link. All other constraints still apply.
pub fn simulate_baseline(g: &ModelGraph, profile: &ProfileTable, link: &LinkModel, plan: &SchedulePlan) -> Result<Timeline, SimError> {
    simulate_checked(g, profile, link, plan, true)
}

fn simulate_checked(g: &ModelGraph, profile: &ProfileTable, link: &LinkModel, plan: &SchedulePlan, allow_oversize: bool) -> Result<Timeline, SimError> {
    let mut violations = is_feasible(g, plan)?.violations;
    if allow_oversize {
        violations.retain(|v| !matches!(v, Violation::Oversize { .. }));
    }
    if !violations.is_empty() {
        return Err(SimError::InfeasiblePlan(violations));
    }
    let batches = Device::BOTH.map(|d| g.topo_order().iter().copied().filter(|&v| !plan.range(d, v).is_empty()).collect());
    let mut sim = Sim {
        g,
        profile,
        link,
        plan,
        heap: BinaryHeap::new(),
        seq: 0,
        batches,
        next: [0, 0],
        busy: [false, false],
        done: vec![[false; 2]; g.len()],
        waiting: vec![[false; 2]; g.edges().len()],
        queues: [VecDeque::new(), VecDeque::new()],
        link_busy: [false, false],
        events: Vec::new(),
        makespan: None,
    };
    for k in 0..g.edges().len() {
        for d in Device::BOTH {
            sim.waiting[k][d.index()] = sim.needs_remote(d, k);
        }
    }
    sim.run()
}

/// Power draw of the device in each state, in watts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyModel {
    pub p_inference: f64,
    pub p_communication: f64,
    pub p_standby: f64,
}

impl Default for EnergyModel {
    /// Draw of an embedded robot board: inference, communication, standby.
    fn default() -> Self {
        EnergyModel { p_inference: 13.35, p_communication: 4.25, p_standby: 4.04 }
    }
}

fn merged(mut spans: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    spans.retain(|(a, b)| b > a);
    spans.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.total_cmp(&y.1)));
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(spans.len());
    for (a, b) in spans {
        match out.last_mut() {
            Some(last) if a <= last.1 => last.1 = last.1.max(b),
            _ => out.push((a, b)),
        }
    }
    out
}

fn total(spans: &[(f64, f64)]) -> f64 {
    spans.iter().map(|(a, b)| b - a).sum()
}

fn overlap(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
    let (mut i, mut j, mut acc) = (0, 0, 0.0);
    while i < a.len() && j < b.len() {
        let lo = a[i].0.max(b[j].0);
        let hi = a[i].1.min(b[j].1);
        if hi > lo {
            acc += hi - lo;
        }
        if a[i].1 < b[j].1 {
            i += 1;
        } else {
            j += 1;
        }
    }
    acc
}

fn spans(t: &Timeline, pred: impl Fn(Resource) -> bool) -> Vec<(f64, f64)> {
    merged(t.events.iter().filter(|e| pred(e.resource)).map(|e| (e.start.min(t.makespan), e.end.min(t.makespan))).collect())
}

/// Device-side energy per inference in joules.
///
/// Compute time draws inference power; link activity while the device is not
/// computing draws communication power; the rest of the makespan is standby.
pub fn energy_of(t: &Timeline, e: &EnergyModel) -> f64 {
    if !t.makespan.is_finite() {
        return f64::INFINITY;
    }
    let compute = spans(t, |r| r == Resource::MCompute);
    let link = spans(t, Resource::is_link);
    let busy = total(&compute);
    let comm = total(&link) - overlap(&link, &compute);
    let standby = (t.makespan - busy - comm).max(0.0);
    e.p_inference * busy + e.p_communication * comm + e.p_standby * standby
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseBreakdown {
    pub m_compute: f64,
    pub r_compute: f64,
    /// Time at least one link direction is busy.
    pub transmit: f64,
    pub m_idle: f64,
}

pub fn breakdown(t: &Timeline) -> PhaseBreakdown {
    // adding 0.0 turns the empty sum's -0.0 into 0.0
    let sum = |r: Resource| t.on(r).map(TimelineEvent::duration).sum::<f64>() + 0.0;
    let m_compute = sum(Resource::MCompute);
    let transmit = if t.makespan.is_finite() {
        total(&spans(t, Resource::is_link)) + 0.0
    } else {
        f64::INFINITY
    };
    PhaseBreakdown { m_compute, r_compute: sum(Resource::RCompute), transmit, m_idle: t.makespan - m_compute }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(resource: Resource, start: f64, end: f64) -> TimelineEvent {
        TimelineEvent { resource, label: String::new(), start, end, bytes: 0.0 }
    }

    #[test]
    fn energy_matches_hand_computation() {
        let t = Timeline {
            events: vec![ev(Resource::MCompute, 0.0, 0.1), ev(Resource::LinkMR, 0.1, 0.15)],
            makespan: 0.17,
        };
        let joules = energy_of(&t, &EnergyModel::default());
        let expected = 0.1 * 13.35 + 0.05 * 4.25 + 0.02 * 4.04;
        assert!((joules - expected).abs() < 1e-9);
        assert!((joules - 1.6283).abs() < 1e-9);
    }

    #[test]
    fn overlapping_link_and_compute_counts_as_compute() {
        let t = Timeline {
            events: vec![
                ev(Resource::MCompute, 0.0, 0.1),
                ev(Resource::LinkMR, 0.05, 0.2),
                ev(Resource::LinkRM, 0.15, 0.25),
            ],
            makespan: 0.3,
        };
        let e = EnergyModel { p_inference: 10.0, p_communication: 2.0, p_standby: 1.0 };
        // compute 0.1, link-only 0.15, standby 0.05
        assert!((energy_of(&t, &e) - (1.0 + 0.3 + 0.05)).abs() < 1e-12);
        let b = breakdown(&t);
        assert!((b.transmit - 0.2).abs() < 1e-12);
        assert!((b.m_idle - 0.2).abs() < 1e-12);
    }

    #[test]
    fn empty_timeline_costs_nothing() {
        let t = Timeline { events: vec![], makespan: 0.0 };
        assert_eq!(energy_of(&t, &EnergyModel::default()), 0.0);
        assert_eq!(breakdown(&t), PhaseBreakdown { m_compute: 0.0, r_compute: 0.0, transmit: 0.0, m_idle: 0.0 });
    }
}
