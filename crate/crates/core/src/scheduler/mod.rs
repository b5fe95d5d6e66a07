//! Local-operation scheduling: plans, feasibility, makespan evaluation,
//! the differential-evolution solver, baselines and the bandwidth plan table.

mod de;
mod eval;
mod plan;
mod table;

use thiserror::Error;

pub use de::{solve_loss, solve_loss_detailed, DEConfig, Solution};
pub use eval::{evaluate_makespan, makespan_with, MakespanReport, Scratch, Transfer};
pub use plan::{
    is_feasible, plan_device_only, plan_layer_split, plan_server_only, Feasibility, PlanDoc, RangeDoc, SchedulePlan,
    Violation,
};
pub use table::{build_plan_table, content_hash, BucketSpec, PlanTable, PlanTableDoc};

pub(crate) use eval::report_unchecked;

use crate::graph::{ModelGraph, NodeId};
use crate::profile::{LinkModel, ProfileTable};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScheduleError {
    #[error("plan shape does not match graph: {0}")]
    ShapeMismatch(String),
    #[error("infeasible plan: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    InfeasiblePlan(Vec<Violation>),
    #[error("no feasible individual found")]
    NoFeasibleIndividual,
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error("unknown node {0} in plan")]
    UnknownNode(NodeId),
    #[error("plan table: {0}")]
    Table(String),
}

/// Best single-split baseline: evaluates every split of the topological
/// order (prefix on the device, suffix on the server) and keeps the fastest,
/// preferring the lowest split index on ties. Split 0 is server-only and
/// split `n` is device-only. The oversize rule does not apply to this baseline.
pub fn best_layer_partition(g: &ModelGraph, profile: &ProfileTable, link: &LinkModel) -> (usize, MakespanReport) {
    let n = g.operators().count();
    let mut best: Option<(usize, MakespanReport)> = None;
    for split in 0..=n {
        let report = report_unchecked(g, profile, link, &plan_layer_split(g, split));
        if best.as_ref().is_none_or(|(_, b)| report.makespan < b.makespan) {
            best = Some((split, report));
        }
    }
    best.expect("at least one split")
}
