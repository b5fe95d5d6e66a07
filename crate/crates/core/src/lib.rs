//! Intra-operator parallel inference across a mobile device and an edge server.
//!
//! Operators are split along their unit axis; each side computes a
//! contiguous range and exchanges only the halo its children need.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod graph;
pub mod kernels;
pub mod profile;
pub mod runtime;
pub mod scheduler;
pub mod sim;
pub mod sweep;
pub mod synth;

pub use graph::{build_graph, GraphError, ModelDoc, ModelGraph, NodeId, OperatorKind, OperatorNode, UnitRange};
pub use kernels::{ExecModel, Kernel, KernelDoc, KernelError, Tensor1D, TensorPart};
pub use profile::{Device, DeviceCost, LinkModel, ProfileDoc, ProfileError, ProfileTable};
pub use scheduler::{
    build_plan_table, evaluate_makespan, solve_loss, DEConfig, PlanTable, ScheduleError, SchedulePlan,
};
pub use sim::{simulate, EnergyModel, SimError, Timeline};
