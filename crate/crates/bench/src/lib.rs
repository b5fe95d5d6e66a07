//! Benchmark fixtures.

use intradp_core::profile::{LinkModel, ProfileTable};
use intradp_core::scheduler::{plan_layer_split, DEConfig, SchedulePlan};
use intradp_core::synth::{vgg_like, VggLikeParams};
use intradp_core::ModelGraph;

pub struct Fixture {
    pub graph: ModelGraph,
    pub profile: ProfileTable,
    pub link: LinkModel,
    /// Split after the first pooling layer.
    pub plan: SchedulePlan,
}

/// VGG-like model on a 50 Mbps link with 1 ms per-message latency.
pub fn vgg_fixture() -> Fixture {
    let (graph, profile) = vgg_like(&VggLikeParams::default());
    let plan = plan_layer_split(&graph, 5);
    Fixture { graph, profile, link: LinkModel::from_mbps(50.0, 1e-3), plan }
}

/// Solver settings small enough for repeated timing.
pub fn quick_solver() -> DEConfig {
    DEConfig { population: 32, generations: 50, ..DEConfig::default() }
}
