use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::de::{solve_loss, DEConfig};
use super::plan::{plan_device_only, PlanDoc, SchedulePlan};
use super::ScheduleError;
use crate::graph::ModelGraph;
use crate::profile::{LinkModel, ProfileTable};

/// Bandwidth bucketing of a plan table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketSpec {
    pub width_mbps: f64,
    pub max_mbps: f64,
    /// Per-message link latency assumed when solving each bucket.
    pub latency_s: f64,
}

impl Default for BucketSpec {
    fn default() -> Self {
        BucketSpec { width_mbps: 1.0, max_mbps: 200.0, latency_s: 1e-3 }
    }
}

impl BucketSpec {
    pub fn count(&self) -> usize {
        (self.max_mbps / self.width_mbps).floor() as usize + 1
    }

    /// Bandwidth each bucket is solved at: its midpoint, capped at the maximum.
    pub fn solve_point(&self, bucket: usize) -> f64 {
        ((bucket as f64 + 0.5) * self.width_mbps).min(self.max_mbps)
    }
}

/// Precomputed plans indexed by bandwidth bucket.
#[derive(Clone, Debug, PartialEq)]
pub struct PlanTable {
    pub bucket_width_mbps: f64,
    pub max_mbps: f64,
    pub content_hash: String,
    pub plans: Vec<SchedulePlan>,
}

impl PlanTable {
    /// Table from explicit plans, one per bucket, hashed over the model and the plans.
    pub fn from_plans(g: &ModelGraph, bucket_width_mbps: f64, mut plans: Vec<SchedulePlan>) -> Result<Self, ScheduleError> {
        if !(bucket_width_mbps > 0.0) || plans.is_empty() {
            return Err(ScheduleError::Table("need a positive bucket width and at least one plan".into()));
        }
        for (i, p) in plans.iter_mut().enumerate() {
            super::plan::check_shape(g, p)?;
            p.plan_id = i as u32;
        }
        let max_mbps = (plans.len() - 1) as f64 * bucket_width_mbps;
        let docs: Vec<PlanDoc> = plans.iter().map(|p| p.to_doc(g)).collect();
        let canonical = serde_json::json!({ "model": g.to_doc(), "plans": docs, "bucket_width_mbps": bucket_width_mbps });
        let content_hash = hex::encode(Sha256::digest(canonical.to_string().as_bytes()));
        Ok(PlanTable { bucket_width_mbps, max_mbps, content_hash, plans })
    }

    pub fn bucket_for(&self, mbps: f64) -> usize {
        let b = mbps.clamp(0.0, self.max_mbps);
        let idx = (b / self.bucket_width_mbps).floor();
        if idx.is_nan() {
            0
        } else {
            (idx as usize).min(self.plans.len().saturating_sub(1))
        }
    }

    pub fn lookup(&self, mbps: f64) -> &SchedulePlan {
        &self.plans[self.bucket_for(mbps)]
    }

    pub fn to_doc(&self, g: &ModelGraph) -> PlanTableDoc {
        PlanTableDoc {
            bucket_width_mbps: self.bucket_width_mbps,
            max_mbps: self.max_mbps,
            content_hash: self.content_hash.clone(),
            plans: self.plans.iter().map(|p| p.to_doc(g)).collect(),
        }
    }

    pub fn from_doc(g: &ModelGraph, doc: &PlanTableDoc) -> Result<Self, ScheduleError> {
        if !(doc.bucket_width_mbps > 0.0) {
            return Err(ScheduleError::Table("bucket width must be positive".into()));
        }
        let plans = doc.plans.iter().map(|p| SchedulePlan::from_doc(g, p)).collect::<Result<Vec<_>, _>>()?;
        let expected = (doc.max_mbps / doc.bucket_width_mbps).floor() as usize + 1;
        if plans.len() != expected {
            return Err(ScheduleError::Table(format!("expected {expected} plans, found {}", plans.len())));
        }
        Ok(PlanTable { bucket_width_mbps: doc.bucket_width_mbps, max_mbps: doc.max_mbps, content_hash: doc.content_hash.clone(), plans })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanTableDoc {
    pub bucket_width_mbps: f64,
    pub max_mbps: f64,
    pub content_hash: String,
    pub plans: Vec<PlanDoc>,
}

impl PlanTableDoc {
    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plan table serializes")
    }
}

/// SHA-256 over the canonical JSON of everything a table depends on.
pub fn content_hash(g: &ModelGraph, profile: &ProfileTable, buckets: &BucketSpec, cfg: &DEConfig) -> String {
    let canonical = serde_json::json!({
        "model": g.to_doc(),
        "profile": profile.to_doc(g),
        "buckets": buckets,
        "solver": cfg,
    });
    hex::encode(Sha256::digest(canonical.to_string().as_bytes()))
}

/// Solves every bucket (bucket 0 is pinned to device-only).
pub fn build_plan_table(g: &ModelGraph, profile: &ProfileTable, buckets: &BucketSpec, cfg: &DEConfig) -> Result<PlanTable, ScheduleError> {
    if !(buckets.width_mbps > 0.0) || !(buckets.max_mbps >= 0.0) {
        return Err(ScheduleError::Table("bucket width must be positive and maximum non-negative".into()));
    }
    cfg.validate()?;
    let plans = (0..buckets.count())
        .into_par_iter()
        .map(|i| {
            let mut plan = if i == 0 {
                plan_device_only(g)
            } else {
                let link = LinkModel::from_mbps(buckets.solve_point(i), buckets.latency_s);
                solve_loss(g, profile, &link, cfg)?
            };
            plan.plan_id = i as u32;
            Ok(plan)
        })
        .collect::<Result<Vec<_>, ScheduleError>>()?;
    Ok(PlanTable {
        bucket_width_mbps: buckets.width_mbps,
        max_mbps: buckets.max_mbps,
        content_hash: content_hash(g, profile, buckets, cfg),
        plans,
    })
}
