//! Bandwidth sweeps over the four systems and their aggregated reports.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::ModelGraph;
use crate::profile::{LinkModel, ProfileTable};
use crate::scheduler::{best_layer_partition, plan_device_only, plan_layer_split, plan_server_only, solve_loss, DEConfig, ScheduleError, SchedulePlan};
use crate::sim::{breakdown, energy_of, simulate, simulate_baseline, EnergyModel, SimError, Timeline};

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("invalid sweep: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("row fails conservation: {0}")]
    Conservation(String),
    #[error("report rows: {0}")]
    Csv(#[from] csv::Error),
    #[error("thread pool: {0}")]
    Pool(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemKind {
    #[serde(rename = "intradp")]
    IntraDp,
    DeviceOnly,
    ServerOnly,
    LayerPartition,
}

impl SystemKind {
    pub const ALL: [SystemKind; 4] = [SystemKind::IntraDp, SystemKind::DeviceOnly, SystemKind::ServerOnly, SystemKind::LayerPartition];

    pub fn name(self) -> &'static str {
        match self {
            SystemKind::IntraDp => "intradp",
            SystemKind::DeviceOnly => "device_only",
            SystemKind::ServerOnly => "server_only",
            SystemKind::LayerPartition => "layer_partition",
        }
    }
}

impl fmt::Display for SystemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SystemKind {
    type Err = SweepError;

    fn from_str(s: &str) -> Result<Self, SweepError> {
        SystemKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| SweepError::InvalidSpec(format!("unknown system {s:?}; expected one of intradp, device_only, server_only, layer_partition")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub bandwidths_mbps: Vec<f64>,
    pub systems: Vec<SystemKind>,
    pub repetitions: usize,
    /// Repetition `r` solves with seed `seed + r`.
    pub seed: u64,
    pub latency_s: f64,
    pub solver: DEConfig,
    pub energy: EnergyModel,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            bandwidths_mbps: (0..=20).map(|i| i as f64 * 10.0).collect(),
            systems: SystemKind::ALL.to_vec(),
            repetitions: 1,
            seed: 0,
            latency_s: 1e-3,
            solver: DEConfig::default(),
            energy: EnergyModel::default(),
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), SweepError> {
        if self.systems.is_empty() {
            return Err(SweepError::InvalidSpec("no systems selected".into()));
        }
        if self.repetitions == 0 {
            return Err(SweepError::InvalidSpec("repetitions must be at least 1".into()));
        }
        if self.bandwidths_mbps.is_empty() {
            return Err(SweepError::InvalidSpec("no bandwidths selected".into()));
        }
        if let Some(b) = self.bandwidths_mbps.iter().find(|b| !(**b >= 0.0)) {
            return Err(SweepError::InvalidSpec(format!("bandwidth {b} is negative or not a number")));
        }
        self.solver.validate()?;
        Ok(())
    }
}

/// Parses `a,b,c` lists and `start:stop:step` inclusive ranges.
pub fn parse_bandwidths(s: &str) -> Result<Vec<f64>, SweepError> {
    let bad = || SweepError::InvalidSpec(format!("cannot parse bandwidths {s:?}"));
    let parts: Vec<&str> = s.split(':').map(str::trim).collect();
    match parts.as_slice() {
        [start, stop, step] => {
            let (a, b, d) = (start.parse::<f64>().map_err(|_| bad())?, stop.parse::<f64>().map_err(|_| bad())?, step.parse::<f64>().map_err(|_| bad())?);
            if !(d > 0.0) || b < a {
                return Err(bad());
            }
            let n = ((b - a) / d + 1e-9).floor() as usize;
            Ok((0..=n).map(|i| a + i as f64 * d).collect())
        }
        [list] => list.split(',').map(|x| x.trim().parse::<f64>().map_err(|_| bad())).collect(),
        _ => Err(bad()),
    }
}

/// One simulated measurement.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub system: SystemKind,
    pub bandwidth_mbps: f64,
    pub repetition: usize,
    pub makespan_s: f64,
    pub energy_j: f64,
    pub m_compute_s: f64,
    pub r_compute_s: f64,
    pub transmit_s: f64,
    pub m_idle_s: f64,
    pub bytes_transferred: f64,
}

impl ReportRow {
    pub fn from_timeline(system: SystemKind, bandwidth_mbps: f64, repetition: usize, t: &Timeline, energy: &EnergyModel) -> Self {
        let b = breakdown(t);
        ReportRow {
            system,
            bandwidth_mbps,
            repetition,
            makespan_s: t.makespan,
            energy_j: energy_of(t, energy),
            m_compute_s: b.m_compute,
            r_compute_s: b.r_compute,
            transmit_s: b.transmit,
            m_idle_s: b.m_idle,
            bytes_transferred: t.bytes_transferred(),
        }
    }

    /// Device compute plus idle time must add up to the makespan.
    pub fn check_conservation(&self) -> Result<(), SweepError> {
        let fields = [self.m_compute_s, self.r_compute_s, self.transmit_s, self.bytes_transferred];
        if fields.iter().any(|x| *x < 0.0) {
            return Err(SweepError::Conservation(format!("{} at {} Mbps has a negative component", self.system, self.bandwidth_mbps)));
        }
        if self.makespan_s.is_finite() && (self.m_compute_s + self.m_idle_s - self.makespan_s).abs() > 1e-9 {
            return Err(SweepError::Conservation(format!(
                "{} at {} Mbps: compute {} + idle {} != makespan {}",
                self.system, self.bandwidth_mbps, self.m_compute_s, self.m_idle_s, self.makespan_s
            )));
        }
        Ok(())
    }
}

/// Plan a system runs at `mbps`, and whether it must obey the oversize rule.
pub fn system_plan(g: &ModelGraph, profile: &ProfileTable, system: SystemKind, link: &LinkModel, cfg: &DEConfig) -> Result<(SchedulePlan, bool), SweepError> {
    Ok(match system {
        SystemKind::IntraDp => (solve_loss(g, profile, link, cfg)?, true),
        SystemKind::DeviceOnly => (plan_device_only(g), false),
        SystemKind::ServerOnly => (plan_server_only(g), false),
        SystemKind::LayerPartition => (plan_layer_split(g, best_layer_partition(g, profile, link).0), false),
    })
}

/// Simulates every (bandwidth, system, repetition) point on up to `jobs`
/// threads. Rows come back sorted by bandwidth, then system, then repetition,
/// whatever the completion order.
pub fn run_sweep(g: &ModelGraph, profile: &ProfileTable, spec: &SweepSpec, jobs: usize) -> Result<Vec<ReportRow>, SweepError> {
    spec.validate()?;
    let mut systems = spec.systems.clone();
    systems.sort();
    systems.dedup();
    let mut points = Vec::new();
    for (bi, &mbps) in spec.bandwidths_mbps.iter().enumerate() {
        for &system in &systems {
            for rep in 0..spec.repetitions {
                points.push((bi, mbps, system, rep));
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build().map_err(|e| SweepError::Pool(e.to_string()))?;
    let mut rows: Vec<(usize, ReportRow)> = pool.install(|| {
        points
            .par_iter()
            .map(|&(bi, mbps, system, rep)| {
                let link = LinkModel::from_mbps(mbps, spec.latency_s);
                let cfg = DEConfig { seed: spec.seed.wrapping_add(rep as u64), ..spec.solver.clone() };
                let (plan, strict) = system_plan(g, profile, system, &link, &cfg)?;
                let t = if strict { simulate(g, profile, &link, &plan)? } else { simulate_baseline(g, profile, &link, &plan)? };
                let row = ReportRow::from_timeline(system, mbps, rep, &t, &spec.energy);
                row.check_conservation()?;
                Ok((bi, row))
            })
            .collect::<Result<Vec<_>, SweepError>>()
    })?;
    rows.sort_by(|(a, x), (b, y)| a.cmp(b).then(x.system.cmp(&y.system)).then(x.repetition.cmp(&y.repetition)));
    Ok(rows.into_iter().map(|(_, r)| r).collect())
}

pub fn rows_to_csv(rows: &[ReportRow]) -> Result<String, SweepError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| SweepError::Pool(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Parses rows written by [`rows_to_csv`], re-checking conservation.
pub fn rows_from_csv(text: &str) -> Result<Vec<ReportRow>, SweepError> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let rows = r.deserialize().collect::<Result<Vec<ReportRow>, _>>()?;
    for row in &rows {
        row.check_conservation()?;
    }
    Ok(rows)
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

/// Median over repetitions of each (system, bandwidth) point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub bandwidth_mbps: f64,
    pub system: SystemKind,
    pub makespan_s: f64,
    pub energy_j: f64,
    pub m_compute_s: f64,
    pub r_compute_s: f64,
    pub transmit_s: f64,
    pub m_idle_s: f64,
    pub bytes_transferred: f64,
    /// Makespan of the fastest other system divided by this one.
    pub speedup_vs_best_other: f64,
}

pub fn summarize(rows: &[ReportRow]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(u64, SystemKind), Vec<&ReportRow>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.bandwidth_mbps.to_bits(), r.system)).or_default().push(r);
    }
    let mut out: Vec<SummaryRow> = groups
        .values()
        .map(|g| {
            let m = |f: fn(&ReportRow) -> f64| median(g.iter().map(|r| f(r)).collect());
            SummaryRow {
                bandwidth_mbps: g[0].bandwidth_mbps,
                system: g[0].system,
                makespan_s: m(|r| r.makespan_s),
                energy_j: m(|r| r.energy_j),
                m_compute_s: m(|r| r.m_compute_s),
                r_compute_s: m(|r| r.r_compute_s),
                transmit_s: m(|r| r.transmit_s),
                m_idle_s: m(|r| r.m_idle_s),
                bytes_transferred: m(|r| r.bytes_transferred),
                speedup_vs_best_other: f64::NAN,
            }
        })
        .collect();
    out.sort_by(|a, b| a.bandwidth_mbps.total_cmp(&b.bandwidth_mbps).then(a.system.cmp(&b.system)));
    for i in 0..out.len() {
        let best_other = out
            .iter()
            .filter(|o| o.bandwidth_mbps == out[i].bandwidth_mbps && o.system != out[i].system)
            .map(|o| o.makespan_s)
            .fold(f64::INFINITY, f64::min);
        out[i].speedup_vs_best_other = best_other / out[i].makespan_s;
    }
    out
}

pub fn summary_to_csv(rows: &[SummaryRow]) -> Result<String, SweepError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| SweepError::Pool(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Aligned text table: one line per bandwidth, median makespan and energy per system.
pub fn comparison_table(summary: &[SummaryRow]) -> String {
    let mut systems: Vec<SystemKind> = summary.iter().map(|r| r.system).collect();
    systems.sort();
    systems.dedup();
    let mut out = format!("{:>10}", "mbps");
    for s in &systems {
        out.push_str(&format!(" {:>18} {:>18}", format!("{s}_ms"), format!("{s}_j")));
    }
    out.push('\n');
    let mut by_bw: BTreeMap<u64, Vec<&SummaryRow>> = BTreeMap::new();
    for r in summary {
        by_bw.entry(r.bandwidth_mbps.to_bits()).or_default().push(r);
    }
    let mut bws: Vec<&Vec<&SummaryRow>> = by_bw.values().collect();
    bws.sort_by(|a, b| a[0].bandwidth_mbps.total_cmp(&b[0].bandwidth_mbps));
    for rows in bws {
        out.push_str(&format!("{:>10}", rows[0].bandwidth_mbps));
        for s in &systems {
            match rows.iter().find(|r| r.system == *s) {
                Some(r) => out.push_str(&format!(" {:>18.3} {:>18.4}", r.makespan_s * 1e3, r.energy_j)),
                None => out.push_str(&format!(" {:>18} {:>18}", "-", "-")),
            }
        }
        out.push('\n');
    }
    out
}
