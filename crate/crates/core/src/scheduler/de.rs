//! Differential evolution over per-operator split points.
//!
//! Each operator `v` with `n` units contributes the pair `(a, b)`: the device
//! computes `[0, a)`, the server `[b, n)`, and `[b, a)` is replicated. Genes
//! are real-valued in `[0, n]`, rounded when decoded, and swapped when
//! `b > a`. Oversize-constraint violations are penalised additively.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::eval::{run, Scratch};
use super::plan::{oversize_violations, plan_device_only, plan_layer_split, plan_server_only, SchedulePlan};
use super::ScheduleError;
use crate::graph::{ModelGraph, UnitRange};
use crate::profile::{LinkModel, ProfileTable};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DEConfig {
    pub population: usize,
    pub generations: usize,
    pub differential_weight: f64,
    pub crossover_rate: f64,
    pub seed: u64,
    pub seed_with_baselines: bool,
}

impl Default for DEConfig {
    fn default() -> Self {
        DEConfig {
            population: 64,
            generations: 300,
            differential_weight: 0.7,
            crossover_rate: 0.9,
            seed: 0,
            seed_with_baselines: true,
        }
    }
}

impl DEConfig {
    pub fn validate(&self) -> Result<(), ScheduleError> {
        if self.population < 4 {
            return Err(ScheduleError::InvalidConfig("population must be at least 4".into()));
        }
        if !(self.differential_weight > 0.0 && self.differential_weight <= 2.0) {
            return Err(ScheduleError::InvalidConfig("differential weight must lie in (0, 2]".into()));
        }
        if !(0.0..=1.0).contains(&self.crossover_rate) {
            return Err(ScheduleError::InvalidConfig("crossover rate must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Result of [`solve_loss_detailed`].
#[derive(Clone, Debug, PartialEq)]
pub struct Solution {
    pub plan: SchedulePlan,
    pub makespan: f64,
    pub evaluations: usize,
}

struct Problem<'a> {
    g: &'a ModelGraph,
    profile: &'a ProfileTable,
    link: &'a LinkModel,
    ops: Vec<usize>,
    units: Vec<usize>,
    penalty: f64,
}

#[derive(Clone, Copy)]
struct Score {
    fitness: f64,
    makespan: f64,
    feasible: bool,
}

impl Problem<'_> {
    fn decode(&self, genome: &[f64]) -> SchedulePlan {
        let mut plan = plan_device_only(self.g);
        for (i, &v) in self.ops.iter().enumerate() {
            let n = self.units[i];
            let clamp = |x: f64| (x.round().max(0.0) as usize).min(n);
            let (mut a, mut b) = (clamp(genome[2 * i]), clamp(genome[2 * i + 1]));
            if b > a {
                std::mem::swap(&mut a, &mut b);
            }
            plan.set(v, UnitRange::new(0, a), UnitRange::new(b, n));
        }
        plan
    }

    fn encode(&self, plan: &SchedulePlan) -> Vec<f64> {
        let mut genome = Vec::with_capacity(2 * self.ops.len());
        for (i, &v) in self.ops.iter().enumerate() {
            let (a, b) = plan.split_point(v, self.units[i]);
            genome.push(a as f64);
            genome.push(b as f64);
        }
        genome
    }

    fn score(&self, genome: &[f64], scratch: &mut Scratch) -> Score {
        let plan = self.decode(genome);
        let mut violations = 0usize;
        oversize_violations(self.g, &plan, |_, _| violations += 1);
        let makespan = run(self.g, self.profile, self.link, &plan, scratch, None);
        let fitness = makespan + self.penalty * violations as f64;
        Score { fitness, makespan, feasible: violations == 0 }
    }
}

/// Minimises makespan over split-point plans; see [`solve_loss_detailed`].
pub fn solve_loss(g: &ModelGraph, profile: &ProfileTable, link: &LinkModel, cfg: &DEConfig) -> Result<SchedulePlan, ScheduleError> {
    solve_loss_detailed(g, profile, link, cfg).map(|s| s.plan)
}

/// rand/1/bin differential evolution with greedy one-to-one selection.
///
/// With `seed_with_baselines`, the initial population holds the device-only,
/// server-only and every single-split plan, growing past `population` if
/// needed. Trials are evaluated in parallel; all random draws happen on one
/// seeded stream, so the result depends only on the inputs and `cfg.seed`.
pub fn solve_loss_detailed(g: &ModelGraph, profile: &ProfileTable, link: &LinkModel, cfg: &DEConfig) -> Result<Solution, ScheduleError> {
    cfg.validate()?;
    let ops: Vec<usize> = g.operators().collect();
    let units: Vec<usize> = ops.iter().map(|&v| g.node(v).out_units).collect();
    let mut scratch = Scratch::default();
    let device_only = run(g, profile, link, &plan_device_only(g), &mut scratch, None);
    let problem = Problem { g, profile, link, penalty: 10.0 * device_only, ops, units };
    let dims = 2 * problem.ops.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut pop: Vec<Vec<f64>> = Vec::new();
    if cfg.seed_with_baselines {
        pop.push(problem.encode(&plan_device_only(g)));
        pop.push(problem.encode(&plan_server_only(g)));
        for split in 1..problem.ops.len() {
            pop.push(problem.encode(&plan_layer_split(g, split)));
        }
    }
    let size = cfg.population.max(pop.len());
    while pop.len() < size {
        pop.push((0..dims).map(|j| rng.gen_range(0.0..=problem.units[j / 2] as f64)).collect());
    }

    let evaluate = |genomes: &[Vec<f64>]| -> Vec<Score> {
        genomes.par_iter().map_init(Scratch::default, |s, x| problem.score(x, s)).collect()
    };

    let mut scores = evaluate(&pop);
    let mut evaluations = pop.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let track = |x: &Vec<f64>, s: &Score, best: &mut Option<(f64, Vec<f64>)>| {
        if s.feasible && best.as_ref().is_none_or(|(m, _)| s.makespan < *m) {
            *best = Some((s.makespan, x.clone()));
        }
    };
    for (x, s) in pop.iter().zip(&scores) {
        track(x, s, &mut best);
    }

    for _ in 0..cfg.generations {
        let trials: Vec<Vec<f64>> = (0..size)
            .map(|i| {
                let picks = loop {
                    let p = sample(&mut rng, size, 3).into_vec();
                    if !p.contains(&i) {
                        break p;
                    }
                };
                let (x1, x2, x3) = (&pop[picks[0]], &pop[picks[1]], &pop[picks[2]]);
                let forced = rng.gen_range(0..dims);
                (0..dims)
                    .map(|j| {
                        if j == forced || rng.gen::<f64>() < cfg.crossover_rate {
                            let hi = problem.units[j / 2] as f64;
                            (x1[j] + cfg.differential_weight * (x2[j] - x3[j])).clamp(0.0, hi)
                        } else {
                            pop[i][j]
                        }
                    })
                    .collect()
            })
            .collect();
        let trial_scores = evaluate(&trials);
        evaluations += size;
        for (i, (trial, ts)) in trials.into_iter().zip(trial_scores).enumerate() {
            track(&trial, &ts, &mut best);
            if ts.fitness <= scores[i].fitness {
                pop[i] = trial;
                scores[i] = ts;
            }
        }
    }

    let (makespan, genome) = best.ok_or(ScheduleError::NoFeasibleIndividual)?;
    Ok(Solution { plan: problem.decode(&genome), makespan, evaluations })
}
