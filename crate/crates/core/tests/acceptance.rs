//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::time::{Duration, Instant};

use intradp_core::graph::{build_graph, BlockParams, KindTag, ModelDoc, ModelGraph, NodeDoc, OperatorKind, UnitRange};
use intradp_core::kernels::{apply_range, ExecModel, Kernel, KernelDoc, KernelEntry, Tensor1D, TensorPart};
use intradp_core::profile::{synth_profile, Device, DeviceCost, LinkModel, ProfileTable, SynthParams};
use intradp_core::runtime::{BandwidthSource, Client, ClientConfig, Server, ServerConfig};
use intradp_core::scheduler::{
    best_layer_partition, build_plan_table, evaluate_makespan, plan_device_only, plan_layer_split, plan_server_only, solve_loss, solve_loss_detailed,
    BucketSpec, DEConfig, PlanTable, SchedulePlan,
};
use intradp_core::sim::{breakdown, energy_of, simulate, simulate_baseline, EnergyModel, Resource, Timeline, TimelineEvent};
use intradp_core::sweep::{rows_to_csv, run_sweep, SweepSpec, SystemKind};
use intradp_core::synth::{random_chain_model, random_dag, random_feasible_plan, vgg_like, DagShape, VggLikeParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------- oracle

/// Receptive field of `out` on the operator's input, from the layer geometry.
fn receptive(kind: &OperatorKind, in_units: usize, out: (usize, usize)) -> (usize, usize) {
    if out.0 >= out.1 {
        return (0, 0);
    }
    match kind {
        OperatorKind::ElementWise | OperatorKind::RowWise => out,
        OperatorKind::Global => (0, in_units),
        OperatorKind::BlockWise(b) => {
            let lo = (out.0 * b.stride) as i64 - b.padding as i64;
            let hi = ((out.1 - 1) * b.stride) as i64 - b.padding as i64 + (b.dilation * (b.kernel - 1)) as i64 + 1;
            (lo.clamp(0, in_units as i64) as usize, hi.clamp(0, in_units as i64) as usize)
        }
    }
}

fn missing(need: (usize, usize), have: (usize, usize)) -> usize {
    if need.0 >= need.1 {
        return 0;
    }
    let overlap = need.1.min(have.1).saturating_sub(need.0.max(have.0));
    need.1 - need.0 - overlap
}

fn overlaps(a: (usize, usize), b: (usize, usize)) -> bool {
    a.0 < a.1 && b.0 < b.1 && a.0.max(b.0) < a.1.min(b.1)
}

struct ChainStep {
    kind: OperatorKind,
    in_units: usize,
    units: usize,
    cost: [DeviceCost; 2],
    /// Bytes per unit on the edge into this step.
    in_edge_bytes: f64,
    /// Whether the producer of that edge is larger than the raw input.
    producer_oversize: bool,
}

/// Timing state after a prefix of the chain: per device its stream-free
/// time, per link direction its free time, and the last step's ranges and
/// finish times.
#[derive(Clone, Copy)]
struct State {
    stream: [f64; 2],
    link: [f64; 2],
    ranges: [(usize, usize); 2],
    finish: [f64; 2],
}

/// Exhaustive enumeration of every (prefix, suffix) assignment of a chain,
/// with its own timing model and a bound on the device stream.
struct ChainOracle {
    steps: Vec<ChainStep>,
    link: LinkModel,
    best: f64,
    leaves: u64,
}

impl ChainOracle {
    fn from_graph(g: &ModelGraph, p: &ProfileTable, link: LinkModel) -> Self {
        let mut order = vec![g.input_index()];
        while let Some(&k) = g.child_edges(*order.last().unwrap()).first() {
            order.push(g.edges()[k].v);
        }
        assert_eq!(order.last(), Some(&g.output_index()));
        let steps = order
            .windows(2)
            .map(|w| {
                let (u, v) = (w[0], w[1]);
                let node = g.node(v);
                ChainStep {
                    kind: if node.is_virtual { OperatorKind::ElementWise } else { node.kind },
                    in_units: node.in_units,
                    units: node.out_units,
                    cost: [p.cost(Device::Mobile, v), p.cost(Device::Server, v)],
                    in_edge_bytes: p.edge_bytes_per_unit(g.edge_index(u, v).unwrap()),
                    producer_oversize: g.node(u).out_bytes() > g.raw_input_bytes(),
                }
            })
            .collect();
        ChainOracle { steps, link, best: f64::INFINITY, leaves: 0 }
    }

    /// Applies one step with the given ranges; `None` when the oversize rule forbids it.
    fn advance(&self, s: &State, step: &ChainStep, ranges: [(usize, usize); 2]) -> Option<State> {
        let mut next = State { stream: s.stream, link: s.link, ranges, finish: [f64::NAN; 2] };
        let mut arrival = [f64::NAN; 2];
        let mut need = [(0, 0); 2];
        for d in 0..2 {
            need[d] = receptive(&step.kind, step.in_units, ranges[d]);
            let remote = missing(need[d], s.ranges[d]);
            if remote > 0 {
                if step.producer_oversize {
                    return None;
                }
                let src = 1 - d;
                let start = next.link[src].max(s.finish[src]);
                let end = start + self.link.tx_time(remote as f64 * step.in_edge_bytes);
                next.link[src] = end;
                arrival[d] = end;
            }
        }
        for d in 0..2 {
            if ranges[d].0 >= ranges[d].1 {
                continue;
            }
            let mut ready = next.stream[d];
            if overlaps(need[d], s.ranges[d]) {
                ready = ready.max(s.finish[d]);
            }
            if missing(need[d], s.ranges[d]) > 0 {
                ready = ready.max(arrival[d]);
            }
            next.finish[d] = ready + step.cost[d].batch(ranges[d].1 - ranges[d].0);
            next.stream[d] = next.finish[d];
        }
        Some(next)
    }

    fn search(&mut self, depth: usize, s: State) {
        if depth == self.steps.len() - 1 {
            let out = &self.steps[depth];
            if let Some(end) = self.advance(&s, out, [(0, out.units), (0, 0)]) {
                self.leaves += 1;
                // the virtual output costs nothing, so its finish is its start
                self.best = self.best.min(end.finish[0]);
            }
            return;
        }
        let n = self.steps[depth].units;
        for a in 0..=n {
            for b in 0..=a {
                let step = &self.steps[depth];
                let m = if a == 0 { (0, 0) } else { (0, a) };
                let r = if b == n { (0, 0) } else { (b, n) };
                if let Some(next) = self.advance(&s, step, [m, r]) {
                    // the device stream only moves forward, and the output runs on it
                    if next.stream[0] < self.best {
                        self.search(depth + 1, next);
                    }
                }
            }
        }
    }

    fn start(&self) -> State {
        State { stream: [0.0; 2], link: [0.0; 2], ranges: [(0, self.steps[0].in_units), (0, 0)], finish: [0.0, f64::NAN] }
    }

    /// Makespan of one assignment, given as `(device, server)` ranges per operator in chain order.
    fn makespan(&self, ranges: &[[(usize, usize); 2]]) -> Option<f64> {
        let mut s = self.start();
        for (step, r) in self.steps.iter().zip(ranges) {
            s = self.advance(&s, step, *r)?;
        }
        let out = self.steps.last().unwrap();
        Some(self.advance(&s, out, [(0, out.units), (0, 0)])?.finish[0])
    }

    fn optimum(mut self) -> (f64, u64) {
        let start = self.start();
        self.search(0, start);
        (self.best, self.leaves)
    }
}

fn random_small_chain(rng: &mut ChaCha8Rng) -> (ModelGraph, ProfileTable, LinkModel) {
    let ops = rng.gen_range(1..=5);
    let input_units = rng.gen_range(2..=8);
    let unit_bytes = 1000.0;
    let block_at = rng.gen_range(0..ops);
    let mut units = input_units;
    let mut nodes = Vec::new();
    for i in 0..ops {
        let tag = if i == block_at {
            KindTag::BlockWise
        } else {
            [KindTag::ElementWise, KindTag::BlockWise, KindTag::RowWise, KindTag::Global][rng.gen_range(0..4)]
        };
        let (block, out) = match tag {
            KindTag::BlockWise => {
                let k = rng.gen_range(1..=3);
                let b = BlockParams::new(k, rng.gen_range(1..=2), rng.gen_range(0..k), 1);
                match b.out_units(units) {
                    Some(o) => (Some(b), o),
                    None => (Some(BlockParams::new(1, 1, 0, 1)), units),
                }
            }
            KindTag::Global => (None, 1),
            _ => (None, units),
        };
        nodes.push(NodeDoc {
            id: i as u32 + 1,
            name: format!("op{i}"),
            kind: Some(tag),
            in_units: units,
            out_units: out,
            out_bytes_per_unit: unit_bytes * [0.5, 1.0, 2.0, 4.0][rng.gen_range(0..4)],
            block,
            param_rows: None,
        });
        units = out;
    }
    let edges = (1..ops as u32).map(|i| [i, i + 1]).collect();
    let g = build_graph(&ModelDoc { raw_input_bytes: unit_bytes * input_units as f64 * 1.5, nodes, edges }).unwrap_or_else(|e| panic!("{e}"));
    let speedup = rng.gen_range(2.0..20.0);
    let p = ProfileTable::from_fn(&g, |_, _| DeviceCost::default());
    let mut p = p;
    for v in g.operators().collect::<Vec<_>>() {
        let m = DeviceCost::new(rng.gen_range(0.0..5e-4), rng.gen_range(1e-4..2e-3));
        p.set_cost(Device::Mobile, v, m);
        p.set_cost(Device::Server, v, DeviceCost::new(m.overhead_s / speedup, m.per_unit_s / speedup));
    }
    // moving one unit costs between a tenth and ten times a device unit-step
    let per_unit_s = rng.gen_range(1e-4f64..1e-2);
    let link = LinkModel::new(8.0 * unit_bytes / per_unit_s, rng.gen_range(0.0..3e-4));
    (g, p, link)
}

fn criterion_oracle() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut within, mut worst, mut leaves) = (0, 1.0f64, 0u64);
    for i in 0..100u64 {
        let (g, p, link) = random_small_chain(&mut rng);
        let sol = solve_loss_detailed(&g, &p, &link, &DEConfig { seed: i, ..DEConfig::default() }).map_err(|e| e.to_string())?;
        let oracle = ChainOracle::from_graph(&g, &p, link);
        let mut v = g.output_index();
        let mut chain = Vec::new();
        while let Some(&k) = g.parent_edges(v).first() {
            v = g.edges()[k].u;
            chain.push(v);
        }
        chain.pop();
        chain.reverse();
        let ranges: Vec<_> = chain.iter().map(|&v| [sol.plan.m[v], sol.plan.r[v]].map(|r| (r.lo, r.hi))).collect();
        let replayed = oracle.makespan(&ranges);
        if replayed != Some(sol.makespan) {
            return Err(format!("instance {i}: oracle timing {replayed:?} disagrees with the evaluator's {}", sol.makespan));
        }
        let (oracle, count) = oracle.optimum();
        leaves += count;
        if sol.makespan < oracle * (1.0 - 1e-9) {
            return Err(format!("instance {i}: solver {} beats the exhaustive optimum {oracle}", sol.makespan));
        }
        let ratio = sol.makespan / oracle;
        worst = worst.max(ratio);
        if ratio <= 1.02 {
            within += 1;
        }
    }
    let secs = started.elapsed().as_secs_f64();
    check(within >= 95 && secs < 60.0, format!("{within}/100 within 1.02x (worst {worst:.4}), {leaves} complete plans enumerated, {secs:.1} s"))
}

// ---------------------------------------------------------------- VGG-like criteria

fn vgg() -> (ModelGraph, ProfileTable) {
    vgg_like(&VggLikeParams::default())
}

const LATENCY: f64 = 1e-3;

fn criterion_dominance() -> Outcome {
    let (g, p) = vgg();
    let spec = SweepSpec { seed: 7, ..SweepSpec::default() };
    let rows = run_sweep(&g, &p, &spec, 4).map_err(|e| e.to_string())?;
    let mut failures = Vec::new();
    for &bw in &spec.bandwidths_mbps {
        let at = |s: SystemKind| rows.iter().find(|r| r.system == s && r.bandwidth_mbps == bw).unwrap().makespan_s;
        let ours = at(SystemKind::IntraDp);
        let best_other = at(SystemKind::DeviceOnly).min(at(SystemKind::ServerOnly)).min(at(SystemKind::LayerPartition));
        if ours > best_other {
            failures.push(format!("{bw} Mbps: {ours} > {best_other}"));
        }
    }
    check(failures.is_empty(), format!("{} sweep points, violations: {:?}", spec.bandwidths_mbps.len(), failures))
}

fn criterion_degradation() -> Outcome {
    let (g, p) = vgg();
    let cfg = DEConfig::default();
    let zero = solve_loss(&g, &p, &LinkModel::from_mbps(0.0, LATENCY), &cfg).map_err(|e| e.to_string())?;
    let device_only = plan_device_only(&g);
    let exact = zero.m == device_only.m && zero.r == device_only.r;
    let top = LinkModel::from_mbps(200.0, LATENCY);
    let ours = evaluate_makespan(&g, &p, &top, &solve_loss(&g, &p, &top, &cfg).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?.makespan;
    let server = simulate_baseline(&g, &p, &top, &plan_server_only(&g)).map_err(|e| e.to_string())?.makespan;
    let gap = (ours - server).abs() / server;
    check(exact && gap <= 0.01, format!("0 Mbps plan is device-only: {exact}; 200 Mbps: {ours:.6} s vs server-only {server:.6} s ({:.3}%)", gap * 100.0))
}

fn criterion_energy() -> Outcome {
    let e = EnergyModel::default();
    let ev = |resource, start: f64, end: f64| TimelineEvent { resource, label: String::new(), start, end, bytes: 0.0 };
    // (timeline, device compute, communication-only, standby) seconds
    let cases = [
        (Timeline { events: vec![ev(Resource::MCompute, 0.0, 1.0)], makespan: 1.0 }, 1.0, 0.0, 0.0),
        (Timeline { events: vec![ev(Resource::LinkMR, 0.0, 0.5), ev(Resource::RCompute, 0.5, 1.5), ev(Resource::LinkRM, 1.5, 2.0)], makespan: 2.0 }, 0.0, 1.0, 1.0),
        (
            Timeline {
                events: vec![ev(Resource::MCompute, 0.0, 2.0), ev(Resource::LinkMR, 1.0, 3.0), ev(Resource::LinkRM, 2.5, 3.5), ev(Resource::MCompute, 5.0, 5.25)],
                makespan: 6.0,
            },
            2.25,
            1.5,
            2.25,
        ),
        (Timeline { events: vec![ev(Resource::RCompute, 0.0, 3.0)], makespan: 3.0 }, 0.0, 0.0, 3.0),
    ];
    let mut worst = 0.0f64;
    for (t, compute, comm, standby) in &cases {
        let expected = 13.35 * compute + 4.25 * comm + 4.04 * standby;
        worst = worst.max((energy_of(t, &e) - expected).abs());
    }
    let (g, p) = vgg();
    let link = LinkModel::from_mbps(90.0, LATENCY);
    let ours = simulate(&g, &p, &link, &solve_loss(&g, &p, &link, &DEConfig::default()).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let device = simulate(&g, &p, &link, &plan_device_only(&g)).map_err(|e| e.to_string())?;
    let ratio = energy_of(&ours, &e) / energy_of(&device, &e);
    check(worst <= 1e-9 && ratio <= 0.6, format!("hand cases max error {worst:.1e} J; 90 Mbps energy ratio vs device-only {ratio:.3}"))
}

fn criterion_breakdown() -> Outcome {
    let (g, p) = vgg();
    let link = LinkModel::from_mbps(100.0, LATENCY);
    let (split, _) = best_layer_partition(&g, &p, &link);
    let t = simulate_baseline(&g, &p, &link, &plan_layer_split(&g, split)).map_err(|e| e.to_string())?;
    let share = breakdown(&t).transmit / t.makespan;
    check(share > 0.30, format!("best layer split {split} at 100 Mbps spends {:.1}% of {:.3} ms transmitting", share * 100.0, t.makespan * 1e3))
}

// ---------------------------------------------------------------- evaluator vs simulator

fn criterion_agreement() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (mut graphs, mut plans, mut split) = (0, 0, 0);
    let shape = DagShape { max_ops: 10, max_units: 12, ..DagShape::default() };
    while plans < 1000 {
        let g = build_graph(&random_dag(&mut rng, &shape)).map_err(|e| e.to_string())?;
        let p = synth_profile(&g, &SynthParams::default(), rng.gen());
        graphs += 1;
        for _ in 0..10 {
            let link = LinkModel::from_mbps(rng.gen_range(0.0..100.0), rng.gen_range(0.0..2e-3));
            let plan = random_feasible_plan(&mut rng, &g, 200);
            let eval = evaluate_makespan(&g, &p, &link, &plan).map_err(|e| e.to_string())?.makespan;
            let sim = simulate(&g, &p, &link, &plan).map_err(|e| e.to_string())?.makespan;
            if eval != sim {
                return Err(format!("plan {plans}: evaluator {eval} vs simulator {sim}"));
            }
            if plan.m.iter().zip(&plan.r).any(|(m, r)| !m.is_empty() && !r.is_empty()) {
                split += 1;
            }
            plans += 1;
        }
    }
    Ok(format!("{plans} plans over {graphs} graphs agree exactly ({split} with split operators)"))
}

// ---------------------------------------------------------------- loopback runtime

fn random_input(model: &ExecModel, rng: &mut ChaCha8Rng) -> Tensor1D {
    let n = model.graph.node(model.graph.input_index()).out_units * model.input_width();
    Tensor1D::new((0..n).map(|_| rng.gen_range(-1.0f32..1.0)).collect(), model.input_width()).unwrap()
}

fn criterion_bit_exact() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut replicated, mut crossing) = (0, 0);
    for i in 0..50 {
        let (doc, kernels) = random_chain_model(&mut rng, 6, 12);
        let model = ExecModel::new(build_graph(&doc).map_err(|e| e.to_string())?, &kernels).map_err(|e| e.to_string())?;
        let g = &model.graph;
        // every other instance insists on a plan that computes some units on both sides
        let mut plan = random_feasible_plan(&mut rng, g, 200);
        for _ in 0..200 {
            if i % 2 == 1 || plan.has_replication() {
                break;
            }
            plan = random_feasible_plan(&mut rng, g, 200);
        }
        replicated += plan.has_replication() as usize;
        let table = PlanTable::from_plans(g, 1.0, vec![plan_device_only(g), plan]).map_err(|e| e.to_string())?;
        let server = Server::bind("127.0.0.1:0", model.clone(), table.clone(), ServerConfig::default()).map_err(|e| e.to_string())?.spawn();
        let input = random_input(&model, &mut rng);
        let reference = model.reference_forward(&input).map_err(|e| e.to_string())?;
        let mut client = Client::connect(server.addr(), &model, &table, ClientConfig::default()).map_err(|e| e.to_string())?;
        let (out, stats) = client.infer(&input, &BandwidthSource::Fixed(1.0)).map_err(|e| format!("instance {i}: {e}"))?;
        crossing += (stats.frames_tx + stats.frames_rx > 0) as usize;
        if !out.bit_eq(&reference) {
            return Err(format!("instance {i}: output differs from the single-process reference"));
        }
    }
    check(replicated > 0, format!("50/50 outputs bit-identical; {replicated} plans with replication, {crossing} moving data across the link"))
}

const WIDTH: usize = 64;
const UNITS: usize = 1000;

fn fidelity_model() -> ExecModel {
    let conv = BlockParams::new(3, 1, 1, 1);
    let bytes = (4 * WIDTH) as f64;
    let node = |id: u32, tag: KindTag, block: Option<BlockParams>| NodeDoc {
        id,
        name: format!("n{id}"),
        kind: Some(tag),
        in_units: UNITS,
        out_units: UNITS,
        out_bytes_per_unit: bytes,
        block,
        param_rows: None,
    };
    let doc = ModelDoc {
        raw_input_bytes: bytes * UNITS as f64,
        nodes: vec![node(1, KindTag::BlockWise, Some(conv)), node(2, KindTag::ElementWise, None), node(3, KindTag::BlockWise, Some(conv)), node(4, KindTag::ElementWise, None)],
        edges: vec![[1, 2], [2, 3], [3, 4]],
    };
    let conv_kernel = |bias| Kernel::Conv1d { weights: vec![0.25, 0.5, -0.125], bias, block: conv };
    let kernels = KernelDoc {
        input_width: WIDTH,
        nodes: vec![
            KernelEntry { id: 1, kernel: conv_kernel(0.1) },
            KernelEntry { id: 2, kernel: Kernel::Relu },
            KernelEntry { id: 3, kernel: conv_kernel(-0.05) },
            KernelEntry { id: 4, kernel: Kernel::Relu },
        ],
    };
    ExecModel::new(build_graph(&doc).unwrap(), &kernels).unwrap()
}

/// Per-unit kernel times measured on this machine, the same for both sides.
fn measured_profile(model: &ExecModel, input: &Tensor1D) -> ProfileTable {
    let g = &model.graph;
    let mut per_unit = vec![0.0; g.len()];
    let mut current: TensorPart = input.as_part();
    for &v in g.topo_order() {
        let node = g.node(v);
        if node.is_virtual {
            continue;
        }
        let full = UnitRange::new(0, node.out_units);
        let mut times = Vec::new();
        let mut out = None;
        for _ in 0..7 {
            let t = Instant::now();
            out = Some(apply_range(node, model.kernel(v), std::slice::from_ref(&current), full).unwrap());
            times.push(t.elapsed().as_secs_f64());
        }
        times.sort_by(f64::total_cmp);
        per_unit[v] = times[times.len() / 2] / node.out_units as f64;
        current = out.unwrap();
    }
    ProfileTable::from_fn(g, |v, _| DeviceCost::new(0.0, per_unit[v]))
}

fn criterion_wall_clock() -> Outcome {
    let model = fidelity_model();
    let g = &model.graph;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let input = random_input(&model, &mut rng);
    let profile = measured_profile(&model, &input);
    let plans = [("server-only", plan_server_only(g)), ("split", SchedulePlan::from_split_points(g, |_| (UNITS / 2, UNITS / 2)))];
    let mut lines = Vec::new();
    let mut ok = true;
    for mbps in [20.0, 50.0, 100.0] {
        for (name, plan) in &plans {
            let simulated = simulate(g, &profile, &LinkModel::from_mbps(mbps, 0.0), plan).map_err(|e| e.to_string())?.makespan;
            let table = PlanTable::from_plans(g, 1.0, vec![plan_device_only(g), plan.clone()]).map_err(|e| e.to_string())?;
            let cfg = ServerConfig { throttle_mbps: Some(mbps), ..ServerConfig::default() };
            let server = Server::bind("127.0.0.1:0", model.clone(), table.clone(), cfg).map_err(|e| e.to_string())?.spawn();
            let ccfg = ClientConfig { throttle_mbps: Some(mbps), ..ClientConfig::default() };
            let mut client = Client::connect(server.addr(), &model, &table, ccfg).map_err(|e| e.to_string())?;
            let mut measured = Vec::new();
            for _ in 0..20 {
                let (_, stats) = client.infer(&input, &BandwidthSource::Fixed(1.0)).map_err(|e| e.to_string())?;
                measured.push(stats.makespan_wallclock);
                std::thread::sleep(Duration::from_millis(2));
            }
            measured.sort_by(f64::total_cmp);
            let median = (measured[9] + measured[10]) / 2.0;
            let err = (median - simulated).abs() / simulated;
            ok &= err <= 0.2;
            lines.push(format!("{mbps} Mbps {name}: {:.1} ms vs {:.1} ms ({:+.1}%)", median * 1e3, simulated * 1e3, (median / simulated - 1.0) * 100.0));
        }
    }
    check(ok, lines.join("; "))
}

// ---------------------------------------------------------------- determinism

fn criterion_determinism() -> Outcome {
    let (g, p) = vgg();
    let link = LinkModel::from_mbps(60.0, LATENCY);
    let cfg = DEConfig { seed: 3, ..DEConfig::default() };
    let solve = || -> Result<String, String> {
        let plan = solve_loss(&g, &p, &link, &cfg).map_err(|e| e.to_string())?;
        Ok(serde_json::to_string(&plan.to_doc(&g)).unwrap())
    };
    let simulate_csv = || -> Result<String, String> {
        let plan = solve_loss(&g, &p, &link, &cfg).map_err(|e| e.to_string())?;
        Ok(simulate(&g, &p, &link, &plan).map_err(|e| e.to_string())?.to_csv())
    };
    let spec = SweepSpec { bandwidths_mbps: vec![0.0, 25.0, 90.0, 200.0], repetitions: 2, seed: 11, ..SweepSpec::default() };
    let sweep = |jobs| -> Result<String, String> { rows_to_csv(&run_sweep(&g, &p, &spec, jobs).map_err(|e| e.to_string())?).map_err(|e| e.to_string()) };
    let buckets = BucketSpec { width_mbps: 20.0, max_mbps: 200.0, latency_s: LATENCY };
    let small = DEConfig { population: 16, generations: 40, seed: 5, ..DEConfig::default() };
    let table = || -> Result<String, String> {
        Ok(build_plan_table(&g, &p, &buckets, &small).map_err(|e| e.to_string())?.to_doc(&g).to_json())
    };
    let pairs = [
        ("solver", solve()?, solve()?),
        ("simulator", simulate_csv()?, simulate_csv()?),
        ("sweep", sweep(1)?, sweep(4)?),
        ("plan table", table()?, table()?),
    ];
    let differing: Vec<&str> = pairs.iter().filter(|(_, a, b)| a != b).map(|(n, _, _)| *n).collect();
    check(differing.is_empty(), format!("byte-identical reruns for solver, simulator, sweep (1 vs 4 jobs) and plan table; differing: {differing:?}"))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("1 oracle optimality", criterion_oracle),
        ("2 dominance over baselines", criterion_dominance),
        ("3 degradation to baselines", criterion_degradation),
        ("4 evaluator/simulator agreement", criterion_agreement),
        ("5 bit-exact distributed execution", criterion_bit_exact),
        ("6 energy accounting", criterion_energy),
        ("7 layer-partition transmit share", criterion_breakdown),
        ("8 wall-clock fidelity", criterion_wall_clock),
        ("9 determinism", criterion_determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let started = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS criterion {name}: {detail} [{secs:.1} s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {name}: {detail} [{secs:.1} s]");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
