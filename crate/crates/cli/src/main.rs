mod io;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use intradp_core::graph::build_graph;
use intradp_core::kernels::{ExecModel, Tensor1D};
use intradp_core::profile::{synth_profile, LinkModel, ProfileTable, SynthParams};
use intradp_core::runtime::{BandwidthSource, BandwidthTrace, Client, ClientConfig, Server, ServerConfig};
use intradp_core::scheduler::{
    best_layer_partition, build_plan_table, evaluate_makespan, plan_device_only, plan_server_only, solve_loss_detailed, BucketSpec, DEConfig,
    PlanTable, SchedulePlan,
};
use intradp_core::sim::{breakdown, energy_of, simulate, simulate_baseline, EnergyModel};
use intradp_core::sweep::{comparison_table, parse_bandwidths, rows_from_csv, rows_to_csv, run_sweep, summarize, summary_to_csv, system_plan, SweepSpec, SystemKind};
use intradp_core::synth::{random_chain_model, random_dag, vgg_like, DagShape, VggLikeParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::io::{read_json, read_text, write_json, write_text, TensorDoc};

/// Intra-operator parallel inference across a device and a server: plan
/// search, simulation, sweeps and a loopback runtime.
#[derive(Parser)]
#[command(name = "intradp", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Model document (JSON).
    #[arg(long, global = true, env = "INTRADP_MODEL")]
    model: Option<PathBuf>,
    /// Profile document (JSON).
    #[arg(long, global = true, env = "INTRADP_PROFILE")]
    profile: Option<PathBuf>,
    /// Plan table document (JSON).
    #[arg(long = "plan-table", global = true, env = "INTRADP_PLAN_TABLE")]
    plan_table: Option<PathBuf>,
    /// Kernel weights document (JSON).
    #[arg(long, global = true, env = "INTRADP_KERNELS")]
    kernels: Option<PathBuf>,
    /// Bandwidth in Mbps; sweeps also accept `a,b,c` or `start:stop:step`.
    #[arg(long, global = true, env = "INTRADP_BANDWIDTH")]
    bandwidth: Option<String>,
    /// Bandwidth trace, `t_seconds,mbps` per line.
    #[arg(long, global = true, env = "INTRADP_TRACE")]
    trace: Option<PathBuf>,
    #[arg(long, global = true, env = "INTRADP_SEED", default_value_t = 0)]
    seed: u64,
    /// Worker threads.
    #[arg(long, global = true, env = "INTRADP_JOBS", default_value_t = 1)]
    jobs: usize,
    /// Output file or directory; stdout when omitted.
    #[arg(long, global = true, env = "INTRADP_OUT")]
    out: Option<PathBuf>,
    /// Per-message link latency in seconds.
    #[arg(long, global = true, env = "INTRADP_LATENCY", default_value_t = 1e-3)]
    latency: f64,
}

#[derive(Args, Clone)]
struct SolverArgs {
    #[arg(long, default_value_t = 64)]
    population: usize,
    #[arg(long, default_value_t = 300)]
    generations: usize,
    #[arg(long, default_value_t = 0.7)]
    differential_weight: f64,
    #[arg(long, default_value_t = 0.9)]
    crossover_rate: f64,
    /// Leave baseline plans out of the initial population.
    #[arg(long)]
    no_baseline_seeds: bool,
}

impl SolverArgs {
    fn config(&self, seed: u64) -> DEConfig {
        DEConfig {
            population: self.population,
            generations: self.generations,
            differential_weight: self.differential_weight,
            crossover_rate: self.crossover_rate,
            seed,
            seed_with_baselines: !self.no_baseline_seeds,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SynthKind {
    /// VGG-16 shaped model with a derived profile.
    Vgg,
    /// Random operator DAG with a random profile.
    Random,
    /// Random executable chain with kernels and a random profile.
    Chain,
}

#[derive(Clone, Copy, ValueEnum)]
enum PlanSource {
    Intradp,
    DeviceOnly,
    ServerOnly,
    LayerPartition,
    /// The plan-table entry for the bandwidth.
    Table,
}

#[derive(Subcommand)]
enum Command {
    /// Writes model.json, profile.json (and kernels.json for chains) into --out.
    Synth {
        #[arg(long, value_enum, default_value = "vgg")]
        kind: SynthKind,
        #[arg(long, default_value_t = 8)]
        max_ops: usize,
        #[arg(long, default_value_t = 16)]
        max_units: usize,
    },
    /// Searches a plan for one bandwidth and compares it with the baselines.
    Solve {
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Precomputes plans for every bandwidth bucket.
    Table {
        #[arg(long, default_value_t = 1.0)]
        bucket_width: f64,
        #[arg(long, default_value_t = 200.0)]
        max_bandwidth: f64,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Simulates one plan and writes its timeline as CSV.
    Simulate {
        #[arg(long, value_enum, default_value = "intradp")]
        system: PlanSource,
        /// Plan document to simulate instead of --system.
        #[arg(long)]
        plan: Option<PathBuf>,
        /// Also runs the kernels on --input and writes the output here.
        #[arg(long)]
        reference_output: Option<PathBuf>,
        #[arg(long)]
        input: Option<PathBuf>,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Serves the server half of every plan in the table.
    Serve {
        #[arg(long, default_value = "127.0.0.1:7878", env = "INTRADP_BIND")]
        bind: String,
        /// Outbound pacing in Mbps.
        #[arg(long)]
        throttle: Option<f64>,
        #[arg(long, default_value_t = 30.0)]
        timeout: f64,
    },
    /// Runs inference requests against a server; prints per-request stats as JSON lines.
    Client {
        #[arg(long, default_value = "127.0.0.1:7878", env = "INTRADP_CONNECT")]
        connect: String,
        /// Input tensor (JSON); a seeded random input when omitted.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Measure bandwidth with an echo probe instead of --bandwidth/--trace.
        #[arg(long)]
        probe: bool,
        #[arg(long, default_value_t = 1)]
        requests: usize,
        #[arg(long)]
        throttle: Option<f64>,
        #[arg(long, default_value_t = 30.0)]
        timeout: f64,
    },
    /// Simulates every system over a bandwidth range; writes one CSV row per point.
    Sweep {
        #[arg(long, value_delimiter = ',', default_value = "intradp,device_only,server_only,layer_partition")]
        systems: Vec<String>,
        #[arg(long, default_value_t = 1)]
        repetitions: usize,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Aggregates sweep rows into medians and a comparison table.
    Report {
        /// Sweep CSV.
        #[arg(long)]
        input: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    let c = &cli.common;
    match &cli.command {
        Command::Synth { kind, max_ops, max_units } => cmd_synth(c, *kind, *max_ops, *max_units),
        Command::Solve { solver } => cmd_solve(c, solver),
        Command::Table { bucket_width, max_bandwidth, solver } => cmd_table(c, *bucket_width, *max_bandwidth, solver),
        Command::Simulate { system, plan, reference_output, input, solver } => {
            cmd_simulate(c, *system, plan.as_deref(), reference_output.as_deref(), input.as_deref(), solver)
        }
        Command::Serve { bind, throttle, timeout } => cmd_serve(c, bind, *throttle, *timeout),
        Command::Client { connect, input, probe, requests, throttle, timeout } => {
            cmd_client(c, connect, input.as_deref(), *probe, *requests, *throttle, *timeout)
        }
        Command::Sweep { systems, repetitions, solver } => cmd_sweep(c, systems, *repetitions, solver),
        Command::Report { input } => cmd_report(c, input),
    }
}

fn required<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a PathBuf> {
    p.as_ref().with_context(|| format!("--{flag} is required"))
}

fn load_graph(c: &Common) -> Result<intradp_core::ModelGraph> {
    let path = required(&c.model, "model")?;
    let doc = read_json(path)?;
    build_graph(&doc).with_context(|| format!("invalid model {}", path.display()))
}

fn load_profile(c: &Common, g: &intradp_core::ModelGraph) -> Result<ProfileTable> {
    let path = required(&c.profile, "profile")?;
    let doc = read_json(path)?;
    ProfileTable::from_doc(g, &doc).with_context(|| format!("invalid profile {}", path.display()))
}

fn load_exec(c: &Common) -> Result<ExecModel> {
    let g = load_graph(c)?;
    let path = required(&c.kernels, "kernels")?;
    let doc = read_json(path)?;
    ExecModel::new(g, &doc).with_context(|| format!("invalid kernels {}", path.display()))
}

fn load_table(c: &Common, g: &intradp_core::ModelGraph) -> Result<PlanTable> {
    let path = required(&c.plan_table, "plan-table")?;
    let doc = read_json(path)?;
    PlanTable::from_doc(g, &doc).with_context(|| format!("invalid plan table {}", path.display()))
}

fn single_bandwidth(c: &Common) -> Result<f64> {
    let s = c.bandwidth.as_deref().context("--bandwidth is required")?;
    let b: f64 = s.trim().parse().with_context(|| format!("--bandwidth {s:?} is not a number"))?;
    if b.is_nan() || b < 0.0 {
        bail!("--bandwidth must be non-negative");
    }
    Ok(b)
}

fn load_input(path: Option<&std::path::Path>, model: &ExecModel, seed: u64) -> Result<Tensor1D> {
    let t = match path {
        Some(p) => read_json::<TensorDoc>(p)?.into_tensor()?,
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = model.graph.node(model.graph.input_index()).out_units * model.input_width();
            Tensor1D::new((0..n).map(|_| rng.gen_range(-1.0f32..1.0)).collect(), model.input_width())?
        }
    };
    model.check_input(&t)?;
    Ok(t)
}

fn cmd_synth(c: &Common, kind: SynthKind, max_ops: usize, max_units: usize) -> Result<()> {
    let dir = required(&c.out, "out")?;
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    let (g, profile, kernels) = match kind {
        SynthKind::Vgg => {
            let (g, p) = vgg_like(&VggLikeParams::default());
            (g, p, None)
        }
        SynthKind::Random => {
            let shape = DagShape { max_ops, max_units, ..DagShape::default() };
            let g = build_graph(&random_dag(&mut rng, &shape))?;
            let p = synth_profile(&g, &SynthParams::default(), c.seed);
            (g, p, None)
        }
        SynthKind::Chain => {
            let (doc, k) = random_chain_model(&mut rng, max_ops, max_units);
            let g = build_graph(&doc)?;
            let p = synth_profile(&g, &SynthParams::default(), c.seed);
            (g, p, Some(k))
        }
    };
    write_text(Some(&dir.join("model.json")), &g.to_doc().to_json())?;
    write_text(Some(&dir.join("profile.json")), &profile.to_doc(&g).to_json())?;
    if let Some(k) = kernels {
        write_text(Some(&dir.join("kernels.json")), &k.to_json())?;
    }
    Ok(())
}

fn cmd_solve(c: &Common, solver: &SolverArgs) -> Result<()> {
    let g = load_graph(c)?;
    let p = load_profile(c, &g)?;
    let link = LinkModel::from_mbps(single_bandwidth(c)?, c.latency);
    let sol = solve_loss_detailed(&g, &p, &link, &solver.config(c.seed))?;
    write_json(c.out.as_deref(), &sol.plan.to_doc(&g))?;
    let dev = evaluate_makespan(&g, &p, &link, &plan_device_only(&g))?.makespan;
    let srv = simulate_baseline(&g, &p, &link, &plan_server_only(&g))?.makespan;
    let (split, layer) = best_layer_partition(&g, &p, &link);
    eprintln!("intradp         {:.6} s ({} evaluations)", sol.makespan, sol.evaluations);
    eprintln!("device_only     {dev:.6} s");
    eprintln!("server_only     {srv:.6} s");
    eprintln!("layer_partition {:.6} s (split {split})", layer.makespan);
    Ok(())
}

fn cmd_table(c: &Common, width: f64, max: f64, solver: &SolverArgs) -> Result<()> {
    let g = load_graph(c)?;
    let p = load_profile(c, &g)?;
    let buckets = BucketSpec { width_mbps: width, max_mbps: max, latency_s: c.latency };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(c.jobs.max(1)).build()?;
    let table = pool.install(|| build_plan_table(&g, &p, &buckets, &solver.config(c.seed)))?;
    write_json(c.out.as_deref(), &table.to_doc(&g))
}

fn cmd_simulate(
    c: &Common,
    system: PlanSource,
    plan_path: Option<&std::path::Path>,
    reference_output: Option<&std::path::Path>,
    input: Option<&std::path::Path>,
    solver: &SolverArgs,
) -> Result<()> {
    let g = load_graph(c)?;
    let p = load_profile(c, &g)?;
    let mbps = single_bandwidth(c)?;
    let link = LinkModel::from_mbps(mbps, c.latency);
    let (plan, strict): (SchedulePlan, bool) = match (plan_path, system) {
        (Some(path), _) => (SchedulePlan::from_doc(&g, &read_json(path)?)?, true),
        (None, PlanSource::Table) => (load_table(c, &g)?.lookup(mbps).clone(), true),
        (None, other) => {
            let kind = match other {
                PlanSource::Intradp => SystemKind::IntraDp,
                PlanSource::DeviceOnly => SystemKind::DeviceOnly,
                PlanSource::ServerOnly => SystemKind::ServerOnly,
                PlanSource::LayerPartition | PlanSource::Table => SystemKind::LayerPartition,
            };
            system_plan(&g, &p, kind, &link, &solver.config(c.seed))?
        }
    };
    let timeline = if strict { simulate(&g, &p, &link, &plan)? } else { simulate_baseline(&g, &p, &link, &plan)? };
    write_text(c.out.as_deref(), &timeline.to_csv())?;
    let b = breakdown(&timeline);
    eprintln!(
        "makespan {:.6} s, energy {:.6} J, device compute {:.6} s, server compute {:.6} s, transmit {:.6} s, {} bytes",
        timeline.makespan,
        energy_of(&timeline, &EnergyModel::default()),
        b.m_compute,
        b.r_compute,
        b.transmit,
        timeline.bytes_transferred()
    );
    if let Some(out) = reference_output {
        let model = load_exec(c)?;
        let x = load_input(input, &model, c.seed)?;
        write_json(Some(out), &TensorDoc::from_tensor(&model.reference_forward(&x)?))?;
    }
    Ok(())
}

fn cmd_serve(c: &Common, bind: &str, throttle: Option<f64>, timeout: f64) -> Result<()> {
    let model = load_exec(c)?;
    let table = load_table(c, &model.graph)?;
    let config = ServerConfig { throttle_mbps: throttle, timeout: Duration::from_secs_f64(timeout), ..ServerConfig::default() };
    let server = Server::bind(bind, model, table, config)?;
    eprintln!("listening on {}", server.local_addr());
    server.serve_until(&std::sync::atomic::AtomicBool::new(false))?;
    Ok(())
}

fn cmd_client(c: &Common, connect: &str, input: Option<&std::path::Path>, probe: bool, requests: usize, throttle: Option<f64>, timeout: f64) -> Result<()> {
    let model = load_exec(c)?;
    let table = load_table(c, &model.graph)?;
    let source = if probe {
        BandwidthSource::Probe
    } else if let Some(path) = &c.trace {
        BandwidthSource::Trace(BandwidthTrace::from_csv(&read_text(path)?)?)
    } else {
        BandwidthSource::Fixed(single_bandwidth(c)?)
    };
    let x = load_input(input, &model, c.seed)?;
    let config = ClientConfig { throttle_mbps: throttle, timeout: Duration::from_secs_f64(timeout), ..ClientConfig::default() };
    let mut client = Client::connect(connect, &model, &table, config).with_context(|| format!("cannot connect to {connect}"))?;
    let mut last = None;
    for _ in 0..requests.max(1) {
        let (out, stats) = client.infer(&x, &source)?;
        println!("{}", serde_json::to_string(&stats)?);
        last = Some(out);
    }
    if let (Some(out), Some(path)) = (last, &c.out) {
        write_json(Some(path), &TensorDoc::from_tensor(&out))?;
    }
    Ok(())
}

fn cmd_sweep(c: &Common, systems: &[String], repetitions: usize, solver: &SolverArgs) -> Result<()> {
    let g = load_graph(c)?;
    let p = load_profile(c, &g)?;
    let bandwidths = match &c.bandwidth {
        Some(s) => parse_bandwidths(s)?,
        None => SweepSpec::default().bandwidths_mbps,
    };
    let spec = SweepSpec {
        bandwidths_mbps: bandwidths,
        systems: systems.iter().map(|s| s.trim().parse()).collect::<Result<_, _>>()?,
        repetitions,
        seed: c.seed,
        latency_s: c.latency,
        solver: solver.config(c.seed),
        energy: EnergyModel::default(),
    };
    let rows = run_sweep(&g, &p, &spec, c.jobs)?;
    write_text(c.out.as_deref(), &rows_to_csv(&rows)?)
}

fn cmd_report(c: &Common, input: &std::path::Path) -> Result<()> {
    let rows = rows_from_csv(&read_text(input)?).with_context(|| format!("invalid sweep rows in {}", input.display()))?;
    let summary = summarize(&rows);
    write_text(c.out.as_deref(), &summary_to_csv(&summary)?)?;
    eprint!("{}", comparison_table(&summary));
    Ok(())
}
