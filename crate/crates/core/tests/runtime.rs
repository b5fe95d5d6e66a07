use std::io::{Read, Write};
use std::net::TcpStream;
use std::time::Duration;

use intradp_core::graph::{build_graph, BlockParams, KindTag, ModelDoc, NodeDoc};
use intradp_core::kernels::{ExecModel, Kernel, KernelDoc, KernelEntry, Tensor1D};
use intradp_core::runtime::{
    read_frame, BandwidthSource, BandwidthTrace, Client, ClientConfig, Frame, MsgType, RuntimeError, Server, ServerConfig,
};
use intradp_core::scheduler::{plan_device_only, plan_server_only, PlanTable, SchedulePlan};
use intradp_core::synth::{random_chain_model, random_feasible_plan};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn conv_relu(units: usize) -> ExecModel {
    let block = BlockParams::new(3, 1, 1, 1);
    let conv = NodeDoc {
        id: 1,
        name: "conv".into(),
        kind: Some(KindTag::BlockWise),
        in_units: units,
        out_units: units,
        out_bytes_per_unit: 4.0,
        block: Some(block),
        param_rows: None,
    };
    let relu = NodeDoc { id: 2, name: "relu".into(), kind: Some(KindTag::ElementWise), block: None, ..conv.clone() };
    let g = build_graph(&ModelDoc { raw_input_bytes: 4.0 * units as f64, nodes: vec![conv, relu], edges: vec![[1, 2]] }).unwrap();
    let kernels = KernelDoc {
        input_width: 1,
        nodes: vec![
            KernelEntry { id: 1, kernel: Kernel::Conv1d { weights: vec![0.3, -1.1, 0.7], bias: 0.05, block } },
            KernelEntry { id: 2, kernel: Kernel::Relu },
        ],
    };
    ExecModel::new(g, &kernels).unwrap()
}

fn input_for(model: &ExecModel, seed: u64) -> Tensor1D {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = model.graph.node(model.graph.input_index()).out_units * model.input_width();
    Tensor1D::new((0..n).map(|_| rng.gen_range(-1.0f32..1.0)).collect(), model.input_width()).unwrap()
}

fn start(model: &ExecModel, table: &PlanTable) -> intradp_core::runtime::ServerHandle {
    Server::bind("127.0.0.1:0", model.clone(), table.clone(), ServerConfig::default()).unwrap().spawn()
}

#[test]
fn split_plan_matches_reference() {
    let model = conv_relu(10);
    let g = &model.graph;
    let split = SchedulePlan::from_split_points(g, |_| (6, 3));
    let table = PlanTable::from_plans(g, 1.0, vec![plan_device_only(g), split, plan_server_only(g)]).unwrap();
    let server = start(&model, &table);
    let input = input_for(&model, 1);
    let reference = model.reference_forward(&input).unwrap();
    let mut client = Client::connect(server.addr(), &model, &table, ClientConfig::default()).unwrap();
    for (mbps, bucket) in [(1.0, 1), (2.0, 2), (0.0, 0), (1.5, 1)] {
        let (out, stats) = client.infer(&input, &BandwidthSource::Fixed(mbps)).unwrap();
        assert!(out.bit_eq(&reference), "bucket {bucket}");
        assert_eq!(stats.bucket, bucket);
        assert_eq!(stats.plan_id, bucket as u32);
        if bucket == 0 {
            assert_eq!(stats.frames_tx + stats.frames_rx, 0);
        } else {
            assert!(stats.bytes_tx > 0 && stats.bytes_rx > 0);
        }
    }
}

#[test]
fn server_only_ships_whole_input_and_output() {
    let model = conv_relu(8);
    let g = &model.graph;
    let table = PlanTable::from_plans(g, 1.0, vec![plan_device_only(g), plan_server_only(g)]).unwrap();
    let server = start(&model, &table);
    let input = input_for(&model, 2);
    let mut client = Client::connect(server.addr(), &model, &table, ClientConfig::default()).unwrap();
    let (out, stats) = client.infer(&input, &BandwidthSource::Fixed(5.0)).unwrap();
    assert!(out.bit_eq(&model.reference_forward(&input).unwrap()));
    assert_eq!(stats.bytes_tx, 32);
    assert_eq!(stats.bytes_rx, 32);
}

#[test]
fn zero_trace_selects_device_only_bucket() {
    let model = conv_relu(8);
    let g = &model.graph;
    let table = PlanTable::from_plans(g, 1.0, vec![plan_device_only(g), plan_server_only(g)]).unwrap();
    let server = start(&model, &table);
    let trace = BandwidthTrace::from_csv("0,0\n").unwrap();
    let mut client = Client::connect(server.addr(), &model, &table, ClientConfig::default()).unwrap();
    let (_, stats) = client.infer(&input_for(&model, 3), &BandwidthSource::Trace(trace)).unwrap();
    assert_eq!(stats.bucket, 0);
    assert_eq!(stats.frames_tx, 0);
}

#[test]
fn hash_mismatch_is_rejected() {
    let model = conv_relu(8);
    let g = &model.graph;
    let table = PlanTable::from_plans(g, 1.0, vec![plan_device_only(g)]).unwrap();
    let server = start(&model, &table);
    let mut other = table.clone();
    other.content_hash = "0".repeat(64);
    match Client::connect(server.addr(), &model, &other, ClientConfig::default()) {
        Err(RuntimeError::HashMismatch(_)) => {}
        Err(e) => panic!("unexpected error {e}"),
        Ok(_) => panic!("handshake should fail"),
    }
    // the server keeps accepting after a rejected client
    assert!(Client::connect(server.addr(), &model, &table, ClientConfig::default()).is_ok());
}

#[test]
fn bad_magic_gets_error_frame_and_close() {
    let model = conv_relu(8);
    let g = &model.graph;
    let table = PlanTable::from_plans(g, 1.0, vec![plan_device_only(g)]).unwrap();
    let server = start(&model, &table);
    let mut s = TcpStream::connect(server.addr()).unwrap();
    s.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
    let mut bytes = Frame::hello(&table.content_hash).encode();
    bytes[..4].copy_from_slice(b"XXXX");
    s.write_all(&bytes).unwrap();
    let reply = read_frame(&mut s).unwrap();
    assert_eq!(reply.msg_type, MsgType::Error);
    let mut rest = Vec::new();
    assert_eq!(s.read_to_end(&mut rest).unwrap_or(0), 0);
}

#[test]
fn probe_reports_positive_bandwidth() {
    let model = conv_relu(8);
    let g = &model.graph;
    let table = PlanTable::from_plans(g, 1.0, vec![plan_device_only(g), plan_server_only(g)]).unwrap();
    let server = start(&model, &table);
    let mut client = Client::connect(server.addr(), &model, &table, ClientConfig::default()).unwrap();
    let (out, stats) = client.infer(&input_for(&model, 4), &BandwidthSource::Probe).unwrap();
    assert!(stats.bandwidth_mbps > 0.0);
    assert_eq!(stats.bucket, 1);
    assert!(out.bit_eq(&model.reference_forward(&input_for(&model, 4)).unwrap()));
}

#[test]
fn restarting_the_server_does_not_change_outputs() {
    let model = conv_relu(12);
    let g = &model.graph;
    let split = SchedulePlan::from_split_points(g, |_| (7, 5));
    let table = PlanTable::from_plans(g, 1.0, vec![plan_device_only(g), split]).unwrap();
    let input = input_for(&model, 5);
    let mut outs = Vec::new();
    for _ in 0..2 {
        let server = start(&model, &table);
        let mut client = Client::connect(server.addr(), &model, &table, ClientConfig::default()).unwrap();
        outs.push(client.infer(&input, &BandwidthSource::Fixed(1.0)).unwrap().0);
        drop(client);
        server.shutdown().unwrap();
    }
    assert!(outs[0].bit_eq(&outs[1]));
}

#[test]
fn zero_rate_throttle_times_out() {
    let model = conv_relu(8);
    let g = &model.graph;
    let table = PlanTable::from_plans(g, 1.0, vec![plan_device_only(g), plan_server_only(g)]).unwrap();
    let server = start(&model, &table);
    let cfg = ClientConfig { throttle_mbps: Some(0.0), timeout: Duration::from_millis(200), ..ClientConfig::default() };
    let mut client = Client::connect(server.addr(), &model, &table, cfg).unwrap();
    let err = client.infer(&input_for(&model, 6), &BandwidthSource::Fixed(1.0)).unwrap_err();
    assert_eq!(err, RuntimeError::Timeout);
}

#[test]
fn random_chains_are_bit_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for i in 0..10 {
        let (doc, kdoc) = random_chain_model(&mut rng, 6, 10);
        let model = ExecModel::new(build_graph(&doc).unwrap(), &kdoc).unwrap();
        let g = &model.graph;
        let plan = random_feasible_plan(&mut rng, g, 100);
        let table = PlanTable::from_plans(g, 1.0, vec![plan_device_only(g), plan]).unwrap();
        let server = start(&model, &table);
        let input = input_for(&model, i);
        let (out, _) = intradp_core::runtime::run_client(server.addr(), &model, &table, &input, &BandwidthSource::Fixed(1.0), ClientConfig::default()).unwrap();
        assert!(out.bit_eq(&model.reference_forward(&input).unwrap()), "chain {i}");
    }
}
