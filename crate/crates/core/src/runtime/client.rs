use std::net::{TcpStream, ToSocketAddrs};
use std::time::{Duration, Instant};

use serde::Serialize;

use super::bandwidth::{BandwidthSource, Throttle};
use super::exec::{run_side, Conn, Counters};
use super::frame::{Frame, MsgType};
use super::{check_table, RuntimeError, PROBE_BYTES, PROBE_NODE};
use crate::kernels::{ExecModel, Tensor1D};
use crate::profile::Device;
use crate::scheduler::PlanTable;

#[derive(Clone, Debug, PartialEq)]
pub struct ClientConfig {
    pub throttle_mbps: Option<f64>,
    pub burst_bytes: f64,
    pub timeout: Duration,
}

impl Default for ClientConfig {
    fn default() -> Self {
        ClientConfig { throttle_mbps: None, burst_bytes: 0.0, timeout: Duration::from_secs(30) }
    }
}

/// Per-request measurements. Byte counts are UNITS payloads only.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RequestStats {
    pub bandwidth_mbps: f64,
    pub bucket: usize,
    pub plan_id: u32,
    /// Seconds from plan selection to the assembled output.
    pub makespan_wallclock: f64,
    pub bytes_tx: u64,
    pub bytes_rx: u64,
    pub frames_tx: u64,
    pub frames_rx: u64,
}

/// Device-side endpoint. Requests are independent: each picks its plan from
/// the bandwidth estimate at that moment.
pub struct Client<'a> {
    conn: Conn,
    model: &'a ExecModel,
    table: &'a PlanTable,
    config: ClientConfig,
    connected_at: Instant,
}

impl<'a> Client<'a> {
    pub fn connect(addr: impl ToSocketAddrs, model: &'a ExecModel, table: &'a PlanTable, config: ClientConfig) -> Result<Self, RuntimeError> {
        check_table(model, table)?;
        let stream = TcpStream::connect(addr)?;
        let conn = Conn::new(stream, Throttle::new(config.throttle_mbps, config.burst_bytes), config.timeout)?;
        conn.send(Frame::hello(&table.content_hash))?;
        match conn.recv(Instant::now() + config.timeout) {
            Ok(f) if f.msg_type == MsgType::Hello && f.message() == table.content_hash => {}
            Ok(f) => return Err(RuntimeError::ProtocolViolation(format!("unexpected handshake reply {:?}", f.msg_type))),
            Err(RuntimeError::Remote(msg)) => return Err(RuntimeError::HashMismatch(msg)),
            Err(e) => return Err(e),
        }
        Ok(Client { conn, model, table, config, connected_at: Instant::now() })
    }

    /// Round-trip throughput of a paced echo, in Mbps.
    pub fn probe(&mut self) -> Result<f64, RuntimeError> {
        let frame = Frame { node_id: PROBE_NODE, payload: vec![0u8; PROBE_BYTES], ..Frame::new(MsgType::Hello) };
        let start = Instant::now();
        self.conn.send(frame)?;
        let echo = self.conn.recv(start + self.config.timeout)?;
        if echo.msg_type != MsgType::Hello || echo.payload.len() != PROBE_BYTES {
            return Err(RuntimeError::ProtocolViolation("malformed probe echo".into()));
        }
        let secs = start.elapsed().as_secs_f64().max(1e-9);
        Ok((2 * PROBE_BYTES) as f64 * 8.0 / secs / 1e6)
    }

    pub fn estimate(&mut self, source: &BandwidthSource) -> Result<f64, RuntimeError> {
        match source {
            BandwidthSource::Fixed(b) => Ok(*b),
            BandwidthSource::Trace(t) => t.at(self.connected_at.elapsed().as_secs_f64()),
            BandwidthSource::Probe => self.probe(),
        }
    }

    pub fn infer(&mut self, input: &Tensor1D, source: &BandwidthSource) -> Result<(Tensor1D, RequestStats), RuntimeError> {
        self.model.check_input(input)?;
        let mbps = self.estimate(source)?;
        let bucket = self.table.bucket_for(mbps);
        let plan = &self.table.plans[bucket];
        let start = Instant::now();
        let deadline = start + self.config.timeout;
        self.conn.send(Frame::plan_select(bucket as u32))?;
        let mut counters = Counters::default();
        let output = run_side(self.model, plan, bucket as u32, Device::Mobile, Some(input), &self.conn, deadline, &mut counters)?
            .expect("the device side always assembles the output");
        let makespan = start.elapsed().as_secs_f64();
        let done = self.conn.recv(deadline)?;
        if done.msg_type != MsgType::Done || done.plan_id != bucket as u32 {
            return Err(RuntimeError::ProtocolViolation(format!("expected DONE for plan {bucket}, got {:?}", done.msg_type)));
        }
        let stats = RequestStats {
            bandwidth_mbps: mbps,
            bucket,
            plan_id: plan.plan_id,
            makespan_wallclock: makespan,
            bytes_tx: counters.bytes_tx,
            bytes_rx: counters.bytes_rx,
            frames_tx: counters.frames_tx,
            frames_rx: counters.frames_rx,
        };
        Ok((output, stats))
    }
}

/// Connects, runs one request and disconnects.
pub fn run_client(
    addr: impl ToSocketAddrs,
    model: &ExecModel,
    table: &PlanTable,
    input: &Tensor1D,
    source: &BandwidthSource,
    config: ClientConfig,
) -> Result<(Tensor1D, RequestStats), RuntimeError> {
    Client::connect(addr, model, table, config)?.infer(input, source)
}
