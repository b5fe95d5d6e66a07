//! Connection plumbing and the per-side execution loop shared by client and server.

use std::net::{Shutdown, TcpStream};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use super::bandwidth::Throttle;
use super::frame::{read_frame, write_frame, Frame, MsgType};
use super::RuntimeError;
use crate::graph::UnitRange;
use crate::kernels::{apply_range, assemble, ExecModel, Tensor1D, TensorPart};
use crate::profile::Device;
use crate::scheduler::SchedulePlan;

/// A framed TCP connection with a reader thread and a paced writer thread.
pub(crate) struct Conn {
    inbox: Receiver<Result<Frame, RuntimeError>>,
    outbox: Option<Sender<Frame>>,
    writer_error: Arc<Mutex<Option<RuntimeError>>>,
    stream: TcpStream,
    reader: Option<JoinHandle<()>>,
    writer: Option<JoinHandle<()>>,
}

impl Conn {
    pub(crate) fn new(stream: TcpStream, mut throttle: Throttle, send_timeout: Duration) -> Result<Self, RuntimeError> {
        stream.set_nodelay(true)?;
        let (in_tx, inbox) = mpsc::channel();
        let (outbox, out_rx) = mpsc::channel::<Frame>();
        let writer_error = Arc::new(Mutex::new(None));

        let mut rd = stream.try_clone()?;
        let reader = thread::spawn(move || loop {
            let res = read_frame(&mut rd);
            let stop = res.is_err();
            if in_tx.send(res).is_err() || stop {
                return;
            }
        });

        let mut wr = stream.try_clone()?;
        let slot = Arc::clone(&writer_error);
        let writer = thread::spawn(move || {
            for frame in out_rx {
                let paced = frame.msg_type == MsgType::Units || (frame.msg_type == MsgType::Hello && frame.node_id == super::PROBE_NODE);
                let res = if paced { throttle.acquire(frame.payload.len(), send_timeout) } else { Ok(()) }
                    .and_then(|_| write_frame(&mut wr, &frame));
                if let Err(e) = res {
                    *slot.lock().unwrap() = Some(e);
                    let _ = wr.shutdown(Shutdown::Both);
                    return;
                }
            }
        });
        Ok(Conn { inbox, outbox: Some(outbox), writer_error, stream, reader: Some(reader), writer: Some(writer) })
    }

    fn writer_failure(&self) -> Option<RuntimeError> {
        self.writer_error.lock().unwrap().clone()
    }

    pub(crate) fn send(&self, frame: Frame) -> Result<(), RuntimeError> {
        let outbox = self.outbox.as_ref().expect("open connection");
        outbox.send(frame).map_err(|_| self.writer_failure().unwrap_or_else(|| RuntimeError::ConnectionLost("writer stopped".into())))
    }

    /// Next frame before `deadline`. ERROR frames from the peer become `Remote` errors.
    pub(crate) fn recv(&self, deadline: Instant) -> Result<Frame, RuntimeError> {
        let left = deadline.saturating_duration_since(Instant::now());
        match self.inbox.recv_timeout(left) {
            Ok(Ok(f)) if f.msg_type == MsgType::Error => Err(RuntimeError::Remote(f.message())),
            Ok(Err(RuntimeError::ConnectionLost(m))) => Err(self.writer_failure().unwrap_or(RuntimeError::ConnectionLost(m))),
            Ok(res) => res,
            Err(RecvTimeoutError::Timeout) => Err(self.writer_failure().unwrap_or(RuntimeError::Timeout)),
            Err(RecvTimeoutError::Disconnected) => Err(RuntimeError::ConnectionLost("reader stopped".into())),
        }
    }

    /// Lets the writer drain queued frames, then closes the socket.
    pub(crate) fn close(&mut self) {
        self.outbox.take();
        if let Some(w) = self.writer.take() {
            let _ = w.join();
        }
        let _ = self.stream.shutdown(Shutdown::Both);
        if let Some(r) = self.reader.take() {
            let _ = r.join();
        }
    }
}

impl Drop for Conn {
    fn drop(&mut self) {
        self.close();
    }
}

/// UNITS payload bytes and frames moved during one request.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Counters {
    pub bytes_tx: u64,
    pub bytes_rx: u64,
    pub frames_tx: u64,
    pub frames_rx: u64,
}

fn covers(parts: &[&TensorPart], need: UnitRange) -> bool {
    let mut at = need.lo;
    while at < need.hi {
        match parts.iter().filter(|p| p.range.contains_unit(at)).map(|p| p.range.hi).max() {
            Some(hi) => at = hi,
            None => return false,
        }
    }
    true
}

/// Executes one side of a plan in topological order: compute each local range
/// once its inputs are present, then queue the units the other side needs.
/// Returns the assembled output on the device side.
#[allow(clippy::too_many_arguments)]
pub(crate) fn run_side(
    model: &ExecModel,
    plan: &SchedulePlan,
    plan_id: u32,
    device: Device,
    input: Option<&Tensor1D>,
    conn: &Conn,
    deadline: Instant,
    counters: &mut Counters,
) -> Result<Option<Tensor1D>, RuntimeError> {
    let g = &model.graph;
    let other = device.other();
    let mut local: Vec<Option<TensorPart>> = vec![None; g.len()];
    let mut received: Vec<Vec<TensorPart>> = vec![Vec::new(); g.len()];
    let mut output = None;

    for &v in g.topo_order() {
        let node = g.node(v);
        let range = plan.range(device, v);
        if range.is_empty() {
            continue;
        }
        let out = if v == g.input_index() {
            let t = input.ok_or_else(|| RuntimeError::ProtocolViolation("input is held by the other side".into()))?;
            model.check_input(t)?;
            t.as_part()
        } else {
            let need = node.halo(range);
            let mut inputs = Vec::with_capacity(g.parent_edges(v).len());
            for &k in g.parent_edges(v) {
                let u = g.edges()[k].u;
                loop {
                    let parts: Vec<&TensorPart> = local[u].iter().chain(&received[u]).collect();
                    if covers(&parts, need) {
                        inputs.push(assemble(&parts, need, model.width(u))?);
                        break;
                    }
                    let frame = conn.recv(deadline)?;
                    if frame.msg_type != MsgType::Units || frame.plan_id != plan_id {
                        return Err(RuntimeError::ProtocolViolation(format!(
                            "unexpected {:?} frame for plan {} while running plan {plan_id}",
                            frame.msg_type, frame.plan_id
                        )));
                    }
                    let src = g
                        .index_of(frame.node_id)
                        .filter(|&i| i != g.output_index())
                        .ok_or_else(|| RuntimeError::ProtocolViolation(format!("units for unknown node {}", frame.node_id)))?;
                    if !frame.range().within(g.node(src).out_units) {
                        return Err(RuntimeError::ProtocolViolation(format!("units {:?} out of bounds for node {}", frame.range(), frame.node_id)));
                    }
                    let part = frame.to_part(model.width(src))?;
                    counters.bytes_rx += frame.payload.len() as u64;
                    counters.frames_rx += 1;
                    received[src].push(part);
                }
            }
            let part = apply_range(node, model.kernel(v), &inputs, range)?;
            if v == g.output_index() {
                output = Some(Tensor1D { units: part.range.len(), width: part.width, values: part.values });
                continue;
            }
            part
        };

        for &k in g.child_edges(v) {
            let w = g.edges()[k].v;
            let theirs = plan.range(other, w);
            if theirs.is_empty() {
                continue;
            }
            let need = g.node(w).halo(theirs);
            for piece in need.difference(&plan.range(other, v)) {
                if piece.is_empty() {
                    continue;
                }
                if !piece.is_subset_of(&range) {
                    return Err(RuntimeError::ProtocolViolation(format!("node {} units {piece:?} are computed by neither side", node.id)));
                }
                let frame = Frame::units(plan_id, node.id, &out.slice(piece));
                counters.bytes_tx += frame.payload.len() as u64;
                counters.frames_tx += 1;
                conn.send(frame)?;
            }
        }
        local[v] = Some(out);
    }
    Ok(output)
}
