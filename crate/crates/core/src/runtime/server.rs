use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use super::bandwidth::Throttle;
use super::exec::{run_side, Conn, Counters};
use super::frame::{Frame, MsgType};
use super::{check_table, RuntimeError, PROBE_NODE};
use crate::kernels::ExecModel;
use crate::profile::Device;
use crate::scheduler::PlanTable;

#[derive(Clone, Debug, PartialEq)]
pub struct ServerConfig {
    /// Outbound pacing rate; `None` sends as fast as the socket allows.
    pub throttle_mbps: Option<f64>,
    pub burst_bytes: f64,
    /// Per-request limit, also applied to the handshake.
    pub timeout: Duration,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig { throttle_mbps: None, burst_bytes: 0.0, timeout: Duration::from_secs(30) }
    }
}

/// Serves one client at a time; keeps no state between requests.
pub struct Server {
    listener: TcpListener,
    model: Arc<ExecModel>,
    table: Arc<PlanTable>,
    config: ServerConfig,
}

impl Server {
    pub fn bind(addr: impl ToSocketAddrs, model: ExecModel, table: PlanTable, config: ServerConfig) -> Result<Self, RuntimeError> {
        check_table(&model, &table)?;
        let listener = TcpListener::bind(addr)?;
        Ok(Server { listener, model: Arc::new(model), table: Arc::new(table), config })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.listener.local_addr().expect("bound listener")
    }

    /// Accepts connections until `stop` is set. Errors of a single connection end only that connection.
    pub fn serve_until(&self, stop: &AtomicBool) -> Result<(), RuntimeError> {
        for stream in self.listener.incoming() {
            if stop.load(Ordering::SeqCst) {
                break;
            }
            if let Ok(stream) = stream {
                let _ = self.serve_connection(stream);
            }
        }
        Ok(())
    }

    /// Runs the handshake and then any number of requests on one connection.
    /// Returns the number of requests completed when the client disconnects.
    pub fn serve_connection(&self, stream: TcpStream) -> Result<usize, RuntimeError> {
        let cfg = &self.config;
        let conn = Conn::new(stream, Throttle::new(cfg.throttle_mbps, cfg.burst_bytes), cfg.timeout)?;
        let hello = conn.recv(Instant::now() + cfg.timeout).inspect_err(|e| {
            let _ = conn.send(Frame::error(&e.to_string()));
        })?;
        if hello.msg_type != MsgType::Hello {
            conn.send(Frame::error("expected HELLO"))?;
            return Err(RuntimeError::ProtocolViolation(format!("expected HELLO, got {:?}", hello.msg_type)));
        }
        let theirs = hello.message();
        if theirs != self.table.content_hash {
            let msg = format!("server table {} does not match client table {theirs}", self.table.content_hash);
            conn.send(Frame::error(&msg))?;
            return Err(RuntimeError::HashMismatch(msg));
        }
        conn.send(Frame::hello(&self.table.content_hash))?;

        let mut served = 0;
        loop {
            let frame = match conn.recv(Instant::now() + Duration::from_secs(24 * 3600)) {
                Ok(f) => f,
                Err(RuntimeError::ConnectionLost(_)) => return Ok(served),
                Err(e) => {
                    let _ = conn.send(Frame::error(&e.to_string()));
                    return Err(e);
                }
            };
            match frame.msg_type {
                MsgType::Hello if frame.node_id == PROBE_NODE => conn.send(frame)?,
                MsgType::PlanSelect => {
                    let bucket = frame.plan_id;
                    let Some(plan) = self.table.plans.get(bucket as usize) else {
                        let e = RuntimeError::ProtocolViolation(format!("bucket {bucket} outside the plan table"));
                        conn.send(Frame::error(&e.to_string()))?;
                        return Err(e);
                    };
                    let deadline = Instant::now() + cfg.timeout;
                    let mut counters = Counters::default();
                    if let Err(e) = run_side(&self.model, plan, bucket, Device::Server, None, &conn, deadline, &mut counters) {
                        let _ = conn.send(Frame::error(&e.to_string()));
                        return Err(e);
                    }
                    conn.send(Frame::done(bucket))?;
                    served += 1;
                }
                other => {
                    let e = RuntimeError::ProtocolViolation(format!("unexpected {other:?} frame between requests"));
                    conn.send(Frame::error(&e.to_string()))?;
                    return Err(e);
                }
            }
        }
    }

    /// Serves on a background thread.
    pub fn spawn(self) -> ServerHandle {
        let addr = self.local_addr();
        let stop = Arc::new(AtomicBool::new(false));
        let flag = Arc::clone(&stop);
        let thread = thread::spawn(move || self.serve_until(&flag));
        ServerHandle { addr, stop, thread: Some(thread) }
    }
}

pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<Result<(), RuntimeError>>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stops accepting after the current connection ends.
    pub fn shutdown(mut self) -> Result<(), RuntimeError> {
        self.stop_and_join()
    }

    fn stop_and_join(&mut self) -> Result<(), RuntimeError> {
        let Some(t) = self.thread.take() else {
            return Ok(());
        };
        self.stop.store(true, Ordering::SeqCst);
        // wake the blocking accept
        let _ = TcpStream::connect(self.addr);
        t.join().unwrap_or_else(|_| Err(RuntimeError::ConnectionLost("server thread panicked".into())))
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        let _ = self.stop_and_join();
    }
}

/// Binds and serves until the process exits.
pub fn serve(bind: impl ToSocketAddrs, model: ExecModel, table: PlanTable, config: ServerConfig) -> Result<(), RuntimeError> {
    let server = Server::bind(bind, model, table, config)?;
    server.serve_until(&AtomicBool::new(false))
}
