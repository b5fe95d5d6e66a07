//! Two-process execution over TCP: the device-side client and the server each
//! run their half of a plan and exchange unit ranges as framed messages.

mod bandwidth;
mod client;
mod exec;
mod frame;
mod server;

use thiserror::Error;

pub use bandwidth::{estimate_bandwidth, BandwidthSource, BandwidthTrace, Throttle};
pub use client::{run_client, Client, ClientConfig, RequestStats};
pub use exec::Counters;
pub use frame::{read_frame, write_frame, Frame, MsgType, HEADER_LEN, MAGIC};
pub use server::{serve, Server, ServerConfig, ServerHandle};

use crate::kernels::KernelError;
use crate::scheduler::ScheduleError;

/// `node_id` of HELLO frames used for bandwidth probing.
pub const PROBE_NODE: u32 = 1;
/// Size of the probe echo payload.
pub const PROBE_BYTES: usize = 64 * 1024;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RuntimeError {
    #[error("plan table hash mismatch: {0}")]
    HashMismatch(String),
    #[error("protocol violation: {0}")]
    ProtocolViolation(String),
    #[error("connection lost: {0}")]
    ConnectionLost(String),
    #[error("request timed out")]
    Timeout,
    #[error("bandwidth trace is empty")]
    EmptyTrace,
    #[error("invalid bandwidth trace: {0}")]
    InvalidTrace(String),
    #[error("peer reported: {0}")]
    Remote(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
}

impl From<std::io::Error> for RuntimeError {
    fn from(e: std::io::Error) -> Self {
        match e.kind() {
            std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock => RuntimeError::Timeout,
            _ => RuntimeError::ConnectionLost(e.to_string()),
        }
    }
}

/// Checks every plan of a table can be executed on the model.
pub(crate) fn check_table(model: &crate::kernels::ExecModel, table: &crate::scheduler::PlanTable) -> Result<(), RuntimeError> {
    for plan in &table.plans {
        let f = crate::scheduler::is_feasible(&model.graph, plan)?;
        if !f.is_ok() {
            return Err(ScheduleError::InfeasiblePlan(f.violations).into());
        }
    }
    Ok(())
}
