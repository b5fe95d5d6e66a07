//! Length-prefixed binary frames, all integers little-endian.
//!
//! ```text
//! magic "IDP1" | type u8 | plan_id u32 | node_id u32 | range_lo u32 | range_hi u32 | payload_len u32 | payload
//! ```

use std::io::{self, Read, Write};

use super::RuntimeError;
use crate::kernels::TensorPart;
use crate::graph::UnitRange;

pub const MAGIC: [u8; 4] = *b"IDP1";
pub const HEADER_LEN: usize = 25;
/// Largest payload accepted from the wire.
pub const MAX_PAYLOAD: u32 = 1 << 30;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum MsgType {
    Hello = 1,
    PlanSelect = 2,
    Units = 3,
    Done = 4,
    Error = 5,
}

impl TryFrom<u8> for MsgType {
    type Error = RuntimeError;

    fn try_from(b: u8) -> Result<Self, RuntimeError> {
        Ok(match b {
            1 => MsgType::Hello,
            2 => MsgType::PlanSelect,
            3 => MsgType::Units,
            4 => MsgType::Done,
            5 => MsgType::Error,
            other => return Err(RuntimeError::ProtocolViolation(format!("unknown message type {other}"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub msg_type: MsgType,
    pub plan_id: u32,
    pub node_id: u32,
    pub range_lo: u32,
    pub range_hi: u32,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(msg_type: MsgType) -> Self {
        Frame { msg_type, plan_id: 0, node_id: 0, range_lo: 0, range_hi: 0, payload: Vec::new() }
    }

    pub fn hello(content_hash: &str) -> Self {
        Frame { payload: content_hash.as_bytes().to_vec(), ..Frame::new(MsgType::Hello) }
    }

    pub fn plan_select(bucket: u32) -> Self {
        Frame { plan_id: bucket, ..Frame::new(MsgType::PlanSelect) }
    }

    pub fn done(plan_id: u32) -> Self {
        Frame { plan_id, ..Frame::new(MsgType::Done) }
    }

    pub fn error(message: &str) -> Self {
        Frame { payload: message.as_bytes().to_vec(), ..Frame::new(MsgType::Error) }
    }

    /// Units of `node` carried as little-endian `f32`s.
    pub fn units(plan_id: u32, node: u32, part: &TensorPart) -> Self {
        let mut payload = Vec::with_capacity(part.values.len() * 4);
        for v in &part.values {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        Frame {
            msg_type: MsgType::Units,
            plan_id,
            node_id: node,
            range_lo: part.range.lo as u32,
            range_hi: part.range.hi as u32,
            payload,
        }
    }

    pub fn range(&self) -> UnitRange {
        UnitRange::new(self.range_lo as usize, (self.range_hi as usize).max(self.range_lo as usize))
    }

    /// Decodes a UNITS payload into a part of the given width.
    pub fn to_part(&self, width: usize) -> Result<TensorPart, RuntimeError> {
        let range = self.range();
        if self.payload.len() != 4 * width * range.len() {
            return Err(RuntimeError::ProtocolViolation(format!(
                "node {}: {} payload bytes for {} units of width {width}",
                self.node_id,
                self.payload.len(),
                range.len()
            )));
        }
        let values = self.payload.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        Ok(TensorPart { range, width, values })
    }

    pub fn message(&self) -> String {
        String::from_utf8_lossy(&self.payload).into_owned()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.payload.len());
        out.extend_from_slice(&MAGIC);
        out.push(self.msg_type as u8);
        for x in [self.plan_id, self.node_id, self.range_lo, self.range_hi, self.payload.len() as u32] {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out.extend_from_slice(&self.payload);
        out
    }

    /// Decodes one complete frame from the start of `bytes`, returning it and the bytes consumed.
    pub fn decode(bytes: &[u8]) -> Result<(Frame, usize), RuntimeError> {
        let mut cursor = bytes;
        let frame = read_frame(&mut cursor)?;
        Ok((frame, bytes.len() - cursor.len()))
    }
}

fn check_header(h: &[u8; HEADER_LEN]) -> Result<(Frame, usize), RuntimeError> {
    if h[..4] != MAGIC {
        return Err(RuntimeError::ProtocolViolation(format!("bad magic {:02x?}", &h[..4])));
    }
    let msg_type = MsgType::try_from(h[4])?;
    let word = |i: usize| u32::from_le_bytes([h[5 + 4 * i], h[6 + 4 * i], h[7 + 4 * i], h[8 + 4 * i]]);
    let (plan_id, node_id, range_lo, range_hi, len) = (word(0), word(1), word(2), word(3), word(4));
    if len > MAX_PAYLOAD {
        return Err(RuntimeError::ProtocolViolation(format!("payload of {len} bytes exceeds limit")));
    }
    if msg_type == MsgType::Units {
        let units = range_hi.checked_sub(range_lo).filter(|&u| u > 0).ok_or_else(|| {
            RuntimeError::ProtocolViolation(format!("UNITS frame with empty range [{range_lo}, {range_hi})"))
        })?;
        if len == 0 || len % (4 * units) != 0 {
            return Err(RuntimeError::ProtocolViolation(format!("UNITS payload of {len} bytes for {units} units")));
        }
    }
    Ok((Frame { msg_type, plan_id, node_id, range_lo, range_hi, payload: Vec::new() }, len as usize))
}

/// Reads one frame. A clean end of stream before the header is `ConnectionLost`;
/// anything cut short after that is a protocol violation.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Frame, RuntimeError> {
    let mut header = [0u8; HEADER_LEN];
    let mut filled = 0;
    while filled < HEADER_LEN {
        match r.read(&mut header[filled..]) {
            Ok(0) if filled == 0 => return Err(RuntimeError::ConnectionLost("peer closed the connection".into())),
            Ok(0) => return Err(RuntimeError::ProtocolViolation("truncated frame header".into())),
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let (mut frame, len) = check_header(&header)?;
    // grow with the data actually received rather than trusting the length field
    let mut payload = Vec::with_capacity(len.min(1 << 16));
    r.take(len as u64).read_to_end(&mut payload)?;
    if payload.len() != len {
        return Err(RuntimeError::ProtocolViolation("truncated frame payload".into()));
    }
    frame.payload = payload;
    Ok(frame)
}

pub fn write_frame<W: Write>(w: &mut W, frame: &Frame) -> Result<(), RuntimeError> {
    w.write_all(&frame.encode())?;
    w.flush()?;
    Ok(())
}
