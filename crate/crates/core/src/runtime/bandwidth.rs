//! Bandwidth traces, estimation and send-side pacing.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::RuntimeError;

/// Bandwidth samples `(t_seconds, mbps)`, held until the next sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandwidthTrace {
    samples: Vec<(f64, f64)>,
}

impl BandwidthTrace {
    pub fn new(samples: Vec<(f64, f64)>) -> Result<Self, RuntimeError> {
        for w in samples.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(RuntimeError::InvalidTrace(format!("time {} does not follow {}", w[1].0, w[0].0)));
            }
        }
        if let Some(&(t, b)) = samples.iter().find(|(t, b)| !t.is_finite() || !(*b >= 0.0)) {
            return Err(RuntimeError::InvalidTrace(format!("bad sample ({t}, {b})")));
        }
        Ok(BandwidthTrace { samples })
    }

    /// Parses `t_seconds,bandwidth_mbps` lines. Blank lines, `#` comments and a
    /// non-numeric header line are skipped.
    pub fn from_csv(text: &str) -> Result<Self, RuntimeError> {
        let mut samples = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = line.split(',').map(str::trim);
            let (Some(t), Some(b), None) = (fields.next(), fields.next(), fields.next()) else {
                return Err(RuntimeError::InvalidTrace(format!("line {}: expected two fields", i + 1)));
            };
            match (t.parse::<f64>(), b.parse::<f64>()) {
                (Ok(t), Ok(b)) => samples.push((t, b)),
                _ if samples.is_empty() && t.parse::<f64>().is_err() => continue,
                _ => return Err(RuntimeError::InvalidTrace(format!("line {}: cannot parse {line:?}", i + 1))),
            }
        }
        BandwidthTrace::new(samples)
    }

    pub fn samples(&self) -> &[(f64, f64)] {
        &self.samples
    }

    /// Step-interpolated bandwidth at `now`; times before the first sample use it.
    pub fn at(&self, now: f64) -> Result<f64, RuntimeError> {
        let first = self.samples.first().ok_or(RuntimeError::EmptyTrace)?;
        let idx = self.samples.partition_point(|&(t, _)| t <= now);
        Ok(if idx == 0 { first.1 } else { self.samples[idx - 1].1 })
    }
}

/// Where a client gets its per-request bandwidth estimate.
#[derive(Clone, Debug, PartialEq)]
pub enum BandwidthSource {
    Fixed(f64),
    /// Replayed against seconds elapsed since the client connected.
    Trace(BandwidthTrace),
    /// Timed 64 KiB echo with the server.
    Probe,
}

pub fn estimate_bandwidth(trace: &BandwidthTrace, now: f64) -> Result<f64, RuntimeError> {
    trace.at(now)
}

/// Token bucket in bytes. The bucket may go into debt; a sender waits until
/// the debt is repaid, so back-to-back payloads leave at the target rate.
#[derive(Clone, Debug)]
pub struct Throttle {
    rate_bytes_per_s: Option<f64>,
    capacity: f64,
    tokens: f64,
    last: Instant,
}

impl Throttle {
    /// `None` disables pacing; `burst_bytes` is the credit an idle link may accumulate.
    pub fn new(rate_mbps: Option<f64>, burst_bytes: f64) -> Self {
        Throttle {
            rate_bytes_per_s: rate_mbps.filter(|r| r.is_finite()).map(|r| r.max(0.0) * 1e6 / 8.0),
            capacity: burst_bytes.max(0.0),
            tokens: burst_bytes.max(0.0),
            last: Instant::now(),
        }
    }

    pub fn unlimited() -> Self {
        Throttle::new(None, 0.0)
    }

    /// Blocks until `bytes` may leave, or fails with `Timeout` if that takes longer than `timeout`.
    pub fn acquire(&mut self, bytes: usize, timeout: Duration) -> Result<(), RuntimeError> {
        let Some(rate) = self.rate_bytes_per_s else {
            return Ok(());
        };
        if bytes == 0 {
            return Ok(());
        }
        if rate == 0.0 {
            std::thread::sleep(timeout);
            return Err(RuntimeError::Timeout);
        }
        let now = Instant::now();
        let refill = now.duration_since(self.last).as_secs_f64() * rate;
        self.tokens = (self.tokens + refill).min(self.capacity);
        self.last = now;
        self.tokens -= bytes as f64;
        if self.tokens < 0.0 {
            let wait = -self.tokens / rate;
            if wait > timeout.as_secs_f64() {
                std::thread::sleep(timeout);
                return Err(RuntimeError::Timeout);
            }
            sleep_until(now + Duration::from_secs_f64(wait));
        }
        Ok(())
    }
}

/// Sleeps coarsely, then spins for the last stretch to keep pacing accurate.
fn sleep_until(deadline: Instant) {
    const SPIN: Duration = Duration::from_micros(200);
    loop {
        let now = Instant::now();
        if now >= deadline {
            return;
        }
        let left = deadline - now;
        if left > SPIN {
            std::thread::sleep(left - SPIN);
        } else {
            std::thread::yield_now();
        }
    }
}
