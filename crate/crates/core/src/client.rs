//! The adaptive client: bandwidth estimator, representation selection and
//! per-segment download records.

use std::io::Write;
use std::path::Path;

use crate::catalog::{MediaCatalog, Representation};
use crate::transport::StackKind;
use crate::{Error, Result, SimTime};

pub const DEFAULT_W1: f64 = 0.7;
pub const DEFAULT_W2: f64 = 1.3;
pub const MAX_PIPELINE_DEPTH: usize = 8;

/// Weighted moving estimate of the available bandwidth, in kbps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorState {
    w1: f64,
    w2: f64,
    /// `None` until the first measurement, which then seeds the estimate.
    b_prev: Option<f64>,
}

impl Default for EstimatorState {
    fn default() -> Self {
        EstimatorState { w1: DEFAULT_W1, w2: DEFAULT_W2, b_prev: None }
    }
}

impl EstimatorState {
    pub fn new(w1: f64, w2: f64) -> Result<Self> {
        if !(w1 > 0.0 && w2 > 0.0 && w1.is_finite() && w2.is_finite()) {
            return Err(Error::invalid("estimator weights", format!("w1={w1}, w2={w2}")));
        }
        Ok(EstimatorState { w1, w2, b_prev: None })
    }

    /// Starts from a known previous estimate.
    pub fn with_prev(mut self, b_prev: f64) -> Self {
        self.b_prev = Some(b_prev.max(0.0));
        self
    }

    pub fn weights(&self) -> (f64, f64) {
        (self.w1, self.w2)
    }

    pub fn b_prev(&self) -> Option<f64> {
        self.b_prev
    }
}

/// b_n = (w1 * b_prev + w2 * b_m) / (w1 + w2); the state keeps b_n.
pub fn estimate_bandwidth(state: &mut EstimatorState, b_m: f64) -> f64 {
    let b_m = b_m.max(0.0);
    let b_prev = state.b_prev.unwrap_or(b_m);
    let b_n = (state.w1 * b_prev + state.w2 * b_m) / (state.w1 + state.w2);
    state.b_prev = Some(b_n);
    b_n
}

/// Highest representation with bitrate <= safety * b_n, else the lowest.
pub fn select_representation(catalog: &MediaCatalog, b_n: f64, safety_factor: f64) -> &Representation {
    let budget = safety_factor * b_n;
    let reps = catalog.representations();
    reps.iter()
        .rev()
        .find(|r| f64::from(r.bitrate_kbps) <= budget)
        .unwrap_or(&reps[0])
}

/// Bytes the throughput measurement divides by time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ThroughputBasis {
    #[default]
    Media,
    Wire,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientConfig {
    pub w1: f64,
    pub w2: f64,
    pub safety_factor: f64,
    pub start_level: usize,
    /// Fetch every segment at this level instead of adapting.
    pub fixed_level: Option<usize>,
    pub basis: ThroughputBasis,
    pub pipelining: usize,
}

impl Default for ClientConfig {
    fn default() -> Self {
        ClientConfig {
            w1: DEFAULT_W1,
            w2: DEFAULT_W2,
            safety_factor: 1.0,
            start_level: 0,
            fixed_level: None,
            basis: ThroughputBasis::Media,
            pipelining: 1,
        }
    }
}

impl ClientConfig {
    pub fn validate(&self, catalog: &MediaCatalog) -> Result<()> {
        EstimatorState::new(self.w1, self.w2)?;
        if self.safety_factor.is_nan() || self.safety_factor <= 0.0 {
            return Err(Error::invalid("safety factor", self.safety_factor.to_string()));
        }
        if !(1..=MAX_PIPELINE_DEPTH).contains(&self.pipelining) {
            return Err(Error::invalid(
                "pipelining depth",
                format!("{} (allowed 1..={MAX_PIPELINE_DEPTH})", self.pipelining),
            ));
        }
        for level in std::iter::once(self.start_level).chain(self.fixed_level) {
            catalog.representation(level)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentDownloadRecord {
    pub index: u32,
    pub level: usize,
    pub bitrate_kbps: u32,
    pub request_at: SimTime,
    pub first_byte_at: SimTime,
    pub complete_at: SimTime,
    pub media_bytes: u64,
    /// Downlink bytes received plus uplink bytes sent while this segment
    /// was the oldest outstanding one.
    pub wire_bytes: u64,
    pub b_m_kbps: f64,
    pub b_n_kbps: f64,
    /// Shaped rate when the request was issued.
    pub available_kbps: u32,
}

impl SegmentDownloadRecord {
    pub fn download_time(&self) -> SimTime {
        self.complete_at - self.request_at
    }
}

/// `bytes * 8 / elapsed` in kbps; bits per millisecond.
pub fn throughput_kbps(bytes: u64, elapsed: SimTime) -> f64 {
    let us = elapsed.as_micros().max(1);
    bytes as f64 * 8_000.0 / us as f64
}

/// Session-wide byte counters.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ByteTotals {
    pub downlink_received: u64,
    pub downlink_sent: u64,
    pub uplink_received: u64,
    pub uplink_sent: u64,
    pub handshake_bytes: u64,
    pub header_bytes: u64,
    pub framing_bytes: u64,
    pub app_header_bytes: u64,
    pub retransmitted_bytes: u64,
    pub ack_bytes: u64,
    pub h2_frames: u64,
    pub dropped_packets: u64,
}

/// Everything a finished session reports.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientSession {
    pub stack: StackKind,
    pub rtt: SimTime,
    pub seed: u64,
    pub connections: u32,
    pub started_at: SimTime,
    pub ready_at: SimTime,
    pub records: Vec<SegmentDownloadRecord>,
    pub totals: ByteTotals,
}

impl ClientSession {
    pub fn media_bytes(&self) -> u64 {
        self.records.iter().map(|r| r.media_bytes).sum()
    }

    pub fn last_byte_at(&self) -> SimTime {
        self.records.iter().map(|r| r.complete_at).max().unwrap_or(self.started_at)
    }

    pub fn write_trace_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "index",
            "level",
            "bitrate_kbps",
            "request_us",
            "complete_us",
            "media_bytes",
            "wire_bytes",
            "b_m_kbps",
            "b_n_kbps",
            "available_kbps",
        ])?;
        for r in &self.records {
            w.write_record([
                r.index.to_string(),
                r.level.to_string(),
                r.bitrate_kbps.to_string(),
                r.request_at.as_micros().to_string(),
                r.complete_at.as_micros().to_string(),
                r.media_bytes.to_string(),
                r.wire_bytes.to_string(),
                format!("{:.3}", r.b_m_kbps),
                format!("{:.3}", r.b_n_kbps),
                r.available_kbps.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("trace", e))?;
        Ok(())
    }

    pub fn save_trace_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_trace_csv(std::io::BufWriter::new(file))
    }
}
