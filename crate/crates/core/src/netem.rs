//! The emulated path: a token-bucket shaper feeding a drop-tail queue,
//! followed by a fixed one-way propagation delay.
//!
//! Token credit is kept in integer units of 1/8000 byte. At a rate of
//! `r` kbit/s the bucket gains exactly `r` units per microsecond, so every
//! departure time is an exact integer and no floating point enters the
//! shaper.

use std::collections::VecDeque;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use crate::simcore::{SeededRng, SimTime};
use crate::{Error, Result};

const UNITS_PER_BYTE: u64 = 8_000;

/// Default bucket depth: 100 ms at 1 Mbit/s.
pub const DEFAULT_BURST_BYTES: u64 = 12_500;
pub const DEFAULT_QUEUE_CAPACITY: u64 = 64 * 1024;
/// The round-trip presets of the utilization and adaptation experiments.
pub const RTT_PRESETS_MS: [u64; 3] = [0, 50, 150];

const DEFAULT_TRAJECTORY_TEXT: &str = include_str!("../data/default_trajectory.txt");

/// Piecewise-constant available bandwidth.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BandwidthTrajectory {
    steps: Vec<(SimTime, u32)>,
}

impl BandwidthTrajectory {
    pub fn new(steps: Vec<(SimTime, u32)>) -> Result<Self> {
        match steps.first() {
            None => return Err(Error::invalid("trajectory", "no steps")),
            Some((t, _)) if *t != SimTime::ZERO => {
                return Err(Error::invalid("trajectory", "first step must start at 0"))
            }
            _ => {}
        }
        if steps.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::invalid(
                "trajectory",
                "step start times must be strictly increasing",
            ));
        }
        if steps.iter().any(|(_, r)| *r == 0) {
            return Err(Error::invalid("trajectory", "rates must be positive"));
        }
        Ok(BandwidthTrajectory { steps })
    }

    pub fn constant(rate_kbps: u32) -> Result<Self> {
        Self::new(vec![(SimTime::ZERO, rate_kbps)])
    }

    pub fn steps(&self) -> &[(SimTime, u32)] {
        &self.steps
    }

    fn step_index(&self, t: SimTime) -> usize {
        self.steps.partition_point(|(start, _)| *start <= t) - 1
    }

    /// Rate of the last step that started at or before `t`.
    pub fn rate_at(&self, t: SimTime) -> u32 {
        self.steps[self.step_index(t)].1
    }

    /// Rate in force at `t` and the instant it next changes.
    fn piece_at(&self, t: SimTime) -> (u32, Option<SimTime>) {
        let i = self.step_index(t);
        (self.steps[i].1, self.steps.get(i + 1).map(|s| s.0))
    }

    /// Time-weighted mean rate over `[0, horizon)`.
    pub fn time_weighted_mean(&self, horizon: SimTime) -> f64 {
        if horizon == SimTime::ZERO {
            return f64::from(self.steps[0].1);
        }
        let mut acc: u128 = 0;
        for (i, (start, rate)) in self.steps.iter().enumerate() {
            if *start >= horizon {
                break;
            }
            let end = self
                .steps
                .get(i + 1)
                .map_or(horizon, |s| s.0.min(horizon));
            acc += u128::from(*rate) * u128::from((end - *start).as_micros());
        }
        acc as f64 / horizon.as_micros() as f64
    }

    pub fn min_rate(&self) -> u32 {
        self.steps.iter().map(|s| s.1).min().unwrap_or(0)
    }

    pub fn max_rate(&self) -> u32 {
        self.steps.iter().map(|s| s.1).max().unwrap_or(0)
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut steps = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let perr = |field: &str, message: String| Error::Parse {
                path: origin.to_string(),
                line: idx + 1,
                field: field.to_string(),
                message,
            };
            let mut cols = line.split_whitespace();
            let (Some(start), Some(rate), None) = (cols.next(), cols.next(), cols.next()) else {
                return Err(perr("line", "expected `start_seconds rate_kbps`".into()));
            };
            let start = SimTime::parse_decimal_secs(start).map_err(|m| perr("start_seconds", m))?;
            let rate = rate
                .parse::<u32>()
                .map_err(|e| perr("rate_kbps", e.to_string()))?;
            steps.push((start, rate));
        }
        Self::new(steps)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# start_seconds rate_kbps\n");
        for (t, r) in &self.steps {
            out.push_str(&format!("{} {}\n", t.to_decimal_secs(), r));
        }
        out
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }
}

/// The built-in adaptation trajectory shipped as `data/default_trajectory.txt`.
pub fn default_trajectory() -> BandwidthTrajectory {
    BandwidthTrajectory::parse(DEFAULT_TRAJECTORY_TEXT, "default_trajectory.txt")
        .expect("built-in trajectory is valid")
}

/// Token bucket with exact integer credit.
#[derive(Debug, Clone)]
pub struct TokenBucket {
    burst_bytes: u64,
    tokens: u64,
    last_refill: SimTime,
}

impl TokenBucket {
    pub fn new(burst_bytes: u64, full: bool) -> Self {
        TokenBucket {
            burst_bytes,
            tokens: if full { burst_bytes * UNITS_PER_BYTE } else { 0 },
            last_refill: SimTime::ZERO,
        }
    }

    pub fn burst_bytes(&self) -> u64 {
        self.burst_bytes
    }

    /// Current credit in bytes (fractional).
    pub fn tokens_bytes(&self) -> f64 {
        self.tokens as f64 / UNITS_PER_BYTE as f64
    }

    fn cap(&self) -> u64 {
        self.burst_bytes * UNITS_PER_BYTE
    }

    fn refill(&mut self, to: SimTime, rates: &BandwidthTrajectory) {
        let mut t = self.last_refill;
        while t < to && self.tokens < self.cap() {
            let (rate, next) = rates.piece_at(t);
            let end = next.map_or(to, |n| n.min(to));
            let gained = u64::from(rate).saturating_mul((end - t).as_micros());
            self.tokens = self.tokens.saturating_add(gained).min(self.cap());
            t = end;
        }
        self.last_refill = self.last_refill.max(to);
    }

    /// Takes `bytes` of credit no earlier than `start`; returns when the
    /// credit became available.
    fn take(&mut self, bytes: u64, start: SimTime, rates: &BandwidthTrajectory) -> SimTime {
        let need = bytes * UNITS_PER_BYTE;
        debug_assert!(need <= self.cap());
        self.refill(start, rates);
        let mut t = start.max(self.last_refill);
        loop {
            if self.tokens >= need {
                self.tokens -= need;
                self.last_refill = t;
                return t;
            }
            let (rate, next) = rates.piece_at(t);
            let rate = u64::from(rate);
            let wait = (need - self.tokens).div_ceil(rate);
            let done = t + SimTime::from_micros(wait);
            if next.is_none_or(|n| done <= n) {
                self.tokens = (self.tokens + wait * rate).min(self.cap()) - need;
                self.last_refill = done;
                return done;
            }
            let end = next.expect("bounded piece");
            self.tokens = (self.tokens + rate * (end - t).as_micros()).min(self.cap());
            t = end;
        }
    }
}

/// Deterministic forced-loss policy applied on top of queue overflow.
#[derive(Debug, Clone)]
pub enum DropSchedule {
    None,
    /// Drops every `n`-th eligible packet, starting with packet `n - 1`
    /// counted from zero.
    EveryNth(u64),
    /// Drops each eligible packet with probability `per_mille / 1000`.
    Seeded { per_mille: u64, rng: SeededRng },
}

impl DropSchedule {
    fn should_drop(&mut self, ordinal: u64) -> bool {
        match self {
            DropSchedule::None => false,
            DropSchedule::EveryNth(n) => *n > 0 && (ordinal + 1).is_multiple_of(*n),
            DropSchedule::Seeded { per_mille, rng } => rng.below(1000) < *per_mille,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkOutcome {
    Arrives(SimTime),
    Dropped,
}

/// One direction of the emulated path.
#[derive(Debug, Clone)]
pub struct EmulatedLink {
    shaper: TokenBucket,
    rates: Arc<BandwidthTrajectory>,
    one_way_delay: SimTime,
    queue_capacity: u64,
    backlog: VecDeque<(SimTime, u64)>,
    queued: u64,
    drops: DropSchedule,
    eligible_seen: u64,
    drop_count: u64,
    forced_drops: u64,
    bytes_out: u64,
}

impl EmulatedLink {
    pub fn new(
        rates: Arc<BandwidthTrajectory>,
        one_way_delay: SimTime,
        burst_bytes: u64,
        queue_capacity: u64,
    ) -> Self {
        EmulatedLink {
            shaper: TokenBucket::new(burst_bytes, true),
            rates,
            one_way_delay,
            queue_capacity,
            backlog: VecDeque::new(),
            queued: 0,
            drops: DropSchedule::None,
            eligible_seen: 0,
            drop_count: 0,
            forced_drops: 0,
            bytes_out: 0,
        }
    }

    /// Starts with no accumulated credit instead of a full bucket.
    pub fn drained(mut self) -> Self {
        self.shaper = TokenBucket::new(self.shaper.burst_bytes, false);
        self
    }

    pub fn with_drops(mut self, drops: DropSchedule) -> Self {
        self.drops = drops;
        self
    }

    pub fn one_way_delay(&self) -> SimTime {
        self.one_way_delay
    }

    pub fn rates(&self) -> &BandwidthTrajectory {
        &self.rates
    }

    pub fn shaper(&self) -> &TokenBucket {
        &self.shaper
    }

    pub fn queued(&self) -> u64 {
        self.queued
    }

    pub fn queue_capacity(&self) -> u64 {
        self.queue_capacity
    }

    /// Packets lost to queue overflow or the forced-drop schedule.
    pub fn drop_count(&self) -> u64 {
        self.drop_count
    }

    pub fn forced_drops(&self) -> u64 {
        self.forced_drops
    }

    /// Bytes admitted and delivered (or in flight to be delivered).
    pub fn bytes_out(&self) -> u64 {
        self.bytes_out
    }

    /// Offers a packet to the link at `now`. `eligible` packets are subject
    /// to the forced-drop schedule; every packet is subject to overflow.
    pub fn transmit(&mut self, packet_bytes: u64, now: SimTime, eligible: bool) -> LinkOutcome {
        while let Some(&(departs, bytes)) = self.backlog.front() {
            if departs > now {
                break;
            }
            self.queued -= bytes;
            self.backlog.pop_front();
        }
        // a packet larger than the bucket can never earn enough credit
        if self.queued + packet_bytes > self.queue_capacity
            || packet_bytes > self.shaper.burst_bytes
        {
            self.drop_count += 1;
            return LinkOutcome::Dropped;
        }
        if eligible {
            let ordinal = self.eligible_seen;
            self.eligible_seen += 1;
            if self.drops.should_drop(ordinal) {
                self.drop_count += 1;
                self.forced_drops += 1;
                return LinkOutcome::Dropped;
            }
        }
        let start = self.backlog.back().map_or(now, |&(d, _)| d.max(now));
        let departs = self.shaper.take(packet_bytes, start, &self.rates);
        if departs > now {
            self.queued += packet_bytes;
            self.backlog.push_back((departs, packet_bytes));
        }
        self.bytes_out += packet_bytes;
        LinkOutcome::Arrives(departs + self.one_way_delay)
    }
}

/// One-way delay for a round-trip time, with a 1 us floor so that the two
/// directions never collapse onto the same instant.
pub fn one_way_delay_for_rtt(rtt: SimTime) -> SimTime {
    SimTime::from_micros((rtt.as_micros() / 2).max(1))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn link(rate_kbps: u32, delay: SimTime) -> EmulatedLink {
        EmulatedLink::new(
            Arc::new(BandwidthTrajectory::constant(rate_kbps).unwrap()),
            delay,
            DEFAULT_BURST_BYTES,
            DEFAULT_QUEUE_CAPACITY,
        )
    }

    #[test]
    fn full_bucket_passes_immediately_then_waits_for_refill() {
        let mut l = link(1_000, SimTime::ZERO);
        assert_eq!(
            l.transmit(12_500, SimTime::ZERO, true),
            LinkOutcome::Arrives(SimTime::ZERO)
        );
        assert_eq!(
            l.transmit(12_500, SimTime::ZERO, true),
            LinkOutcome::Arrives(SimTime::from_micros(100_000))
        );
    }

    #[test]
    fn overflow_drops() {
        let mut l = EmulatedLink::new(
            Arc::new(BandwidthTrajectory::constant(1_000).unwrap()),
            SimTime::ZERO,
            1_500,
            3_000,
        );
        for _ in 0..3 {
            assert!(matches!(l.transmit(1_500, SimTime::ZERO, true), LinkOutcome::Arrives(_)));
        }
        assert_eq!(l.queued(), 3_000);
        assert_eq!(l.transmit(1_500, SimTime::ZERO, true), LinkOutcome::Dropped);
        assert_eq!(l.drop_count(), 1);
    }

    #[test]
    fn delay_is_added_after_shaping() {
        let mut l = link(1_000, SimTime::from_millis(25));
        assert_eq!(
            l.transmit(1_000, SimTime::from_millis(3), true),
            LinkOutcome::Arrives(SimTime::from_millis(28))
        );
    }

    #[test]
    fn every_nth_schedule() {
        let mut l = link(100_000, SimTime::ZERO).with_drops(DropSchedule::EveryNth(20));
        let dropped = (0..200)
            .filter(|i| l.transmit(100, SimTime::from_millis(*i), true) == LinkOutcome::Dropped)
            .count();
        assert_eq!(dropped, 10);
        // ineligible packets are never force-dropped
        let mut l = link(100_000, SimTime::ZERO).with_drops(DropSchedule::EveryNth(1));
        assert!(matches!(l.transmit(100, SimTime::ZERO, false), LinkOutcome::Arrives(_)));
    }

    #[test]
    fn rate_change_applies_from_its_start() {
        let traj = BandwidthTrajectory::new(vec![
            (SimTime::ZERO, 1_000),
            (SimTime::from_millis(50), 2_000),
        ])
        .unwrap();
        let mut l = EmulatedLink::new(Arc::new(traj), SimTime::ZERO, 12_500, 1 << 20).drained();
        // 12,500 B = 1e8 units: 50 ms at 1000 (5e7) then 25 ms at 2000
        assert_eq!(
            l.transmit(12_500, SimTime::ZERO, true),
            LinkOutcome::Arrives(SimTime::from_millis(75))
        );
    }

    #[test]
    fn rate_lookup() {
        let t = BandwidthTrajectory::constant(3_000).unwrap();
        assert_eq!(t.rate_at(SimTime::from_secs(5)), 3_000);
        let t = BandwidthTrajectory::new(vec![(SimTime::ZERO, 1_000), (SimTime::from_secs(10), 5_000)]).unwrap();
        assert_eq!(t.rate_at(SimTime::from_secs(10)), 5_000);
        assert_eq!(t.rate_at(SimTime::from_micros(9_999_999)), 1_000);
        assert_eq!(t.time_weighted_mean(SimTime::from_secs(20)), 3_000.0);
    }

    #[test]
    fn default_trajectory_shape() {
        let t = default_trajectory();
        let horizon = SimTime::from_secs(600);
        assert!(t.min_rate() >= 1_000);
        assert!(t.max_rate() <= 5_000);
        let mean = t.time_weighted_mean(horizon);
        assert!((mean - 2_700.0).abs() <= 27.0, "mean {mean}");
        let distinct_in_horizon = t.steps().iter().filter(|s| s.0 < horizon).count();
        assert!(distinct_in_horizon >= 8);
    }

    #[test]
    fn trajectory_file_round_trip_and_errors() {
        let t = default_trajectory();
        assert_eq!(BandwidthTrajectory::parse(&t.to_text(), "mem").unwrap(), t);
        assert!(BandwidthTrajectory::parse("5 100\n", "mem").is_err());
        assert!(BandwidthTrajectory::parse("0 100\n0 200\n", "mem").is_err());
        match BandwidthTrajectory::parse("# c\n0 10x\n", "f").unwrap_err() {
            Error::Parse { line, field, .. } => assert_eq!((line, field.as_str()), (2, "rate_kbps")),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn zero_rtt_floor() {
        assert_eq!(one_way_delay_for_rtt(SimTime::ZERO), SimTime::from_micros(1));
        assert_eq!(one_way_delay_for_rtt(SimTime::from_millis(150)), SimTime::from_millis(75));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn tokens_stay_within_bucket(
                rate in 100u32..10_000,
                sends in proptest::collection::vec((0u64..50_000, 40u64..1_514), 1..300),
            ) {
                let mut l = link(rate, SimTime::ZERO);
                let mut now = SimTime::ZERO;
                for (gap, bytes) in sends {
                    now += SimTime::from_micros(gap);
                    l.transmit(bytes, now, true);
                    let tok = l.shaper().tokens_bytes();
                    prop_assert!(tok >= 0.0 && tok <= l.shaper().burst_bytes() as f64);
                    prop_assert!(l.queued() <= l.queue_capacity());
                }
            }

            #[test]
            fn fifo_and_conservation(
                sends in proptest::collection::vec((0u64..20_000, 40u64..1_514), 1..300),
            ) {
                let mut l = link(2_000, SimTime::from_millis(10));
                let mut now = SimTime::ZERO;
                let mut last = SimTime::ZERO;
                let mut bytes_in = 0;
                for (gap, bytes) in sends {
                    now += SimTime::from_micros(gap);
                    if let LinkOutcome::Arrives(at) = l.transmit(bytes, now, true) {
                        prop_assert!(at >= last);
                        prop_assert!(at >= now + SimTime::from_millis(10));
                        last = at;
                        bytes_in += bytes;
                    }
                }
                prop_assert_eq!(bytes_in, l.bytes_out());
            }

            #[test]
            fn infinite_rate_adds_only_delay(
                delay in 0u64..200_000,
                sends in proptest::collection::vec((1u64..5_000, 40u64..1_514), 1..50),
            ) {
                let mut l = EmulatedLink::new(
                    Arc::new(BandwidthTrajectory::constant(u32::MAX).unwrap()),
                    SimTime::from_micros(delay),
                    DEFAULT_BURST_BYTES,
                    DEFAULT_QUEUE_CAPACITY,
                );
                let mut now = SimTime::ZERO;
                for (gap, bytes) in sends {
                    now += SimTime::from_micros(gap);
                    let out = l.transmit(bytes, now, true);
                    prop_assert_eq!(out, LinkOutcome::Arrives(now + SimTime::from_micros(delay)));
                }
            }
        }
    }
}
