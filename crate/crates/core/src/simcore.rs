//! Deterministic discrete-event engine.
//!
//! Time is an integer count of microseconds. Events that fire at the same
//! instant are processed in the order they were scheduled. Randomness comes
//! from [`SeededRng`], a xoshiro256** generator whose state is expanded from
//! a 64-bit seed with SplitMix64, so a seed names the same stream everywhere.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashSet};
use std::fmt;
use std::ops::{Add, AddAssign, Mul, Sub};

use rand_core::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;

use crate::{Error, Result};

/// Microseconds since the start of a simulation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SimTime(u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    pub const MAX: SimTime = SimTime(u64::MAX);

    pub const fn from_micros(us: u64) -> Self {
        SimTime(us)
    }

    pub const fn from_millis(ms: u64) -> Self {
        SimTime(ms * 1_000)
    }

    pub const fn from_secs(s: u64) -> Self {
        SimTime(s * 1_000_000)
    }

    pub const fn as_micros(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1e6
    }

    pub fn saturating_sub(self, other: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(other.0))
    }

    /// Formats as decimal seconds without trailing zeros, e.g. `2` or `1.25`.
    pub fn to_decimal_secs(self) -> String {
        let (whole, frac) = (self.0 / 1_000_000, self.0 % 1_000_000);
        if frac == 0 {
            whole.to_string()
        } else {
            let digits = format!("{frac:06}");
            format!("{whole}.{}", digits.trim_end_matches('0'))
        }
    }

    /// Parses decimal seconds exactly, up to microsecond precision.
    pub fn parse_decimal_secs(s: &str) -> std::result::Result<SimTime, String> {
        let (whole, frac) = s.split_once('.').unwrap_or((s, ""));
        if whole.is_empty() && frac.is_empty() {
            return Err("empty value".into());
        }
        if frac.len() > 6 {
            return Err("more than microsecond precision".into());
        }
        let all_digits = |p: &str| p.bytes().all(|b| b.is_ascii_digit());
        if !all_digits(whole) || !all_digits(frac) {
            return Err(format!("not a decimal number: {s:?}"));
        }
        let whole: u64 = if whole.is_empty() {
            0
        } else {
            whole.parse().map_err(|e: std::num::ParseIntError| e.to_string())?
        };
        let frac_us: u64 = if frac.is_empty() {
            0
        } else {
            format!("{frac:0<6}")
                .parse()
                .map_err(|e: std::num::ParseIntError| e.to_string())?
        };
        whole
            .checked_mul(1_000_000)
            .and_then(|w| w.checked_add(frac_us))
            .map(SimTime)
            .ok_or_else(|| "value too large".into())
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}us", self.0)
    }
}

impl Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.saturating_add(rhs.0))
    }
}

impl AddAssign for SimTime {
    fn add_assign(&mut self, rhs: SimTime) {
        *self = *self + rhs;
    }
}

impl Sub for SimTime {
    type Output = SimTime;
    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 - rhs.0)
    }
}

impl Mul<u64> for SimTime {
    type Output = SimTime;
    fn mul(self, rhs: u64) -> SimTime {
        SimTime(self.0.saturating_mul(rhs))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EventId(pub u64);

struct Entry<E> {
    fire_at: SimTime,
    sequence: u64,
    action: E,
}

impl<E> PartialEq for Entry<E> {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

impl<E> Eq for Entry<E> {}

impl<E> PartialOrd for Entry<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Entry<E> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key().cmp(&other.key())
    }
}

impl<E> Entry<E> {
    fn key(&self) -> (SimTime, u64) {
        (self.fire_at, self.sequence)
    }
}

/// Default cap on processed events before a run is declared livelocked.
pub const DEFAULT_EVENT_BUDGET: u64 = 10_000_000;

/// Min-heap of pending events ordered by `(fire_at, sequence)`.
pub struct EventQueue<E> {
    heap: BinaryHeap<Reverse<Entry<E>>>,
    pending: HashSet<u64>,
    now: SimTime,
    next_sequence: u64,
    processed: u64,
    cancelled: u64,
    budget: u64,
}

impl<E> Default for EventQueue<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> EventQueue<E> {
    pub fn new() -> Self {
        Self::with_budget(DEFAULT_EVENT_BUDGET)
    }

    pub fn with_budget(budget: u64) -> Self {
        EventQueue {
            heap: BinaryHeap::new(),
            pending: HashSet::new(),
            now: SimTime::ZERO,
            next_sequence: 0,
            processed: 0,
            cancelled: 0,
            budget,
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }

    pub fn processed(&self) -> u64 {
        self.processed
    }

    pub fn scheduled(&self) -> u64 {
        self.next_sequence
    }

    pub fn cancelled(&self) -> u64 {
        self.cancelled
    }

    pub fn schedule(&mut self, at: SimTime, action: E) -> Result<EventId> {
        if at < self.now {
            return Err(Error::PastEvent { at, now: self.now });
        }
        let sequence = self.next_sequence;
        self.next_sequence += 1;
        self.pending.insert(sequence);
        self.heap.push(Reverse(Entry {
            fire_at: at,
            sequence,
            action,
        }));
        Ok(EventId(sequence))
    }

    pub fn schedule_in(&mut self, delay: SimTime, action: E) -> EventId {
        let at = self.now + delay;
        // cannot be in the past
        self.schedule(at, action).expect("relative schedule")
    }

    /// Cancels a pending event. Returns false if it already fired or was
    /// cancelled before.
    pub fn cancel(&mut self, id: EventId) -> bool {
        let removed = self.pending.remove(&id.0);
        if removed {
            self.cancelled += 1;
        }
        removed
    }

    /// Pops the next live event and advances the clock to it.
    pub fn pop(&mut self) -> Result<Option<(SimTime, E)>> {
        while let Some(Reverse(entry)) = self.heap.pop() {
            if !self.pending.remove(&entry.sequence) {
                continue;
            }
            if self.processed >= self.budget {
                return Err(Error::Livelock {
                    budget: self.budget,
                    at: entry.fire_at,
                });
            }
            debug_assert!(entry.fire_at >= self.now);
            self.now = entry.fire_at;
            self.processed += 1;
            return Ok(Some((entry.fire_at, entry.action)));
        }
        Ok(None)
    }

    /// Processes events until none remain and returns the final clock.
    pub fn run_until_idle<F>(&mut self, mut handler: F) -> Result<SimTime>
    where
        F: FnMut(&mut EventQueue<E>, E) -> Result<()>,
    {
        while let Some((_, action)) = self.pop()? {
            handler(self, action)?;
        }
        Ok(self.now)
    }
}

/// Seeded xoshiro256** stream.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    inner: Xoshiro256StarStar,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng {
            seed,
            inner: Xoshiro256StarStar::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform integer in `[0, bound)`, without modulo bias.
    pub fn below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0);
        let zone = u64::MAX - u64::MAX % bound;
        loop {
            let v = self.next_u64();
            if v < zone {
                return v % bound;
            }
        }
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_insertion_gets_id_zero() {
        let mut q = EventQueue::new();
        let id = q.schedule(SimTime::ZERO, ()).unwrap();
        assert_eq!(id, EventId(0));
        assert_eq!(q.len(), 1);
    }

    #[test]
    fn equal_timestamps_are_fifo() {
        let mut q = EventQueue::new();
        q.schedule(SimTime::from_micros(100), 'A').unwrap();
        q.schedule(SimTime::from_micros(100), 'B').unwrap();
        let mut seen = Vec::new();
        q.run_until_idle(|_, e| {
            seen.push(e);
            Ok(())
        })
        .unwrap();
        assert_eq!(seen, vec!['A', 'B']);
    }

    #[test]
    fn scheduling_in_the_past_is_rejected() {
        let mut q = EventQueue::new();
        q.schedule(SimTime::from_micros(60), ()).unwrap();
        q.pop().unwrap();
        let err = q.schedule(SimTime::from_micros(50), ()).unwrap_err();
        assert!(err.to_string().contains("past event"), "{err}");
    }

    #[test]
    fn empty_queue_finishes_at_zero() {
        let mut q: EventQueue<()> = EventQueue::new();
        assert_eq!(q.run_until_idle(|_, _| Ok(())).unwrap(), SimTime::ZERO);
    }

    #[test]
    fn final_time_is_last_event() {
        let mut q = EventQueue::new();
        for t in [10, 20, 20] {
            q.schedule(SimTime::from_micros(t), ()).unwrap();
        }
        let mut n = 0;
        let end = q
            .run_until_idle(|_, _| {
                n += 1;
                Ok(())
            })
            .unwrap();
        assert_eq!(end, SimTime::from_micros(20));
        assert_eq!(n, 3);
        assert_eq!(q.processed(), q.scheduled());
    }

    #[test]
    fn self_rescheduling_event_hits_the_budget() {
        let mut q = EventQueue::new();
        q.schedule(SimTime::ZERO, ()).unwrap();
        let err = q
            .run_until_idle(|q, ()| {
                q.schedule_in(SimTime::from_micros(1), ());
                Ok(())
            })
            .unwrap_err();
        assert!(matches!(err, Error::Livelock { budget, .. } if budget == 10_000_000));
    }

    #[test]
    fn cancelled_events_do_not_fire() {
        let mut q = EventQueue::new();
        let a = q.schedule(SimTime::from_micros(5), 1).unwrap();
        q.schedule(SimTime::from_micros(6), 2).unwrap();
        assert!(q.cancel(a));
        assert!(!q.cancel(a));
        let mut seen = Vec::new();
        q.run_until_idle(|_, e| {
            seen.push(e);
            Ok(())
        })
        .unwrap();
        assert_eq!(seen, vec![2]);
        assert_eq!(q.processed() + q.cancelled(), q.scheduled());
    }

    #[test]
    fn rng_is_reproducible() {
        let mut a = SeededRng::new(7);
        let mut b = SeededRng::new(7);
        let mut c = SeededRng::new(8);
        let xs: Vec<u64> = (0..16).map(|_| a.next_u64()).collect();
        let ys: Vec<u64> = (0..16).map(|_| b.next_u64()).collect();
        let zs: Vec<u64> = (0..16).map(|_| c.next_u64()).collect();
        assert_eq!(xs, ys);
        assert_ne!(xs, zs);
        for _ in 0..1000 {
            assert!(a.below(3) < 3);
            let f = a.next_f64();
            assert!((0.0..1.0).contains(&f));
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn clock_never_goes_backwards(times in proptest::collection::vec(0u64..1_000, 1..200)) {
                let mut q = EventQueue::new();
                for (i, t) in times.iter().enumerate() {
                    q.schedule(SimTime::from_micros(*t), i).unwrap();
                }
                let mut order = Vec::new();
                q.run_until_idle(|q, i| {
                    order.push((q.now(), i));
                    Ok(())
                }).unwrap();
                for w in order.windows(2) {
                    prop_assert!(w[1].0 >= w[0].0);
                    if w[1].0 == w[0].0 {
                        prop_assert!(w[1].1 > w[0].1);
                    }
                }
                prop_assert_eq!(q.processed() as usize, times.len());
            }
        }
    }
}
