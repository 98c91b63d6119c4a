//! Sets of half-open `u64` intervals.

use std::collections::BTreeMap;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RangeSet {
    /// start -> end, disjoint and non-adjacent.
    map: BTreeMap<u64, u64>,
}

impl RangeSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Number of disjoint intervals.
    pub fn len(&self) -> usize {
        self.map.len()
    }

    /// Inserts `[start, end)` and returns how many values were not yet present.
    pub fn insert(&mut self, start: u64, end: u64) -> u64 {
        if start >= end {
            return 0;
        }
        let mut lo = start;
        let mut hi = end;
        let mut covered = 0;
        if let Some((&s, &e)) = self.map.range(..=start).next_back() {
            if e >= start {
                lo = s;
                hi = hi.max(e);
                covered += e.min(end).saturating_sub(start);
                self.map.remove(&s);
            }
        }
        let overlapping: Vec<(u64, u64)> = self
            .map
            .range(start..=end)
            .map(|(&s, &e)| (s, e))
            .collect();
        for (s, e) in overlapping {
            covered += e.min(end) - s;
            hi = hi.max(e);
            self.map.remove(&s);
        }
        self.map.insert(lo, hi);
        (end - start) - covered
    }

    pub fn contains(&self, x: u64) -> bool {
        self.map
            .range(..=x)
            .next_back()
            .is_some_and(|(_, &e)| x < e)
    }

    /// End of the interval that starts at `from`, or `from` if none does.
    pub fn contiguous_end(&self, from: u64) -> u64 {
        match self.map.range(..=from).next_back() {
            Some((_, &e)) if e > from => e,
            _ => from,
        }
    }

    pub fn max(&self) -> Option<u64> {
        self.map.last_key_value().map(|(_, &e)| e - 1)
    }

    /// Up to `limit` intervals, highest first.
    pub fn highest(&self, limit: usize) -> Vec<(u64, u64)> {
        self.map.iter().rev().take(limit).map(|(&s, &e)| (s, e)).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        self.map.iter().map(|(&s, &e)| (s, e))
    }
}
