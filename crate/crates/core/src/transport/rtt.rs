//! Smoothed RTT and the retransmission timeout.

use crate::SimTime;

pub const MIN_RTO: SimTime = SimTime::from_millis(200);
pub const INITIAL_RTO: SimTime = SimTime::from_secs(1);
pub const MAX_BACKOFF: u32 = 6;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RttEstimator {
    srtt: Option<SimTime>,
    rttvar: SimTime,
    latest: Option<SimTime>,
}

impl RttEstimator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn srtt(&self) -> Option<SimTime> {
        self.srtt
    }

    pub fn rttvar(&self) -> SimTime {
        self.rttvar
    }

    pub fn latest(&self) -> Option<SimTime> {
        self.latest
    }

    pub fn update(&mut self, sample: SimTime) {
        self.latest = Some(sample);
        let r = sample.as_micros();
        match self.srtt {
            None => {
                self.srtt = Some(sample);
                self.rttvar = SimTime::from_micros(r / 2);
            }
            Some(s) => {
                let s = s.as_micros();
                let var = self.rttvar.as_micros();
                self.rttvar = SimTime::from_micros((3 * var + s.abs_diff(r)) / 4);
                self.srtt = Some(SimTime::from_micros((7 * s + r) / 8));
            }
        }
    }

    /// max(200 ms, 2 × srtt, srtt + 4 × rttvar); one second before the
    /// first sample.
    pub fn rto(&self) -> SimTime {
        match self.srtt {
            None => INITIAL_RTO,
            Some(s) => (s * 2).max(s + self.rttvar * 4).max(MIN_RTO),
        }
    }

    /// RTO after `backoff` consecutive expiries.
    pub fn backed_off_rto(&self, backoff: u32) -> SimTime {
        self.rto() * (1u64 << backoff.min(MAX_BACKOFF))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rto_floor_and_doubling() {
        let mut r = RttEstimator::new();
        assert_eq!(r.rto(), INITIAL_RTO);
        r.update(SimTime::from_millis(50));
        assert_eq!(r.rto(), MIN_RTO);
        for _ in 0..80 {
            r.update(SimTime::from_millis(150));
        }
        // the variance has decayed, so twice the smoothed RTT dominates
        let srtt = r.srtt().unwrap();
        assert_eq!(r.rto(), srtt * 2);
        assert!(srtt.as_micros().abs_diff(150_000) < 100);
        assert_eq!(r.backed_off_rto(2), r.rto() * 4);
    }

    #[test]
    fn first_sample_variance() {
        let mut r = RttEstimator::new();
        r.update(SimTime::from_millis(300));
        assert_eq!(r.rttvar(), SimTime::from_millis(150));
        assert_eq!(r.rto(), SimTime::from_millis(900));
    }

    #[test]
    fn smoothing() {
        let mut r = RttEstimator::new();
        r.update(SimTime::from_micros(800));
        r.update(SimTime::from_micros(1_600));
        assert_eq!(r.srtt(), Some(SimTime::from_micros(900)));
        assert_eq!(r.latest(), Some(SimTime::from_micros(1_600)));
    }
}
