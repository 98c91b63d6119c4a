//! Spreads a window of packets over one smoothed RTT.

use super::congestion::CongestionController;
use super::rtt::RttEstimator;
use crate::SimTime;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pacer {
    enabled: bool,
    next_send: SimTime,
}

impl Pacer {
    pub fn new(enabled: bool) -> Self {
        Pacer { enabled, next_send: SimTime::ZERO }
    }

    pub fn blocked_until(&self, now: SimTime) -> Option<SimTime> {
        (self.enabled && self.next_send > now).then_some(self.next_send)
    }

    /// Rate is 2 × window / srtt in slow start and 1.25 × window / srtt after,
    /// where the window is cwnd capped by `window_cap`.
    pub fn on_send(
        &mut self,
        now: SimTime,
        bytes: u32,
        cc: &CongestionController,
        window_cap: u64,
        rtt: &RttEstimator,
    ) {
        let Some(srtt) = rtt.srtt().filter(|_| self.enabled) else {
            return;
        };
        let (num, den) = if cc.in_slow_start() { (2, 1) } else { (5, 4) };
        let interval = u64::from(bytes) * srtt.as_micros() * den / (num * cc.cwnd().min(window_cap));
        self.next_send = self.next_send.max(now) + SimTime::from_micros(interval);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spacing() {
        let cc = CongestionController::with_state(1_000, 100_000, 50_000);
        let mut rtt = RttEstimator::new();
        let mut p = Pacer::new(true);
        p.on_send(SimTime::ZERO, 1_000, &cc, u64::MAX, &rtt);
        assert_eq!(p.blocked_until(SimTime::ZERO), None);
        rtt.update(SimTime::from_millis(100));
        p.on_send(SimTime::ZERO, 1_000, &cc, u64::MAX, &rtt);
        assert_eq!(p.blocked_until(SimTime::ZERO), Some(SimTime::from_micros(800)));
        let mut off = Pacer::new(false);
        off.on_send(SimTime::ZERO, 1_000, &cc, u64::MAX, &rtt);
        assert_eq!(off.blocked_until(SimTime::ZERO), None);
    }
}
