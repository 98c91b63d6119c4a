//! Slow start and additive increase, multiplicative decrease.

pub const INITIAL_WINDOW_SEGMENTS: u64 = 10;
pub const INITIAL_SSTHRESH: u64 = 64 * 1024;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CongestionController {
    mss: u64,
    cwnd: u64,
    ssthresh: u64,
    /// Fractional congestion-avoidance growth carried between acks.
    avoidance_credit: u64,
}

impl CongestionController {
    pub fn new(mss: u64) -> Self {
        Self::with_state(mss, INITIAL_WINDOW_SEGMENTS * mss, INITIAL_SSTHRESH)
    }

    pub fn with_state(mss: u64, cwnd: u64, ssthresh: u64) -> Self {
        CongestionController {
            mss,
            cwnd: cwnd.max(2 * mss),
            ssthresh,
            avoidance_credit: 0,
        }
    }

    pub fn mss(&self) -> u64 {
        self.mss
    }

    pub fn cwnd(&self) -> u64 {
        self.cwnd
    }

    pub fn ssthresh(&self) -> u64 {
        self.ssthresh
    }

    pub fn in_slow_start(&self) -> bool {
        self.cwnd < self.ssthresh
    }

    pub fn on_ack(&mut self, acked_bytes: u64) {
        if self.in_slow_start() {
            self.cwnd += acked_bytes;
            return;
        }
        // mss * acked / cwnd, with the remainder kept so small acks add up.
        let num = self.mss * acked_bytes + self.avoidance_credit;
        self.cwnd += num / self.cwnd;
        self.avoidance_credit = num % self.cwnd;
    }

    pub fn on_loss(&mut self) {
        self.ssthresh = (self.cwnd / 2).max(2 * self.mss);
        self.cwnd = self.ssthresh;
        self.avoidance_credit = 0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MSS: u64 = 1_448;

    #[test]
    fn slow_start_ack() {
        let mut cc = CongestionController::new(MSS);
        assert_eq!((cc.cwnd(), cc.ssthresh()), (10 * MSS, 65_536));
        cc.on_ack(MSS);
        assert_eq!(cc.cwnd(), 11 * MSS);
    }

    #[test]
    fn loss_halves() {
        let mut cc = CongestionController::with_state(MSS, 40 * MSS, 10 * MSS);
        cc.on_loss();
        assert_eq!((cc.ssthresh(), cc.cwnd()), (20 * MSS, 20 * MSS));
    }

    #[test]
    fn loss_floor() {
        let mut cc = CongestionController::with_state(MSS, 2 * MSS, 10 * MSS);
        cc.on_loss();
        assert_eq!(cc.cwnd(), 2 * MSS);
    }

    #[test]
    fn avoidance_adds_one_segment_per_window() {
        let mut cc = CongestionController::with_state(MSS, 50 * MSS, 10 * MSS);
        for _ in 0..50 {
            cc.on_ack(MSS);
        }
        // Growth per ack shrinks as cwnd rises, so a window of acks adds just under one mss.
        assert!(cc.cwnd() > 50 * MSS + MSS * 95 / 100 && cc.cwnd() <= 51 * MSS);
    }
}
