//! Single-stream reliable transport with cumulative acks.

use std::collections::{BTreeMap, VecDeque};

use super::congestion::CongestionController;
use super::pacing::Pacer;
use super::ranges::RangeSet;
use super::rtt::RttEstimator;
use super::{AckFrame, PacketBody, Poll, SenderStats, StreamChunk, WirePacket};
use crate::SimTime;

const DUPACK_THRESHOLD: u32 = 3;

#[derive(Debug, Clone)]
struct Segment {
    len: u32,
    sent_at: SimTime,
    retransmitted: bool,
}

#[derive(Debug, Clone)]
pub struct TcpSender {
    header_bytes: u32,
    mss: u32,
    receive_window: u64,
    cc: CongestionController,
    rtt: RttEstimator,
    pacer: Pacer,
    write_end: u64,
    snd_una: u64,
    snd_nxt: u64,
    segments: BTreeMap<u64, Segment>,
    retx: VecDeque<u64>,
    dupacks: u32,
    /// NewReno recovery point; `Some` while recovering.
    recover: Option<u64>,
    inflation: u64,
    rto_deadline: Option<SimTime>,
    backoff: u32,
    stats: SenderStats,
}

impl TcpSender {
    pub fn new(header_bytes: u32, mss: u32, receive_window: u64, pacing: bool) -> Self {
        TcpSender {
            header_bytes,
            mss,
            receive_window,
            cc: CongestionController::new(u64::from(mss)),
            rtt: RttEstimator::new(),
            pacer: Pacer::new(pacing),
            write_end: 0,
            snd_una: 0,
            snd_nxt: 0,
            segments: BTreeMap::new(),
            retx: VecDeque::new(),
            dupacks: 0,
            recover: None,
            inflation: 0,
            rto_deadline: None,
            backoff: 0,
            stats: SenderStats::default(),
        }
    }

    pub fn congestion(&self) -> &CongestionController {
        &self.cc
    }

    pub fn rtt(&self) -> &RttEstimator {
        &self.rtt
    }

    pub fn stats(&self) -> &SenderStats {
        &self.stats
    }

    pub(crate) fn stats_mut(&mut self) -> &mut SenderStats {
        &mut self.stats
    }

    pub fn bytes_in_flight(&self) -> u64 {
        self.snd_nxt - self.snd_una
    }

    pub fn next_seq(&self) -> u64 {
        self.snd_nxt
    }

    /// Appends `len` bytes to the stream and returns their sequence range.
    pub fn write(&mut self, len: u64) -> (u64, u64) {
        let start = self.write_end;
        self.write_end += len;
        (start, self.write_end)
    }

    pub fn rto_deadline(&self) -> Option<SimTime> {
        self.rto_deadline
    }

    fn packet(&self, seq: u64, len: u32, retransmission: bool) -> WirePacket {
        WirePacket {
            seq,
            header_bytes: self.header_bytes,
            payload_bytes: len,
            retransmission,
            body: PacketBody::Data(StreamChunk { stream: 0, offset: seq, len }),
        }
    }

    fn arm_timer(&mut self, now: SimTime) {
        if self.rto_deadline.is_none() {
            self.rto_deadline = Some(now + self.rtt.backed_off_rto(self.backoff));
        }
    }

    fn has_work(&self) -> bool {
        !self.retx.is_empty() || self.snd_nxt < self.write_end
    }

    pub fn poll_transmit(&mut self, now: SimTime) -> Poll {
        while let Some(&seq) = self.retx.front() {
            if self.segments.contains_key(&seq) {
                break;
            }
            self.retx.pop_front();
        }
        if !self.has_work() {
            return Poll::Idle;
        }
        if let Some(at) = self.pacer.blocked_until(now) {
            return Poll::WaitUntil(at);
        }
        let packet = if let Some(seq) = self.retx.pop_front() {
            let seg = self.segments.get_mut(&seq).expect("checked above");
            seg.retransmitted = true;
            seg.sent_at = now;
            let len = seg.len;
            self.packet(seq, len, true)
        } else {
            let len = (self.write_end - self.snd_nxt).min(u64::from(self.mss)) as u32;
            let flight = self.bytes_in_flight();
            let window = (self.cc.cwnd() + self.inflation).min(self.receive_window);
            if flight > 0 && flight + u64::from(len) > window {
                return Poll::Idle;
            }
            let seq = self.snd_nxt;
            self.segments.insert(seq, Segment { len, sent_at: now, retransmitted: false });
            self.snd_nxt += u64::from(len);
            self.packet(seq, len, false)
        };
        self.arm_timer(now);
        self.pacer.on_send(now, packet.total_bytes(), &self.cc, self.receive_window, &self.rtt);
        self.stats.record(&packet);
        Poll::Transmit(packet)
    }

    pub fn on_ack(&mut self, ack: u64, now: SimTime) {
        let flight_before = self.bytes_in_flight();
        if ack > self.snd_una && ack <= self.snd_nxt {
            let newly = ack - self.snd_una;
            let mut sample = None;
            while let Some(entry) = self.segments.first_entry() {
                if entry.key() + u64::from(entry.get().len) > ack {
                    break;
                }
                let seg = entry.remove();
                // Karn: no samples from retransmitted segments.
                sample = (!seg.retransmitted).then(|| now.saturating_sub(seg.sent_at));
            }
            if let Some(s) = sample {
                self.rtt.update(s);
            }
            self.snd_una = ack;
            self.backoff = 0;
            match self.recover {
                Some(r) if ack < r => {
                    if !self.retx.contains(&ack) && self.segments.contains_key(&ack) {
                        self.retx.push_front(ack);
                    }
                    self.inflation = self.inflation.saturating_sub(newly) + u64::from(self.mss);
                }
                Some(_) => {
                    self.recover = None;
                    self.inflation = 0;
                    self.dupacks = 0;
                }
                None => {
                    self.dupacks = 0;
                    let cwnd_limited = flight_before + u64::from(self.mss) >= self.cc.cwnd()
                        || self.snd_nxt < self.write_end;
                    if cwnd_limited {
                        self.cc.on_ack(newly);
                    }
                }
            }
            self.rto_deadline = (self.snd_una < self.snd_nxt)
                .then(|| now + self.rtt.backed_off_rto(self.backoff));
        } else if ack == self.snd_una && self.snd_una < self.snd_nxt {
            self.dupacks += 1;
            if self.recover.is_some() {
                self.inflation += u64::from(self.mss);
            } else if self.dupacks == DUPACK_THRESHOLD {
                self.cc.on_loss();
                self.recover = Some(self.snd_nxt);
                self.inflation = u64::from(DUPACK_THRESHOLD * self.mss);
                self.retx.push_front(self.snd_una);
                self.stats.fast_retransmits += 1;
            }
        }
    }

    /// Handles an RTO expiry: every outstanding segment is queued again.
    pub fn on_timeout(&mut self, now: SimTime) {
        match self.rto_deadline {
            Some(t) if t <= now => {}
            _ => return,
        }
        if self.snd_una == self.snd_nxt {
            self.rto_deadline = None;
            return;
        }
        self.cc.on_loss();
        self.recover = Some(self.snd_nxt);
        self.inflation = 0;
        self.dupacks = 0;
        self.retx = self.segments.keys().copied().collect();
        self.backoff += 1;
        self.stats.timeouts += 1;
        self.rto_deadline = Some(now + self.rtt.backed_off_rto(self.backoff));
    }
}

/// Reassembles the byte stream and produces cumulative acks.
#[derive(Debug, Clone, Default)]
pub struct TcpReceiver {
    received: RangeSet,
    delivered: u64,
}

impl TcpReceiver {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn delivered(&self) -> u64 {
        self.delivered
    }

    /// Returns the ack number and the new in-order end if it advanced.
    pub fn on_data(&mut self, chunk: &StreamChunk) -> (AckFrame, Option<u64>) {
        self.received.insert(chunk.offset, chunk.offset + u64::from(chunk.len));
        let end = self.received.contiguous_end(0);
        let advanced = (end > self.delivered).then_some(end);
        self.delivered = end;
        (AckFrame::Cumulative(end), advanced)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sender() -> TcpSender {
        TcpSender::new(66, 1_448, u64::MAX, false)
    }

    fn drain(s: &mut TcpSender, now: SimTime) -> Vec<WirePacket> {
        let mut out = Vec::new();
        while let Poll::Transmit(p) = s.poll_transmit(now) {
            out.push(p);
        }
        out
    }

    #[test]
    fn fragments_at_mss() {
        let mut s = sender();
        s.write(2_896);
        let pkts = drain(&mut s, SimTime::ZERO);
        assert_eq!(pkts.len(), 2);
        assert!(pkts.iter().all(|p| p.total_bytes() == 1_514 && p.payload_bytes == 1_448));
        let mut s = sender();
        s.write(0);
        assert!(drain(&mut s, SimTime::ZERO).is_empty());
    }

    #[test]
    fn window_limits_flight() {
        let mut s = sender();
        s.write(100_000);
        let pkts = drain(&mut s, SimTime::ZERO);
        assert_eq!(pkts.len(), 10);
        s.on_ack(1_448, SimTime::from_millis(10));
        assert_eq!(s.congestion().cwnd(), 11 * 1_448);
        assert_eq!(drain(&mut s, SimTime::from_millis(10)).len(), 2);
    }

    #[test]
    fn triple_dupack_retransmits_first_hole() {
        let mut s = sender();
        s.write(10 * 1_448);
        drain(&mut s, SimTime::ZERO);
        let t = SimTime::from_millis(5);
        for _ in 0..3 {
            s.on_ack(0, t);
        }
        assert_eq!(s.stats().fast_retransmits, 1);
        assert_eq!(s.congestion().cwnd(), 5 * 1_448);
        let p = drain(&mut s, t);
        assert_eq!(p.len(), 1);
        assert!(p[0].retransmission);
        assert_eq!(p[0].seq, 0);
    }

    #[test]
    fn timeout_requeues_outstanding() {
        let mut s = sender();
        s.write(3 * 1_448);
        drain(&mut s, SimTime::ZERO);
        let deadline = s.rto_deadline().unwrap();
        assert_eq!(deadline, SimTime::from_secs(1));
        s.on_timeout(deadline);
        let p = drain(&mut s, deadline);
        assert_eq!(p.iter().map(|p| p.seq).collect::<Vec<_>>(), vec![0, 1_448, 2_896]);
        assert_eq!(s.rto_deadline(), Some(deadline + SimTime::from_secs(2)));
    }

    #[test]
    fn receiver_acks_cumulatively() {
        let mut r = TcpReceiver::new();
        let c = |offset, len| StreamChunk { stream: 0, offset, len };
        assert_eq!(r.on_data(&c(1_448, 1_448)), (AckFrame::Cumulative(0), None));
        assert_eq!(r.on_data(&c(0, 1_448)), (AckFrame::Cumulative(2_896), Some(2_896)));
    }
}
