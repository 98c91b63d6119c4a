//! Multi-stream transport over numbered datagrams.

use std::collections::{BTreeMap, VecDeque};

use super::congestion::CongestionController;
use super::pacing::Pacer;
use super::ranges::RangeSet;
use super::rtt::RttEstimator;
use super::{AckFrame, PacketBody, Poll, QuicFraming, SenderStats, StreamChunk, WirePacket};
use crate::{Error, Result, SimTime};

/// A packet is lost once a packet this many numbers later is acked.
pub const PACKET_THRESHOLD: u64 = 3;

#[derive(Debug, Clone, Default)]
struct SendStream {
    write_end: u64,
    next_offset: u64,
}

#[derive(Debug, Clone)]
struct SentPacket {
    chunk: StreamChunk,
    payload: u32,
    sent_at: SimTime,
}

#[derive(Debug, Clone)]
pub struct QuicSender {
    framing: QuicFraming,
    header_bytes: u32,
    capacity: u32,
    receive_window: u64,
    cc: CongestionController,
    rtt: RttEstimator,
    pacer: Pacer,
    streams: BTreeMap<u64, SendStream>,
    /// Last stream served, for round-robin.
    cursor: Option<u64>,
    retx: VecDeque<StreamChunk>,
    next_pn: u64,
    sent: BTreeMap<u64, SentPacket>,
    bytes_in_flight: u64,
    largest_acked: Option<u64>,
    /// Losses of packets numbered at or below this start no new epoch.
    recovery_end_pn: Option<u64>,
    rto_deadline: Option<SimTime>,
    backoff: u32,
    stats: SenderStats,
}

impl QuicSender {
    /// `header_bytes` covers link, IP, UDP and the public header;
    /// `capacity` is what remains of the MTU.
    pub fn new(
        framing: QuicFraming,
        header_bytes: u32,
        capacity: u32,
        receive_window: u64,
        pacing: bool,
    ) -> Self {
        QuicSender {
            framing,
            header_bytes,
            capacity,
            receive_window,
            cc: CongestionController::new(u64::from(capacity)),
            rtt: RttEstimator::new(),
            pacer: Pacer::new(pacing),
            streams: BTreeMap::new(),
            cursor: None,
            retx: VecDeque::new(),
            next_pn: 0,
            sent: BTreeMap::new(),
            bytes_in_flight: 0,
            largest_acked: None,
            recovery_end_pn: None,
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
        self.bytes_in_flight
    }

    pub fn rto_deadline(&self) -> Option<SimTime> {
        self.rto_deadline
    }

    /// Stream bytes one packet can carry.
    pub fn max_chunk(&self) -> u32 {
        self.capacity - self.framing.aead_tag - self.framing.stream_frame_header
    }

    /// Takes the next packet number, also used for ack-only packets.
    pub fn allocate_pn(&mut self) -> u64 {
        let pn = self.next_pn;
        self.next_pn += 1;
        pn
    }

    pub fn open_stream(&mut self, id: u64) {
        self.streams.entry(id).or_default();
    }

    pub fn is_open(&self, id: u64) -> bool {
        self.streams.contains_key(&id)
    }

    pub fn write(&mut self, stream: u64, len: u64) -> Result<(u64, u64)> {
        let s = self.streams.get_mut(&stream).ok_or(Error::UnknownStream(stream))?;
        let start = s.write_end;
        s.write_end += len;
        Ok((start, s.write_end))
    }

    fn next_stream(&self) -> Option<u64> {
        let pending = |(_, s): &(&u64, &SendStream)| s.next_offset < s.write_end;
        let after = self.cursor.map_or(0, |c| c + 1);
        self.streams
            .range(after..)
            .find(pending)
            .or_else(|| self.streams.iter().find(pending))
            .map(|(&id, _)| id)
    }

    fn has_work(&self) -> bool {
        !self.retx.is_empty() || self.next_stream().is_some()
    }

    pub fn poll_transmit(&mut self, now: SimTime) -> Poll {
        if !self.has_work() {
            return Poll::Idle;
        }
        if let Some(at) = self.pacer.blocked_until(now) {
            return Poll::WaitUntil(at);
        }
        let full = u64::from(self.capacity);
        let window = self.cc.cwnd().min(self.receive_window);
        if self.bytes_in_flight > 0 && self.bytes_in_flight + full > window {
            return Poll::Idle;
        }
        let (chunk, retransmission) = match self.retx.pop_front() {
            Some(c) => (c, true),
            None => {
                let id = self.next_stream().expect("has_work");
                self.cursor = Some(id);
                let max = u64::from(self.max_chunk());
                let s = self.streams.get_mut(&id).expect("listed");
                let len = (s.write_end - s.next_offset).min(max) as u32;
                let chunk = StreamChunk { stream: id, offset: s.next_offset, len };
                s.next_offset += u64::from(len);
                (chunk, false)
            }
        };
        let payload = chunk.len + self.framing.aead_tag + self.framing.stream_frame_header;
        let pn = self.allocate_pn();
        let packet = WirePacket {
            seq: pn,
            header_bytes: self.header_bytes,
            payload_bytes: payload,
            retransmission,
            body: PacketBody::Data(chunk),
        };
        self.sent.insert(pn, SentPacket { chunk, payload, sent_at: now });
        self.bytes_in_flight += u64::from(payload);
        if self.rto_deadline.is_none() {
            self.rto_deadline = Some(now + self.rtt.backed_off_rto(self.backoff));
        }
        self.pacer.on_send(now, packet.total_bytes(), &self.cc, self.receive_window, &self.rtt);
        self.stats.record(&packet);
        Poll::Transmit(packet)
    }

    fn declare_lost(&mut self, pn: u64) {
        if let Some(p) = self.sent.remove(&pn) {
            self.bytes_in_flight -= u64::from(p.payload);
            self.retx.push_back(p.chunk);
        }
    }

    fn enter_recovery(&mut self) {
        self.cc.on_loss();
        self.recovery_end_pn = self.next_pn.checked_sub(1);
    }

    pub fn on_ack(&mut self, ranges: &[(u64, u64)], now: SimTime) {
        let flight_before = self.bytes_in_flight;
        let mut acked = Vec::new();
        for &(start, end) in ranges {
            let pns: Vec<u64> = self.sent.range(start..end).map(|(&pn, _)| pn).collect();
            for pn in pns {
                let p = self.sent.remove(&pn).expect("listed");
                self.bytes_in_flight -= u64::from(p.payload);
                acked.push((pn, p));
            }
        }
        let Some(&(newest_pn, ref newest)) = acked.iter().max_by_key(|(pn, _)| *pn) else {
            return;
        };
        self.rtt.update(now.saturating_sub(newest.sent_at));
        if self.largest_acked.is_none_or(|l| newest_pn > l) {
            self.largest_acked = Some(newest_pn);
        }
        let cwnd_limited = flight_before + u64::from(self.capacity) >= self.cc.cwnd()
            || self.next_stream().is_some();
        for (pn, p) in &acked {
            let in_recovery = self.recovery_end_pn.is_some_and(|r| *pn <= r);
            if cwnd_limited && !in_recovery {
                self.cc.on_ack(u64::from(p.payload));
            }
        }
        let largest = self.largest_acked.expect("set above");
        let lost: Vec<u64> = self
            .sent
            .range(..largest.saturating_sub(PACKET_THRESHOLD - 1))
            .map(|(&pn, _)| pn)
            .collect();
        if let Some(&newest_lost) = lost.last() {
            if self.recovery_end_pn.is_none_or(|r| newest_lost > r) {
                self.enter_recovery();
                self.stats.fast_retransmits += 1;
            }
            for pn in lost {
                self.declare_lost(pn);
            }
        }
        self.backoff = 0;
        self.rto_deadline = (!self.sent.is_empty()).then(|| now + self.rtt.rto());
    }

    /// Handles an RTO expiry: every outstanding packet is declared lost.
    pub fn on_timeout(&mut self, now: SimTime) {
        match self.rto_deadline {
            Some(t) if t <= now => {}
            _ => return,
        }
        if self.sent.is_empty() {
            self.rto_deadline = None;
            return;
        }
        self.enter_recovery();
        let pns: Vec<u64> = self.sent.keys().copied().collect();
        for pn in pns {
            self.declare_lost(pn);
        }
        self.backoff += 1;
        self.stats.timeouts += 1;
        self.rto_deadline = Some(now + self.rtt.backed_off_rto(self.backoff));
    }
}

/// Tracks received packet numbers and per-stream reassembly.
#[derive(Debug, Clone, Default)]
pub struct QuicReceiver {
    packets: RangeSet,
    streams: BTreeMap<u64, RangeSet>,
}

impl QuicReceiver {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn delivered(&self, stream: u64) -> u64 {
        self.streams.get(&stream).map_or(0, |r| r.contiguous_end(0))
    }

    pub fn on_packet_number(&mut self, pn: u64) {
        self.packets.insert(pn, pn + 1);
    }

    /// Returns the new in-order end of the chunk's stream if it advanced.
    pub fn on_chunk(&mut self, chunk: &StreamChunk) -> Option<u64> {
        let r = self.streams.entry(chunk.stream).or_default();
        let before = r.contiguous_end(0);
        r.insert(chunk.offset, chunk.offset + u64::from(chunk.len));
        let after = r.contiguous_end(0);
        (after > before).then_some(after)
    }

    pub fn ack_frame(&self, max_ranges: usize) -> AckFrame {
        AckFrame::Ranges(self.packets.highest(max_ranges))
    }
}
