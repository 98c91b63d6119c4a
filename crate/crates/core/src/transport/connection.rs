use super::quic::{QuicReceiver, QuicSender};
use super::tcp::{TcpReceiver, TcpSender};
use super::{
    quic_header_len, AckFrame, PacketBody, Poll, SenderStats, StackConfig, TransportKind,
    WirePacket,
};
use crate::netem::EmulatedLink;
use crate::{Error, Result, SimTime};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Client,
    Server,
}

impl Side {
    pub fn peer(self) -> Side {
        match self {
            Side::Client => Side::Server,
            Side::Server => Side::Client,
        }
    }
}

/// Result of handing one arriving packet to an endpoint.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Received {
    /// Ack to send back, already counted in the endpoint's stats.
    pub ack: Option<WirePacket>,
    /// `(stream, new in-order end)` when delivery advanced.
    pub delivered: Option<(u64, u64)>,
}

#[derive(Debug, Clone)]
enum Inner {
    Tcp { tx: TcpSender, rx: TcpReceiver },
    Quic { tx: QuicSender, rx: QuicReceiver },
}

/// One side of a connection: a sender for its own data and a receiver
/// for the peer's.
#[derive(Debug, Clone)]
pub struct Endpoint {
    stack: StackConfig,
    inner: Inner,
}

impl Endpoint {
    pub fn new(stack: &StackConfig) -> Self {
        let inner = match stack.transport() {
            TransportKind::Tcp => Inner::Tcp {
                tx: TcpSender::new(
                    stack.headers.total(),
                    stack.mss(),
                    stack.receive_window,
                    stack.pacing,
                ),
                rx: TcpReceiver::new(),
            },
            TransportKind::Quic => {
                let framing = stack.quic.unwrap_or_default();
                let header = stack.headers.total() + quic_header_len(framing.header_mode, false);
                Inner::Quic {
                    tx: QuicSender::new(
                        framing,
                        header,
                        stack.mtu - header,
                        stack.receive_window,
                        stack.pacing,
                    ),
                    rx: QuicReceiver::new(),
                }
            }
        };
        Endpoint { stack: stack.clone(), inner }
    }

    pub fn stack(&self) -> &StackConfig {
        &self.stack
    }

    /// TCP carries a single stream, id 0, which is always open.
    pub fn open_stream(&mut self, id: u64) -> Result<()> {
        match &mut self.inner {
            Inner::Tcp { .. } if id == 0 => Ok(()),
            Inner::Tcp { .. } => Err(Error::UnknownStream(id)),
            Inner::Quic { tx, .. } => {
                tx.open_stream(id);
                Ok(())
            }
        }
    }

    /// Queues `app_bytes` on `stream` and returns the transport byte range
    /// they occupy, after SSL record framing where configured.
    pub fn write(&mut self, stream: u64, app_bytes: u64) -> Result<(u64, u64)> {
        let len = self.stack.tls.map_or(app_bytes, |t| t.wrapped_len(app_bytes));
        match &mut self.inner {
            Inner::Tcp { tx, .. } if stream == 0 => Ok(tx.write(len)),
            Inner::Tcp { .. } => Err(Error::UnknownStream(stream)),
            Inner::Quic { tx, .. } => tx.write(stream, len),
        }
    }

    pub fn poll_transmit(&mut self, now: SimTime) -> Poll {
        match &mut self.inner {
            Inner::Tcp { tx, .. } => tx.poll_transmit(now),
            Inner::Quic { tx, .. } => tx.poll_transmit(now),
        }
    }

    pub fn on_packet(&mut self, packet: &WirePacket, now: SimTime) -> Received {
        let stack = &self.stack;
        match (&mut self.inner, &packet.body) {
            (Inner::Tcp { tx, .. }, PacketBody::Ack(AckFrame::Cumulative(n))) => {
                tx.on_ack(*n, now);
                Received::default()
            }
            (Inner::Tcp { tx, rx }, PacketBody::Data(chunk)) => {
                let (frame, advanced) = rx.on_data(chunk);
                let ack = WirePacket {
                    seq: tx.next_seq(),
                    header_bytes: stack.headers.total(),
                    payload_bytes: 0,
                    retransmission: false,
                    body: PacketBody::Ack(frame),
                };
                tx.stats_mut().record(&ack);
                Received { ack: Some(ack), delivered: advanced.map(|end| (0, end)) }
            }
            (Inner::Quic { tx, rx }, PacketBody::Ack(AckFrame::Ranges(r))) => {
                rx.on_packet_number(packet.seq);
                tx.on_ack(r, now);
                Received::default()
            }
            (Inner::Quic { tx, rx }, PacketBody::Data(chunk)) => {
                rx.on_packet_number(packet.seq);
                let advanced = rx.on_chunk(chunk);
                let framing = stack.quic.unwrap_or_default();
                let frame = rx.ack_frame(framing.ack_max_ranges);
                let AckFrame::Ranges(ranges) = &frame else { unreachable!() };
                let ack_frame_len = framing.ack_frame_base
                    + framing.ack_frame_per_range * (ranges.len() as u32).saturating_sub(1);
                let ack = WirePacket {
                    seq: tx.allocate_pn(),
                    header_bytes: stack.headers.total() + quic_header_len(framing.header_mode, false),
                    payload_bytes: framing.aead_tag + ack_frame_len,
                    retransmission: false,
                    body: PacketBody::Ack(frame),
                };
                tx.stats_mut().record(&ack);
                Received { ack: Some(ack), delivered: advanced.map(|end| (chunk.stream, end)) }
            }
            _ => Received::default(),
        }
    }

    pub fn timer_deadline(&self) -> Option<SimTime> {
        match &self.inner {
            Inner::Tcp { tx, .. } => tx.rto_deadline(),
            Inner::Quic { tx, .. } => tx.rto_deadline(),
        }
    }

    pub fn on_timer(&mut self, now: SimTime) {
        match &mut self.inner {
            Inner::Tcp { tx, .. } => tx.on_timeout(now),
            Inner::Quic { tx, .. } => tx.on_timeout(now),
        }
    }

    pub fn stats(&self) -> &SenderStats {
        match &self.inner {
            Inner::Tcp { tx, .. } => tx.stats(),
            Inner::Quic { tx, .. } => tx.stats(),
        }
    }

    pub fn cwnd(&self) -> u64 {
        match &self.inner {
            Inner::Tcp { tx, .. } => tx.congestion().cwnd(),
            Inner::Quic { tx, .. } => tx.congestion().cwnd(),
        }
    }

    pub fn srtt(&self) -> Option<SimTime> {
        match &self.inner {
            Inner::Tcp { tx, .. } => tx.rtt().srtt(),
            Inner::Quic { tx, .. } => tx.rtt().srtt(),
        }
    }

    pub fn bytes_in_flight(&self) -> u64 {
        match &self.inner {
            Inner::Tcp { tx, .. } => tx.bytes_in_flight(),
            Inner::Quic { tx, .. } => tx.bytes_in_flight(),
        }
    }

    /// In-order bytes received from the peer on `stream`.
    pub fn delivered(&self, stream: u64) -> u64 {
        match &self.inner {
            Inner::Tcp { rx, .. } if stream == 0 => rx.delivered(),
            Inner::Tcp { .. } => 0,
            Inner::Quic { rx, .. } => rx.delivered(stream),
        }
    }
}

/// Packets one side sends during connection setup, `offset` after opening.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HandshakeFlight {
    pub offset: SimTime,
    pub from: Side,
    pub packet_bytes: Vec<u32>,
}

#[derive(Debug, Clone)]
pub struct Connection {
    pub client: Endpoint,
    pub server: Endpoint,
    pub opened_at: SimTime,
    pub ready_at: SimTime,
    pub handshake: Vec<HandshakeFlight>,
}

impl Connection {
    pub fn endpoint_mut(&mut self, side: Side) -> &mut Endpoint {
        match side {
            Side::Client => &mut self.client,
            Side::Server => &mut self.server,
        }
    }

    pub fn endpoint(&self, side: Side) -> &Endpoint {
        match side {
            Side::Client => &self.client,
            Side::Server => &self.server,
        }
    }
}

fn tcp_message(stack: &StackConfig, bytes: u32) -> Vec<u32> {
    let mss = stack.mss();
    let header = stack.headers.total();
    (0..bytes.div_ceil(mss))
        .map(|i| header + (bytes - i * mss).min(mss))
        .collect()
}

/// Sets up both endpoints; application data may flow from `ready_at`.
pub fn open_connection(stack: &StackConfig, link: &EmulatedLink, now: SimTime) -> Connection {
    let one_way = link.one_way_delay();
    let rtt = one_way * 2;
    let at_half_rtts = |n: u64| one_way * n;
    let bare = stack.headers.total();
    let mut handshake = Vec::new();
    match stack.transport() {
        TransportKind::Tcp => {
            handshake.push(HandshakeFlight { offset: at_half_rtts(0), from: Side::Client, packet_bytes: vec![bare] });
            handshake.push(HandshakeFlight { offset: at_half_rtts(1), from: Side::Server, packet_bytes: vec![bare] });
            if let Some(tls) = stack.tls {
                let flights = [
                    (Side::Client, tls.client_hello),
                    (Side::Server, tls.server_hello_flight),
                    (Side::Client, tls.client_finished_flight),
                    (Side::Server, tls.server_finished_flight),
                ];
                for (i, (from, bytes)) in flights.into_iter().enumerate() {
                    handshake.push(HandshakeFlight {
                        offset: at_half_rtts(2 + i as u64),
                        from,
                        packet_bytes: tcp_message(stack, bytes),
                    });
                }
            }
        }
        TransportKind::Quic => {
            let mode = stack.quic.unwrap_or_default().header_mode;
            handshake.push(HandshakeFlight {
                offset: SimTime::ZERO,
                from: Side::Client,
                packet_bytes: vec![bare + quic_header_len(mode, true)],
            });
            handshake.push(HandshakeFlight {
                offset: one_way,
                from: Side::Server,
                packet_bytes: vec![bare + quic_header_len(mode, false)],
            });
        }
    }
    Connection {
        client: Endpoint::new(stack),
        server: Endpoint::new(stack),
        opened_at: now,
        ready_at: now + rtt * u64::from(stack.handshake_rtts),
        handshake,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netem::{BandwidthTrajectory, EmulatedLink, DEFAULT_BURST_BYTES, DEFAULT_QUEUE_CAPACITY};
    use crate::transport::StackKind;
    use std::sync::Arc;

    fn link(rtt_ms: u64) -> EmulatedLink {
        let t = Arc::new(BandwidthTrajectory::constant(1_000).unwrap());
        EmulatedLink::new(
            t,
            crate::netem::one_way_delay_for_rtt(SimTime::from_millis(rtt_ms)),
            DEFAULT_BURST_BYTES,
            DEFAULT_QUEUE_CAPACITY,
        )
    }

    #[test]
    fn ready_times() {
        let now = SimTime::from_secs(1);
        let quic = open_connection(&StackConfig::new(StackKind::SpdyQuic), &link(150), now);
        assert_eq!(quic.ready_at, now);
        let tcp = open_connection(&StackConfig::new(StackKind::Http2Tcp), &link(150), now);
        assert_eq!(tcp.ready_at, now + SimTime::from_millis(150));
        let ssl = open_connection(&StackConfig::new(StackKind::Http2Ssl), &link(50), now);
        assert_eq!(ssl.ready_at, now + SimTime::from_millis(150));
    }

    #[test]
    fn handshake_packet_sizes() {
        let quic = open_connection(&StackConfig::new(StackKind::Http1Quic), &link(0), SimTime::ZERO);
        let sizes: Vec<_> = quic.handshake.iter().map(|f| f.packet_bytes.clone()).collect();
        assert_eq!(sizes, vec![vec![60], vec![56]]);
        let ssl = open_connection(&StackConfig::new(StackKind::Http2Ssl), &link(0), SimTime::ZERO);
        assert_eq!(ssl.handshake.len(), 6);
        assert_eq!(ssl.handshake[3].packet_bytes, vec![1_514, 1_514, 66 + 104]);
    }

    #[test]
    fn tcp_rejects_other_streams() {
        let mut e = Endpoint::new(&StackConfig::new(StackKind::Http2Tcp));
        assert!(e.open_stream(0).is_ok());
        assert!(matches!(e.write(3, 10), Err(Error::UnknownStream(3))));
    }

    #[test]
    fn ssl_records_wrap_writes() {
        let mut e = Endpoint::new(&StackConfig::new(StackKind::Http2Ssl));
        assert_eq!(e.write(0, 16_385).unwrap(), (0, 16_385 + 58));
    }
}
