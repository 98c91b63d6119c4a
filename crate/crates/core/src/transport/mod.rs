//! Byte-accounted transport models.
//!
//! Two models share one congestion controller and RTT estimator:
//!
//! * TCP: a single reliable byte stream, cumulative acks, fast retransmit on
//!   the third duplicate ack with NewReno partial-ack recovery, and an RTO.
//! * QUIC: numbered packets that are never reused, independent streams,
//!   ack frames carrying packet ranges, packet-threshold loss detection and
//!   an RTO.
//!
//! Packets carry stream chunk references `(stream, offset, len)` rather
//! than bytes; the receiving side reassembles offsets.

pub mod congestion;
mod connection;
pub mod pacing;
pub mod quic;
pub mod ranges;
pub mod rtt;
pub mod tcp;

use std::fmt;
use std::str::FromStr;

use crate::{Error, Result, SimTime};

pub use connection::{open_connection, Connection, Endpoint, HandshakeFlight, Received, Side};

/// What a sender wants to do next.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Poll {
    Transmit(WirePacket),
    /// Data is waiting on the pacer.
    WaitUntil(SimTime),
    /// Nothing to send until an ack, a write or a timer.
    Idle,
}

pub const ETHERNET_HEADER: u32 = 14;
pub const IP_HEADER: u32 = 20;
/// 20-byte base header plus 12 bytes of options (timestamps).
pub const TCP_HEADER: u32 = 32;
pub const UDP_HEADER: u32 = 8;
pub const TCP_PATH_MTU: u32 = 1_514;
pub const QUIC_PATH_MTU: u32 = 1_242;
/// Small enough that one flow cannot overflow the default 64 KiB
/// bottleneck queue on its own.
pub const DEFAULT_RECEIVE_WINDOW: u64 = 60_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum StackKind {
    Http2Tcp,
    Http2Ssl,
    Http1Quic,
    SpdyQuic,
}

impl StackKind {
    pub const ALL: [StackKind; 4] = [
        StackKind::Http2Tcp,
        StackKind::Http2Ssl,
        StackKind::Http1Quic,
        StackKind::SpdyQuic,
    ];

    /// Short name used on the command line and in CSV output.
    pub fn name(self) -> &'static str {
        match self {
            StackKind::Http2Tcp => "h2-tcp",
            StackKind::Http2Ssl => "h2-ssl",
            StackKind::Http1Quic => "h1-quic",
            StackKind::SpdyQuic => "spdy-quic",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            StackKind::Http2Tcp => "HTTP/2 over TCP",
            StackKind::Http2Ssl => "HTTP/2 over SSL",
            StackKind::Http1Quic => "HTTP/1.1 over QUIC",
            StackKind::SpdyQuic => "SPDY over QUIC",
        }
    }

    pub fn transport(self) -> TransportKind {
        match self {
            StackKind::Http2Tcp | StackKind::Http2Ssl => TransportKind::Tcp,
            StackKind::Http1Quic | StackKind::SpdyQuic => TransportKind::Quic,
        }
    }
}

impl fmt::Display for StackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StackKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid("stack", format!("unknown stack {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransportKind {
    Tcp,
    Quic,
}

/// Per-layer header bytes below the framing layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerHeaders {
    pub ethernet: u32,
    pub ip: u32,
    pub transport: u32,
}

impl LayerHeaders {
    pub fn total(&self) -> u32 {
        self.ethernet + self.ip + self.transport
    }
}

/// QUIC public header layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuicHeaderMode {
    /// Flags and a one-byte packet number.
    Minimal,
    /// Flags, 8-byte connection id, 4-byte packet number, private flags.
    Default,
    /// Flags, connection id, version and a 6-byte packet number.
    Maximal,
}

/// Header length in bytes; `carries_version` adds the 4-byte version tag
/// where the layout does not already include it.
pub fn quic_header_len(mode: QuicHeaderMode, carries_version: bool) -> u32 {
    let version = if carries_version { 4 } else { 0 };
    match mode {
        QuicHeaderMode::Minimal => 1 + 1 + version,
        QuicHeaderMode::Default => 1 + 8 + 4 + 1 + version,
        QuicHeaderMode::Maximal => 1 + 8 + 4 + 6,
    }
}

/// Bytes a QUIC packet spends inside its payload on framing and encryption.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuicFraming {
    pub header_mode: QuicHeaderMode,
    /// Authentication tag appended by packet encryption.
    pub aead_tag: u32,
    /// STREAM frame: type, stream id, offset and data length.
    pub stream_frame_header: u32,
    pub ack_frame_base: u32,
    pub ack_frame_per_range: u32,
    /// Most packet ranges a single ack frame reports.
    pub ack_max_ranges: usize,
}

impl Default for QuicFraming {
    fn default() -> Self {
        QuicFraming {
            header_mode: QuicHeaderMode::Default,
            aead_tag: 12,
            stream_frame_header: 9,
            ack_frame_base: 10,
            ack_frame_per_range: 4,
            ack_max_ranges: 64,
        }
    }
}

/// SSL record layer and handshake sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TlsModel {
    pub record_overhead: u32,
    pub max_record_payload: u32,
    pub extra_handshake_rtts: u32,
    pub client_hello: u32,
    pub server_hello_flight: u32,
    pub client_finished_flight: u32,
    pub server_finished_flight: u32,
}

impl Default for TlsModel {
    fn default() -> Self {
        TlsModel {
            record_overhead: 29,
            max_record_payload: 16_384,
            extra_handshake_rtts: 2,
            client_hello: 250,
            server_hello_flight: 3_000,
            client_finished_flight: 200,
            server_finished_flight: 60,
        }
    }
}

impl TlsModel {
    /// Bytes on the TCP stream for `app_bytes` of application data.
    pub fn wrapped_len(&self, app_bytes: u64) -> u64 {
        let records = app_bytes.div_ceil(u64::from(self.max_record_payload));
        app_bytes + records * u64::from(self.record_overhead)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StackConfig {
    pub kind: StackKind,
    pub headers: LayerHeaders,
    pub mtu: u32,
    pub handshake_rtts: u32,
    pub tls: Option<TlsModel>,
    pub quic: Option<QuicFraming>,
    /// Pace transmissions at a multiple of cwnd / srtt.
    pub pacing: bool,
    /// Peer receive window: most unacknowledged bytes in flight.
    pub receive_window: u64,
}

impl StackConfig {
    pub fn new(kind: StackKind) -> Self {
        let (transport, mtu) = match kind.transport() {
            TransportKind::Tcp => (TCP_HEADER, TCP_PATH_MTU),
            TransportKind::Quic => (UDP_HEADER, QUIC_PATH_MTU),
        };
        let tls = (kind == StackKind::Http2Ssl).then(TlsModel::default);
        let quic = (kind.transport() == TransportKind::Quic).then(QuicFraming::default);
        let handshake_rtts = match kind.transport() {
            TransportKind::Tcp => 1 + tls.map_or(0, |t| t.extra_handshake_rtts),
            TransportKind::Quic => 0,
        };
        StackConfig {
            kind,
            headers: LayerHeaders {
                ethernet: ETHERNET_HEADER,
                ip: IP_HEADER,
                transport,
            },
            mtu,
            handshake_rtts,
            tls,
            quic,
            pacing: true,
            receive_window: DEFAULT_RECEIVE_WINDOW,
        }
    }

    pub fn transport(&self) -> TransportKind {
        self.kind.transport()
    }

    /// TCP maximum segment size.
    pub fn mss(&self) -> u32 {
        self.mtu - self.headers.total()
    }

    /// QUIC bytes available after the public header, for frames and tag.
    pub fn quic_payload_capacity(&self) -> u32 {
        let mode = self.quic.map_or(QuicHeaderMode::Default, |q| q.header_mode);
        self.mtu - self.headers.total() - quic_header_len(mode, false)
    }

    /// Transport bytes the congestion controller counts as one segment.
    pub fn segment_size(&self) -> u32 {
        match self.transport() {
            TransportKind::Tcp => self.mss(),
            TransportKind::Quic => self.quic_payload_capacity(),
        }
    }
}

/// Link, network and transport header bytes as a share of a full-MTU frame.
pub fn analytic_stack_overhead(stack: &StackConfig) -> f64 {
    f64::from(stack.headers.total()) / f64::from(stack.mtu)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamChunk {
    pub stream: u64,
    pub offset: u64,
    pub len: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AckFrame {
    /// TCP: next expected sequence number.
    Cumulative(u64),
    /// QUIC: received packet-number ranges, half-open, highest first.
    Ranges(Vec<(u64, u64)>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PacketBody {
    Data(StreamChunk),
    Ack(AckFrame),
    Handshake,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WirePacket {
    /// TCP sequence number or QUIC packet number.
    pub seq: u64,
    /// Ethernet + IP + transport header, plus the QUIC public header.
    pub header_bytes: u32,
    /// Everything after the headers, including QUIC frame headers and tag.
    pub payload_bytes: u32,
    pub retransmission: bool,
    pub body: PacketBody,
}

impl WirePacket {
    pub fn total_bytes(&self) -> u32 {
        self.header_bytes + self.payload_bytes
    }

    pub fn stream_id(&self) -> Option<u64> {
        match &self.body {
            PacketBody::Data(c) => Some(c.stream),
            _ => None,
        }
    }

    /// Application stream bytes carried.
    pub fn stream_bytes(&self) -> u32 {
        match &self.body {
            PacketBody::Data(c) => c.len,
            _ => 0,
        }
    }

    /// Payload bytes that are not application data.
    pub fn framing_bytes(&self) -> u32 {
        self.payload_bytes - self.stream_bytes()
    }
}

/// Counters kept by each endpoint for what it puts on the wire.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SenderStats {
    pub packets: u64,
    pub wire_bytes: u64,
    pub header_bytes: u64,
    pub framing_bytes: u64,
    pub stream_bytes_new: u64,
    pub stream_bytes_retransmitted: u64,
    pub ack_packets: u64,
    pub ack_bytes: u64,
    pub fast_retransmits: u64,
    pub timeouts: u64,
}

impl SenderStats {
    pub(crate) fn record(&mut self, p: &WirePacket) {
        self.packets += 1;
        self.wire_bytes += u64::from(p.total_bytes());
        self.header_bytes += u64::from(p.header_bytes);
        self.framing_bytes += u64::from(p.framing_bytes());
        match &p.body {
            PacketBody::Data(c) if p.retransmission => {
                self.stream_bytes_retransmitted += u64::from(c.len)
            }
            PacketBody::Data(c) => self.stream_bytes_new += u64::from(c.len),
            PacketBody::Ack(_) => {
                self.ack_packets += 1;
                self.ack_bytes += u64::from(p.total_bytes());
            }
            PacketBody::Handshake => {}
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_two_overheads() {
        let tcp = StackConfig::new(StackKind::Http2Tcp);
        let quic = StackConfig::new(StackKind::SpdyQuic);
        assert_eq!(tcp.headers.total(), 66);
        assert_eq!(quic.headers.total(), 42);
        assert_eq!(format!("{:.4}", analytic_stack_overhead(&tcp)), "0.0436");
        assert_eq!(format!("{:.4}", analytic_stack_overhead(&quic)), "0.0338");
        let none = StackConfig {
            headers: LayerHeaders { ethernet: 0, ip: 0, transport: 0 },
            ..tcp
        };
        assert_eq!(analytic_stack_overhead(&none), 0.0);
    }

    #[test]
    fn stack_parameters() {
        let tcp = StackConfig::new(StackKind::Http2Tcp);
        assert_eq!((tcp.mtu, tcp.mss(), tcp.handshake_rtts), (1_514, 1_448, 1));
        let ssl = StackConfig::new(StackKind::Http2Ssl);
        assert_eq!(ssl.handshake_rtts, 3);
        let quic = StackConfig::new(StackKind::Http1Quic);
        assert_eq!((quic.mtu, quic.handshake_rtts), (1_242, 0));
        assert_eq!(quic.quic_payload_capacity(), 1_186);
    }

    #[test]
    fn quic_header_lengths() {
        assert_eq!(quic_header_len(QuicHeaderMode::Minimal, false), 2);
        assert_eq!(quic_header_len(QuicHeaderMode::Maximal, false), 19);
        assert_eq!(quic_header_len(QuicHeaderMode::Maximal, true), 19);
        assert_eq!(quic_header_len(QuicHeaderMode::Default, false), 14);
        assert_eq!(quic_header_len(QuicHeaderMode::Default, true), 18);
        for mode in [QuicHeaderMode::Minimal, QuicHeaderMode::Default, QuicHeaderMode::Maximal] {
            for v in [false, true] {
                assert!((2..=19).contains(&quic_header_len(mode, v)));
            }
        }
    }

    #[test]
    fn tls_record_wrapping() {
        let tls = TlsModel::default();
        assert_eq!(tls.wrapped_len(0), 0);
        assert_eq!(tls.wrapped_len(1), 30);
        assert_eq!(tls.wrapped_len(16_384), 16_413);
        assert_eq!(tls.wrapped_len(16_385), 16_385 + 58);
    }

    #[test]
    fn stack_names_round_trip() {
        for k in StackKind::ALL {
            assert_eq!(k.name().parse::<StackKind>().unwrap(), k);
        }
        assert!("h3".parse::<StackKind>().is_err());
    }
}
