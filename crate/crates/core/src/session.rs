//! One streaming session: client, server and the emulated path in between.
//!
//! The client opens a single connection, requests segments sequentially
//! (or up to the pipelining depth), measures each download and adapts.
//! The server answers each request after a small seeded think time.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use crate::appproto::{encode_request, encode_response_body, MessagePlan, StreamIdAllocator};
use crate::catalog::MediaCatalog;
use crate::client::{
    estimate_bandwidth, select_representation, throughput_kbps, ByteTotals, ClientConfig,
    ClientSession, EstimatorState, SegmentDownloadRecord, ThroughputBasis,
};
use crate::netem::{
    one_way_delay_for_rtt, BandwidthTrajectory, DropSchedule, EmulatedLink, LinkOutcome,
    DEFAULT_BURST_BYTES, DEFAULT_QUEUE_CAPACITY,
};
use crate::simcore::{EventId, EventQueue, SeededRng, DEFAULT_EVENT_BUDGET};
use crate::transport::{
    open_connection, Connection, PacketBody, Poll, SenderStats, Side, StackConfig, StackKind,
    TransportKind, WirePacket,
};
use crate::{Error, Result, SimTime};

/// Server think time is uniform in `[0, DEFAULT_SERVER_JITTER]`.
pub const DEFAULT_SERVER_JITTER: SimTime = SimTime::from_micros(2_000);

#[derive(Debug, Clone)]
pub struct SessionConfig {
    pub stack: StackConfig,
    pub rtt: SimTime,
    pub trajectory: Arc<BandwidthTrajectory>,
    pub burst_bytes: u64,
    pub queue_capacity: u64,
    /// Start both shapers with an empty bucket.
    pub drained_start: bool,
    pub seed: u64,
    pub client: ClientConfig,
    /// Fetch only the first `n` segments.
    pub segment_limit: Option<u32>,
    pub server_jitter: SimTime,
    pub downlink_drops: DropSchedule,
    pub uplink_drops: DropSchedule,
    pub record_packets: bool,
    pub record_frames: bool,
    pub event_budget: u64,
}

impl SessionConfig {
    pub fn new(kind: StackKind, rtt: SimTime, trajectory: Arc<BandwidthTrajectory>) -> Self {
        SessionConfig {
            stack: StackConfig::new(kind),
            rtt,
            trajectory,
            burst_bytes: DEFAULT_BURST_BYTES,
            queue_capacity: DEFAULT_QUEUE_CAPACITY,
            drained_start: true,
            seed: 1,
            client: ClientConfig::default(),
            segment_limit: None,
            server_jitter: DEFAULT_SERVER_JITTER,
            downlink_drops: DropSchedule::None,
            uplink_drops: DropSchedule::None,
            record_packets: false,
            record_frames: false,
            event_budget: DEFAULT_EVENT_BUDGET,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Direction {
    Downlink,
    Uplink,
}

impl Direction {
    pub fn name(self) -> &'static str {
        match self {
            Direction::Downlink => "down",
            Direction::Uplink => "up",
        }
    }

    fn from_sender(side: Side) -> Self {
        match side {
            Side::Server => Direction::Downlink,
            Side::Client => Direction::Uplink,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PacketRecord {
    pub time: SimTime,
    pub direction: Direction,
    pub header_bytes: u32,
    pub payload_bytes: u32,
    pub stream_id: Option<u64>,
    pub kind: &'static str,
    pub dropped: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameRecord {
    pub time: SimTime,
    pub direction: Direction,
    pub stream: u64,
    pub frame_type: &'static str,
    pub size: u64,
}

/// Bytes written to and delivered from one stream in one direction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamAccount {
    pub direction: Direction,
    pub stream: u64,
    pub written: u64,
    pub delivered: u64,
}

#[derive(Debug, Clone)]
pub struct SessionOutput {
    pub session: ClientSession,
    pub client_stats: SenderStats,
    pub server_stats: SenderStats,
    pub streams: Vec<StreamAccount>,
    pub packets: Vec<PacketRecord>,
    pub frames: Vec<FrameRecord>,
    pub events_processed: u64,
}

#[derive(Debug)]
enum Ev {
    Deliver { to: Side, packet: WirePacket },
    Handshake { from: Side, packets: Vec<u32> },
    Ready,
    Wake(Side),
    Timer(Side),
    Respond(usize),
}

#[derive(Debug)]
struct Request {
    index: u32,
    level: usize,
    bitrate_kbps: u32,
    media_bytes: u64,
    stream_id: u64,
    transport_stream: u64,
    plan: MessagePlan,
    request_at: SimTime,
    first_byte_at: Option<SimTime>,
    complete_at: Option<SimTime>,
    wire_bytes: u64,
    available_kbps: u32,
}

#[derive(Debug)]
struct Message {
    stream: u64,
    start: u64,
    end: u64,
    slot: usize,
    done: bool,
}

/// Pending event for a side, so it can be moved or cancelled.
type Slot = Option<(SimTime, EventId)>;

fn side_index(side: Side) -> usize {
    match side {
        Side::Client => 0,
        Side::Server => 1,
    }
}

struct Sim<'a> {
    cfg: &'a SessionConfig,
    catalog: &'a MediaCatalog,
    segment_count: u32,
    queue: EventQueue<Ev>,
    conn: Connection,
    down: EmulatedLink,
    up: EmulatedLink,
    rng: SeededRng,
    estimator: EstimatorState,
    b_n: Option<f64>,
    ids: StreamIdAllocator,
    requests: Vec<Request>,
    awaiting_ready: Vec<usize>,
    ready: bool,
    /// Requests sent by the client and responses sent by the server.
    up_msgs: Vec<Message>,
    down_msgs: Vec<Message>,
    /// TCP answers in request order.
    server_ready: BTreeSet<usize>,
    server_next: usize,
    oldest_open: usize,
    outstanding: usize,
    completed: usize,
    wakes: [Slot; 2],
    timers: [Slot; 2],
    totals: ByteTotals,
    records: Vec<SegmentDownloadRecord>,
    packets: Vec<PacketRecord>,
    frames: Vec<FrameRecord>,
}

impl<'a> Sim<'a> {
    fn now(&self) -> SimTime {
        self.queue.now()
    }

    fn kind(&self) -> StackKind {
        self.cfg.stack.kind
    }

    fn is_tcp(&self) -> bool {
        self.cfg.stack.transport() == TransportKind::Tcp
    }

    /// Charges bytes to the oldest segment still in progress.
    fn attribute(&mut self, bytes: u64) {
        while self.oldest_open < self.requests.len()
            && self.requests[self.oldest_open].complete_at.is_some()
        {
            self.oldest_open += 1;
        }
        let slot = self.oldest_open.min(self.requests.len().saturating_sub(1));
        if let Some(r) = self.requests.get_mut(slot) {
            r.wire_bytes += bytes;
        }
    }

    fn record_frames(&mut self, direction: Direction, stream: u64, plan: &MessagePlan) {
        if !self.cfg.record_frames {
            return;
        }
        let time = self.now();
        if plan.frames.is_empty() {
            self.frames.push(FrameRecord { time, direction, stream, frame_type: "HEADERS", size: u64::from(plan.header_block) });
            if plan.body > 0 {
                self.frames.push(FrameRecord { time, direction, stream, frame_type: "BODY", size: plan.body });
            }
        } else {
            for f in &plan.frames {
                self.frames.push(FrameRecord {
                    time,
                    direction,
                    stream: u64::from(f.stream_id),
                    frame_type: f.frame_type.name(),
                    size: u64::from(f.wire_size()),
                });
            }
        }
    }

    fn account_plan(&mut self, plan: &MessagePlan) {
        self.totals.app_header_bytes += u64::from(plan.header_block);
        self.totals.framing_bytes += plan.framing_bytes();
        self.totals.h2_frames += plan.frames.len() as u64;
    }

    fn issue_request(&mut self) -> Result<()> {
        let index = self.requests.len() as u32;
        let client = &self.cfg.client;
        let level = match (client.fixed_level, self.b_n) {
            (Some(l), _) => l,
            (None, None) => client.start_level,
            (None, Some(b)) => select_representation(self.catalog, b, client.safety_factor).level,
        };
        let seg = self.catalog.segment(level, index)?;
        let stream_id = self.ids.next_stream_id()?;
        let transport_stream = if self.is_tcp() { 0 } else { stream_id };
        let plan = encode_request(self.kind(), stream_id, &seg.url_path)?;
        let now = self.now();
        self.requests.push(Request {
            index,
            level,
            bitrate_kbps: self.catalog.representation(level)?.bitrate_kbps,
            media_bytes: seg.media_bytes,
            stream_id,
            transport_stream,
            plan,
            request_at: now,
            first_byte_at: None,
            complete_at: None,
            wire_bytes: 0,
            available_kbps: self.cfg.trajectory.rate_at(now),
        });
        self.outstanding += 1;
        let slot = self.requests.len() - 1;
        if self.ready {
            self.write_request(slot)?;
        } else {
            self.awaiting_ready.push(slot);
        }
        Ok(())
    }

    fn write_request(&mut self, slot: usize) -> Result<()> {
        let (ts, plan) = {
            let r = &self.requests[slot];
            (r.transport_stream, r.plan.clone())
        };
        self.account_plan(&plan);
        self.record_frames(Direction::Uplink, ts, &plan);
        self.conn.client.open_stream(ts)?;
        let (start, end) = self.conn.client.write(ts, plan.total_bytes())?;
        self.up_msgs.push(Message { stream: ts, start, end, slot, done: false });
        self.pump(Side::Client)
    }

    fn respond(&mut self, slot: usize) -> Result<()> {
        let (ts, sid, media) = {
            let r = &self.requests[slot];
            (r.transport_stream, r.stream_id, r.media_bytes)
        };
        let plan = encode_response_body(self.kind(), sid, media);
        self.account_plan(&plan);
        self.record_frames(Direction::Downlink, ts, &plan);
        self.conn.server.open_stream(ts)?;
        let (start, end) = self.conn.server.write(ts, plan.total_bytes())?;
        self.down_msgs.push(Message { stream: ts, start, end, slot, done: false });
        self.pump(Side::Server)
    }

    fn on_respond(&mut self, slot: usize) -> Result<()> {
        if !self.is_tcp() {
            return self.respond(slot);
        }
        self.server_ready.insert(slot);
        while self.server_ready.remove(&self.server_next) {
            self.respond(self.server_next)?;
            self.server_next += 1;
        }
        Ok(())
    }

    fn send(&mut self, from: Side, packet: WirePacket, eligible: bool) -> Result<()> {
        let now = self.now();
        let bytes = u64::from(packet.total_bytes());
        let direction = Direction::from_sender(from);
        let link = match from {
            Side::Client => {
                self.totals.uplink_sent += bytes;
                self.attribute(bytes);
                &mut self.up
            }
            Side::Server => {
                self.totals.downlink_sent += bytes;
                &mut self.down
            }
        };
        let outcome = link.transmit(bytes, now, eligible);
        if self.cfg.record_packets {
            self.packets.push(PacketRecord {
                time: now,
                direction,
                header_bytes: packet.header_bytes,
                payload_bytes: packet.payload_bytes,
                stream_id: match self.cfg.stack.transport() {
                    TransportKind::Quic => packet.stream_id(),
                    TransportKind::Tcp => None,
                },
                kind: match packet.body {
                    PacketBody::Data(_) if packet.retransmission => "retransmission",
                    PacketBody::Data(_) => "data",
                    PacketBody::Ack(_) => "ack",
                    PacketBody::Handshake => "handshake",
                },
                dropped: outcome == LinkOutcome::Dropped,
            });
        }
        match outcome {
            LinkOutcome::Arrives(at) => {
                self.queue.schedule(at, Ev::Deliver { to: from.peer(), packet })?;
            }
            LinkOutcome::Dropped => self.totals.dropped_packets += 1,
        }
        Ok(())
    }

    fn pump(&mut self, side: Side) -> Result<()> {
        let now = self.now();
        loop {
            match self.conn.endpoint_mut(side).poll_transmit(now) {
                Poll::Transmit(p) => self.send(side, p, true)?,
                Poll::WaitUntil(at) => {
                    let i = side_index(side);
                    match self.wakes[i] {
                        Some((t, _)) if t <= at => {}
                        other => {
                            if let Some((_, id)) = other {
                                self.queue.cancel(id);
                            }
                            let id = self.queue.schedule(at, Ev::Wake(side))?;
                            self.wakes[i] = Some((at, id));
                        }
                    }
                    break;
                }
                Poll::Idle => break,
            }
        }
        self.sync_timer(side)
    }

    fn sync_timer(&mut self, side: Side) -> Result<()> {
        let i = side_index(side);
        let deadline = self.conn.endpoint(side).timer_deadline();
        if self.timers[i].map(|(t, _)| t) == deadline {
            return Ok(());
        }
        if let Some((_, id)) = self.timers[i].take() {
            self.queue.cancel(id);
        }
        if let Some(at) = deadline {
            let at = at.max(self.now());
            let id = self.queue.schedule(at, Ev::Timer(side))?;
            self.timers[i] = Some((at, id));
        }
        Ok(())
    }

    fn deliver(&mut self, to: Side, packet: WirePacket) -> Result<()> {
        let now = self.now();
        let bytes = u64::from(packet.total_bytes());
        match to {
            Side::Client => {
                self.totals.downlink_received += bytes;
                self.attribute(bytes);
            }
            Side::Server => self.totals.uplink_received += bytes,
        }
        let received = self.conn.endpoint_mut(to).on_packet(&packet, now);
        if let Some(ack) = received.ack {
            self.send(to, ack, true)?;
        }
        if let Some((stream, end)) = received.delivered {
            self.on_delivered(to, stream, end)?;
        }
        self.pump(to)
    }

    fn on_delivered(&mut self, at: Side, stream: u64, end: u64) -> Result<()> {
        let now = self.now();
        let msgs = match at {
            Side::Server => &mut self.up_msgs,
            Side::Client => &mut self.down_msgs,
        };
        let mut finished = Vec::new();
        let mut first_bytes = Vec::new();
        for m in msgs.iter_mut().filter(|m| !m.done && m.stream == stream) {
            if end > m.start {
                first_bytes.push(m.slot);
            }
            if end >= m.end {
                m.done = true;
                finished.push(m.slot);
            }
        }
        for slot in first_bytes {
            if at == Side::Client {
                self.requests[slot].first_byte_at.get_or_insert(now);
            }
        }
        for slot in finished {
            match at {
                Side::Server => {
                    let jitter = self.rng.below(self.cfg.server_jitter.as_micros() + 1);
                    self.queue.schedule(now + SimTime::from_micros(jitter), Ev::Respond(slot))?;
                }
                Side::Client => self.complete(slot)?,
            }
        }
        Ok(())
    }

    fn complete(&mut self, slot: usize) -> Result<()> {
        let now = self.now();
        let r = &mut self.requests[slot];
        r.complete_at = Some(now);
        let basis = match self.cfg.client.basis {
            ThroughputBasis::Media => r.media_bytes,
            ThroughputBasis::Wire => r.wire_bytes,
        };
        let b_m = throughput_kbps(basis, now - r.request_at);
        let b_n = estimate_bandwidth(&mut self.estimator, b_m);
        self.b_n = Some(b_n);
        self.records.push(SegmentDownloadRecord {
            index: r.index,
            level: r.level,
            bitrate_kbps: r.bitrate_kbps,
            request_at: r.request_at,
            first_byte_at: r.first_byte_at.unwrap_or(now),
            complete_at: now,
            media_bytes: r.media_bytes,
            wire_bytes: 0,
            b_m_kbps: b_m,
            b_n_kbps: b_n,
            available_kbps: r.available_kbps,
        });
        self.outstanding -= 1;
        self.completed += 1;
        self.fill_pipeline()
    }

    fn fill_pipeline(&mut self) -> Result<()> {
        while self.outstanding < self.cfg.client.pipelining
            && (self.requests.len() as u32) < self.segment_count
        {
            self.issue_request()?;
        }
        Ok(())
    }

    fn handle(&mut self, ev: Ev) -> Result<()> {
        match ev {
            Ev::Deliver { to, packet } => self.deliver(to, packet),
            Ev::Handshake { from, packets } => {
                let bare = match self.cfg.stack.transport() {
                    TransportKind::Tcp => self.cfg.stack.headers.total(),
                    TransportKind::Quic => packets.iter().copied().min().unwrap_or(0),
                };
                for bytes in packets {
                    self.totals.handshake_bytes += u64::from(bytes);
                    let packet = WirePacket {
                        seq: 0,
                        header_bytes: bare.min(bytes),
                        payload_bytes: bytes - bare.min(bytes),
                        retransmission: false,
                        body: PacketBody::Handshake,
                    };
                    self.send(from, packet, false)?;
                }
                Ok(())
            }
            Ev::Ready => {
                self.ready = true;
                for slot in std::mem::take(&mut self.awaiting_ready) {
                    self.write_request(slot)?;
                }
                Ok(())
            }
            Ev::Wake(side) => {
                self.wakes[side_index(side)] = None;
                self.pump(side)
            }
            Ev::Timer(side) => {
                self.timers[side_index(side)] = None;
                let now = self.now();
                self.conn.endpoint_mut(side).on_timer(now);
                self.pump(side)
            }
            Ev::Respond(slot) => self.on_respond(slot),
        }
    }

    fn stream_accounts(&self) -> Vec<StreamAccount> {
        let mut out = Vec::new();
        for (direction, msgs, receiver) in [
            (Direction::Uplink, &self.up_msgs, &self.conn.server),
            (Direction::Downlink, &self.down_msgs, &self.conn.client),
        ] {
            let mut written: BTreeMap<u64, u64> = BTreeMap::new();
            for m in msgs {
                let w = written.entry(m.stream).or_default();
                *w = (*w).max(m.end);
            }
            for (stream, written) in written {
                out.push(StreamAccount { direction, stream, written, delivered: receiver.delivered(stream) });
            }
        }
        out
    }
}

/// Runs one session to the completion of its last segment.
pub fn run_session(catalog: &MediaCatalog, cfg: &SessionConfig) -> Result<SessionOutput> {
    cfg.client.validate(catalog)?;
    let segment_count = cfg.segment_limit.map_or(catalog.segment_count(), |n| n.min(catalog.segment_count()));
    if segment_count == 0 {
        return Err(Error::invalid("session", "no segments to fetch"));
    }
    let one_way = one_way_delay_for_rtt(cfg.rtt);
    let make_link = |drops: &DropSchedule| {
        let link = EmulatedLink::new(cfg.trajectory.clone(), one_way, cfg.burst_bytes, cfg.queue_capacity)
            .with_drops(drops.clone());
        if cfg.drained_start {
            link.drained()
        } else {
            link
        }
    };
    let down = make_link(&cfg.downlink_drops);
    let up = make_link(&cfg.uplink_drops);
    let conn = open_connection(&cfg.stack, &down, SimTime::ZERO);
    let mut sim = Sim {
        cfg,
        catalog,
        segment_count,
        queue: EventQueue::with_budget(cfg.event_budget),
        conn,
        down,
        up,
        rng: SeededRng::new(cfg.seed),
        estimator: EstimatorState::new(cfg.client.w1, cfg.client.w2)?,
        b_n: None,
        ids: StreamIdAllocator::for_stack(cfg.stack.kind),
        requests: Vec::new(),
        awaiting_ready: Vec::new(),
        ready: false,
        up_msgs: Vec::new(),
        down_msgs: Vec::new(),
        server_ready: BTreeSet::new(),
        server_next: 0,
        oldest_open: 0,
        outstanding: 0,
        completed: 0,
        wakes: [None, None],
        timers: [None, None],
        totals: ByteTotals::default(),
        records: Vec::new(),
        packets: Vec::new(),
        frames: Vec::new(),
    };
    let ready_at = sim.conn.ready_at;
    for flight in sim.conn.handshake.clone() {
        sim.queue.schedule(flight.offset, Ev::Handshake { from: flight.from, packets: flight.packet_bytes })?;
    }
    sim.queue.schedule(ready_at, Ev::Ready)?;
    sim.fill_pipeline()?;
    while sim.completed < segment_count as usize {
        match sim.queue.pop()? {
            Some((_, ev)) => sim.handle(ev)?,
            None => {
                return Err(Error::invalid(
                    "session",
                    format!("stalled at {} with {} of {segment_count} segments", sim.now(), sim.completed),
                ))
            }
        }
    }
    let mut records = std::mem::take(&mut sim.records);
    for rec in &mut records {
        rec.wire_bytes = sim.requests[rec.index as usize].wire_bytes;
    }
    records.sort_by_key(|r| r.index);
    let client_stats = sim.conn.client.stats().clone();
    let server_stats = sim.conn.server.stats().clone();
    let mut totals = std::mem::take(&mut sim.totals);
    totals.header_bytes = client_stats.header_bytes + server_stats.header_bytes;
    totals.retransmitted_bytes = client_stats.stream_bytes_retransmitted + server_stats.stream_bytes_retransmitted;
    totals.ack_bytes = client_stats.ack_bytes + server_stats.ack_bytes;
    Ok(SessionOutput {
        streams: sim.stream_accounts(),
        session: ClientSession {
            stack: cfg.stack.kind,
            rtt: cfg.rtt,
            seed: cfg.seed,
            connections: 1,
            started_at: SimTime::ZERO,
            ready_at,
            records,
            totals,
        },
        client_stats,
        server_stats,
        packets: std::mem::take(&mut sim.packets),
        frames: std::mem::take(&mut sim.frames),
        events_processed: sim.queue.processed(),
    })
}
