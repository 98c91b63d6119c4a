use std::sync::Arc;

use dashsim::catalog::build_default_catalog;
use dashsim::netem::{BandwidthTrajectory, DropSchedule};
use dashsim::session::{run_session, Direction, SessionConfig};
use dashsim::transport::quic::{QuicReceiver, QuicSender};
use dashsim::transport::tcp::TcpReceiver;
use dashsim::transport::{quic_header_len, PacketBody, Poll, QuicHeaderMode, StreamChunk};
use dashsim::{SimTime, StackConfig, StackKind};
use proptest::prelude::*;

fn lossy_config(kind: StackKind, rtt_ms: u64, level: usize, every: u64) -> SessionConfig {
    let catalog = build_default_catalog();
    let rate = catalog.representations()[level].bitrate_kbps;
    let mut cfg = SessionConfig::new(
        kind,
        SimTime::from_millis(rtt_ms),
        Arc::new(BandwidthTrajectory::constant(rate).unwrap()),
    );
    cfg.client.fixed_level = Some(level);
    cfg.segment_limit = Some(6);
    cfg.downlink_drops = DropSchedule::EveryNth(every);
    cfg.uplink_drops = DropSchedule::EveryNth(every);
    cfg.record_packets = true;
    cfg
}

#[test]
fn five_percent_drops_lose_no_stream_bytes_and_conserve_wire_bytes() {
    let catalog = build_default_catalog();
    for kind in StackKind::ALL {
        let cfg = lossy_config(kind, 50, 6, 20);
        let out = run_session(&catalog, &cfg).unwrap();
        assert_eq!(out.session.records.len(), 6, "{kind}");
        assert!(out.session.totals.dropped_packets > 0, "{kind}: schedule dropped nothing");
        assert!(!out.streams.is_empty());
        for s in &out.streams {
            assert_eq!(s.written, s.delivered, "{kind} {:?} stream {}", s.direction, s.stream);
        }
        for (stats, direction) in [(&out.server_stats, Direction::Downlink), (&out.client_stats, Direction::Uplink)] {
            let parts = stats.header_bytes
                + stats.framing_bytes
                + stats.stream_bytes_new
                + stats.stream_bytes_retransmitted;
            assert_eq!(stats.wire_bytes, parts, "{kind} {direction:?}");
            let written: u64 = out.streams.iter().filter(|s| s.direction == direction).map(|s| s.written).sum();
            assert_eq!(stats.stream_bytes_new, written, "{kind} {direction:?}");
            assert!(stats.stream_bytes_retransmitted > 0 || direction == Direction::Uplink, "{kind}");
        }
        let expected = 6 * catalog.segment_bytes(6, 0).unwrap();
        assert_eq!(out.session.media_bytes(), expected, "{kind}");
    }
}

#[test]
fn packets_fit_the_path_mtu() {
    let catalog = build_default_catalog();
    for kind in StackKind::ALL {
        let stack = StackConfig::new(kind);
        let out = run_session(&catalog, &lossy_config(kind, 0, 13, 20)).unwrap();
        assert!(!out.packets.is_empty());
        for p in &out.packets {
            assert!(p.header_bytes + p.payload_bytes <= stack.mtu, "{kind}: {p:?}");
            if stack.quic.is_some() {
                let public = p.header_bytes - stack.headers.total();
                assert!((2..=19).contains(&public), "{kind}: public header {public}");
            }
        }
    }
}

#[test]
fn quic_public_header_lengths() {
    for mode in [QuicHeaderMode::Minimal, QuicHeaderMode::Default, QuicHeaderMode::Maximal] {
        for version in [false, true] {
            let len = quic_header_len(mode, version);
            assert!((2..=19).contains(&len), "{mode:?} {version}: {len}");
        }
    }
    assert_eq!(quic_header_len(QuicHeaderMode::Minimal, false), 2);
    assert_eq!(quic_header_len(QuicHeaderMode::Maximal, true), 19);
}

fn drain(sender: &mut QuicSender) -> Vec<StreamChunk> {
    let mut chunks = Vec::new();
    while let Poll::Transmit(p) = sender.poll_transmit(SimTime::ZERO) {
        if let PacketBody::Data(c) = p.body {
            chunks.push(c);
        }
    }
    chunks
}

#[test]
fn quic_loss_on_one_stream_does_not_block_another() {
    let stack = StackConfig::new(StackKind::Http1Quic);
    let mut sender = QuicSender::new(
        stack.quic.unwrap(),
        stack.headers.total() + 14,
        stack.quic_payload_capacity(),
        1 << 20,
        false,
    );
    sender.open_stream(1);
    sender.open_stream(3);
    sender.write(1, 5_000).unwrap();
    sender.write(3, 5_000).unwrap();
    let chunks = drain(&mut sender);
    let lost = chunks.iter().position(|c| c.stream == 1).unwrap();

    let mut receiver = QuicReceiver::new();
    for (i, c) in chunks.iter().enumerate() {
        if i != lost {
            receiver.on_chunk(c);
        }
    }
    assert_eq!(receiver.delivered(3), 5_000);
    assert_eq!(receiver.delivered(1), 0);
    receiver.on_chunk(&chunks[lost]);
    assert_eq!(receiver.delivered(1), 5_000);
}

#[test]
fn tcp_hole_blocks_everything_behind_it() {
    let mut r = TcpReceiver::new();
    let seg = |offset| StreamChunk { stream: 0, offset, len: 1_448 };
    r.on_data(&seg(1_448));
    r.on_data(&seg(2_896));
    assert_eq!(r.delivered(), 0);
    r.on_data(&seg(0));
    assert_eq!(r.delivered(), 3 * 1_448);
}

#[test]
fn http2_framing_is_eight_bytes_per_frame() {
    let catalog = build_default_catalog();
    for kind in [StackKind::Http2Tcp, StackKind::Http2Ssl] {
        let mut cfg = lossy_config(kind, 50, 8, 0);
        cfg.downlink_drops = DropSchedule::None;
        cfg.uplink_drops = DropSchedule::None;
        cfg.record_frames = true;
        let out = run_session(&catalog, &cfg).unwrap();
        let t = &out.session.totals;
        assert!(t.h2_frames > 0);
        assert_eq!(t.framing_bytes, 8 * t.h2_frames);
        assert_eq!(out.frames.len() as u64, t.h2_frames);
        assert!(out.frames.iter().any(|f| f.direction == Direction::Uplink));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn any_drop_rate_is_recovered(
        kind in prop::sample::select(StackKind::ALL.to_vec()),
        every in 8u64..60,
        rtt in prop::sample::select(vec![0u64, 50, 150]),
        level in 0usize..14,
        seed in 1u64..100,
    ) {
        let catalog = build_default_catalog();
        let mut cfg = lossy_config(kind, rtt, level, every);
        cfg.segment_limit = Some(3);
        cfg.record_packets = false;
        cfg.seed = seed;
        let out = run_session(&catalog, &cfg).unwrap();
        prop_assert_eq!(out.session.records.len(), 3);
        for s in &out.streams {
            prop_assert_eq!(s.written, s.delivered);
        }
    }
}
