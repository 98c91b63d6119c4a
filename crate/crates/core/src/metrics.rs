//! Overhead, link utilization and average media throughput.

use crate::client::ClientSession;
use crate::{Error, Result, SimTime};

/// 1 - media bytes / bytes received by the client.
pub fn protocol_overhead(session: &ClientSession) -> Result<f64> {
    if session.records.is_empty() {
        return Err(Error::Metrics("overhead of an empty trace".into()));
    }
    let received = session.totals.downlink_received;
    if received == 0 {
        return Err(Error::Metrics("overhead with no bytes received".into()));
    }
    Ok(1.0 - session.media_bytes() as f64 / received as f64)
}

/// Where the utilization window starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UtilizationWindow {
    /// From the first request, so handshake round trips count.
    #[default]
    FromFirstRequest,
    /// From the moment the connection was ready.
    FromReady,
}

/// Downlink throughput over the active session divided by `available_kbps`.
pub fn link_utilization(session: &ClientSession, available_kbps: f64) -> Result<f64> {
    link_utilization_with(session, available_kbps, UtilizationWindow::default())
}

pub fn link_utilization_with(
    session: &ClientSession,
    available_kbps: f64,
    window: UtilizationWindow,
) -> Result<f64> {
    if available_kbps.is_nan() || available_kbps <= 0.0 {
        return Err(Error::Metrics(format!("available rate must be > 0, got {available_kbps}")));
    }
    let start = match window {
        UtilizationWindow::FromFirstRequest => session.started_at,
        UtilizationWindow::FromReady => session.ready_at,
    };
    let duration = session.last_byte_at().saturating_sub(start);
    if duration == SimTime::ZERO {
        return Err(Error::Metrics("utilization of a zero-duration trace".into()));
    }
    let kbps = session.totals.downlink_received as f64 * 8_000.0 / duration.as_micros() as f64;
    Ok(kbps / available_kbps)
}

/// Media bits over the whole session, in kbps.
pub fn avg_media_throughput(session: &ClientSession) -> Result<f64> {
    if session.records.is_empty() {
        return Err(Error::Metrics("throughput of an empty trace".into()));
    }
    let duration = session.last_byte_at().saturating_sub(session.started_at);
    if duration == SimTime::ZERO {
        return Err(Error::Metrics("throughput of a zero-duration trace".into()));
    }
    Ok(session.media_bytes() as f64 * 8_000.0 / duration.as_micros() as f64)
}

/// Measurements of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub scenario_id: String,
    pub seed: u64,
    pub overhead: f64,
    pub utilization: f64,
    pub avg_throughput_kbps: f64,
}

pub fn measure_run(scenario_id: &str, session: &ClientSession, available_kbps: f64) -> Result<RunMetrics> {
    Ok(RunMetrics {
        scenario_id: scenario_id.to_owned(),
        seed: session.seed,
        overhead: protocol_overhead(session)?,
        utilization: link_utilization(session, available_kbps)?,
        avg_throughput_kbps: avg_media_throughput(session)?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsSummary {
    pub scenario_id: String,
    pub overhead: f64,
    pub utilization: f64,
    pub avg_throughput_kbps: f64,
    pub runs: Vec<RunMetrics>,
}

impl MetricsSummary {
    pub fn run_count(&self) -> usize {
        self.runs.len()
    }
}

/// Mean of values summed in sorted order, so run order cannot matter.
fn mean(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum::<f64>() / values.len() as f64
}

pub fn aggregate(runs: &[RunMetrics]) -> Result<MetricsSummary> {
    let first = runs.first().ok_or_else(|| Error::Metrics("no runs to aggregate".into()))?;
    if let Some(other) = runs.iter().find(|r| r.scenario_id != first.scenario_id) {
        return Err(Error::Metrics(format!(
            "cannot aggregate runs of different scenarios: {} and {}",
            first.scenario_id, other.scenario_id
        )));
    }
    let collect = |f: fn(&RunMetrics) -> f64| mean(runs.iter().map(f).collect());
    Ok(MetricsSummary {
        scenario_id: first.scenario_id.clone(),
        overhead: collect(|r| r.overhead),
        utilization: collect(|r| r.utilization),
        avg_throughput_kbps: collect(|r| r.avg_throughput_kbps),
        runs: runs.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::client::{ByteTotals, SegmentDownloadRecord};
    use crate::StackKind;
    use proptest::prelude::*;

    fn record(media: u64, complete_us: u64) -> SegmentDownloadRecord {
        SegmentDownloadRecord {
            index: 0,
            level: 0,
            bitrate_kbps: 1_600,
            request_at: SimTime::ZERO,
            first_byte_at: SimTime::ZERO,
            complete_at: SimTime::from_micros(complete_us),
            media_bytes: media,
            wire_bytes: media,
            b_m_kbps: 0.0,
            b_n_kbps: 0.0,
            available_kbps: 1_000,
        }
    }

    fn session(media: u64, received: u64, complete_us: u64) -> ClientSession {
        ClientSession {
            stack: StackKind::Http2Tcp,
            rtt: SimTime::ZERO,
            seed: 1,
            connections: 1,
            started_at: SimTime::ZERO,
            ready_at: SimTime::ZERO,
            records: vec![record(media, complete_us)],
            totals: ByteTotals { downlink_received: received, ..ByteTotals::default() },
        }
    }

    #[test]
    fn overhead_examples() {
        assert_eq!(protocol_overhead(&session(1_000, 1_000, 1)).unwrap(), 0.0);
        let o = protocol_overhead(&session(900_000, 1_000_000, 1)).unwrap();
        assert!((o - 0.10).abs() < 1e-12);
        let mut empty = session(1, 1, 1);
        empty.records.clear();
        assert!(protocol_overhead(&empty).is_err());
    }

    #[test]
    fn utilization_examples() {
        // 950 kbps for one second is 118,750 bytes
        let u = link_utilization(&session(0, 118_750, 1_000_000), 1_000.0).unwrap();
        assert!((u - 0.95).abs() < 1e-12);
        let u = link_utilization(&session(0, 125_000, 1_000_000), 1_000.0).unwrap();
        assert_eq!(u, 1.0);
        assert_eq!(link_utilization(&session(0, 0, 1_000_000), 1_000.0).unwrap(), 0.0);
        assert!(link_utilization(&session(0, 10, 0), 1_000.0).is_err());
        assert!(link_utilization(&session(0, 10, 10), 0.0).is_err());
    }

    #[test]
    fn utilization_window_excludes_handshake() {
        let mut s = session(0, 125_000, 1_100_000);
        s.ready_at = SimTime::from_millis(100);
        let full = link_utilization(&s, 1_000.0).unwrap();
        let ready = link_utilization_with(&s, 1_000.0, UtilizationWindow::FromReady).unwrap();
        assert!(ready > full);
        assert_eq!(ready, 1.0);
    }

    #[test]
    fn throughput_examples() {
        let s = session(400_000, 0, 2_000_000);
        assert_eq!(avg_media_throughput(&s).unwrap(), 1_600.0);
        let s = session(400_000, 0, 4_000_000);
        assert_eq!(avg_media_throughput(&s).unwrap(), 800.0);
        let mut empty = s.clone();
        empty.records.clear();
        assert!(avg_media_throughput(&empty).is_err());
    }

    fn run(id: &str, u: f64) -> RunMetrics {
        RunMetrics { scenario_id: id.into(), seed: 0, overhead: 0.05, utilization: u, avg_throughput_kbps: 1.0 }
    }

    #[test]
    fn aggregate_examples() {
        let one = aggregate(&[run("a", 0.9)]).unwrap();
        assert_eq!((one.utilization, one.run_count()), (0.9, 1));
        let runs: Vec<_> = [0.90, 0.92, 0.94, 0.92, 0.92].iter().map(|&u| run("a", u)).collect();
        assert!((aggregate(&runs).unwrap().utilization - 0.92).abs() < 1e-12);
        assert!(aggregate(&[run("a", 0.9), run("b", 0.9)]).is_err());
        assert!(aggregate(&[]).is_err());
    }

    proptest! {
        #[test]
        fn aggregate_permutation_invariant(values in proptest::collection::vec(0.0f64..1.0, 1..8), rot in 0usize..8) {
            let runs: Vec<_> = values.iter().map(|&u| run("x", u)).collect();
            let mut shuffled = runs.clone();
            shuffled.rotate_left(rot % runs.len());
            shuffled.reverse();
            prop_assert_eq!(aggregate(&runs).unwrap().utilization, aggregate(&shuffled).unwrap().utilization);
        }

        #[test]
        fn overhead_ignores_time_scale(media in 1u64..1_000_000, extra in 0u64..100_000, t in 1u64..10_000_000, k in 1u64..50) {
            let a = protocol_overhead(&session(media, media + extra, t)).unwrap();
            let b = protocol_overhead(&session(media, media + extra, t * k)).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
