use std::sync::Arc;

use dashsim::netem::{BandwidthTrajectory, EmulatedLink, LinkOutcome};
use dashsim::SimTime;
use proptest::prelude::*;

/// Bytes the trajectory can carry between `a` and `b`, summed piece by piece.
fn capacity_bytes(steps: &[(SimTime, u32)], a: SimTime, b: SimTime) -> f64 {
    let mut bits_per_ms_us: u128 = 0;
    for (i, &(start, rate)) in steps.iter().enumerate() {
        let end = steps.get(i + 1).map_or(SimTime::from_micros(u64::MAX), |s| s.0);
        let lo = start.max(a);
        let hi = end.min(b);
        if hi > lo {
            bits_per_ms_us += u128::from(rate) * u128::from((hi - lo).as_micros());
        }
    }
    // kbps * us = 1e-3 bits
    bits_per_ms_us as f64 / 8_000.0
}

/// Rate changes as (gap us, kbps), packets as (gap us, bytes), drained start.
type Schedule = (Vec<(u64, u32)>, Vec<(u64, u64)>, bool);

fn schedule() -> impl Strategy<Value = Schedule> {
    (
        proptest::collection::vec((1u64..3_000_000, 50u32..20_000), 0..4),
        proptest::collection::vec((0u64..4_000, 40u64..1_515), 1..400),
        any::<bool>(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn sliding_window_never_exceeds_burst_plus_rate((changes, packets, drained) in schedule()) {
        let mut steps = vec![(SimTime::ZERO, 1_000 + changes.first().map_or(0, |c| c.1))];
        let mut t = 0;
        for &(gap, rate) in &changes {
            t += gap;
            steps.push((SimTime::from_micros(t), rate));
        }
        let trajectory = Arc::new(BandwidthTrajectory::new(steps.clone()).unwrap());
        let burst = 12_500;
        let mut link = EmulatedLink::new(trajectory, SimTime::ZERO, burst, u64::MAX / 4);
        if drained {
            link = link.drained();
        }

        let mut now = 0;
        let mut departures = Vec::new();
        for &(gap, bytes) in &packets {
            now += gap;
            match link.transmit(bytes, SimTime::from_micros(now), false) {
                LinkOutcome::Arrives(at) => departures.push((at, bytes)),
                LinkOutcome::Dropped => prop_assert!(false, "unexpected drop"),
            }
        }
        for w in departures.windows(2) {
            prop_assert!(w[0].0 <= w[1].0, "departures reordered");
        }
        for i in 0..departures.len() {
            let mut sum = 0u64;
            for j in i..departures.len() {
                sum += departures[j].1;
                let bound = burst as f64 + capacity_bytes(&steps, departures[i].0, departures[j].0);
                prop_assert!(
                    sum as f64 <= bound + 1e-6,
                    "{} bytes in [{}, {}] exceeds {}", sum, departures[i].0, departures[j].0, bound
                );
            }
        }
    }
}
