//! Discrete-event simulation of DASH adaptive streaming over four
//! application/transport stacks: HTTP/2 over TCP, HTTP/2 over SSL,
//! HTTP/1.1 over QUIC and SPDY over QUIC.
//!
//! The simulator measures protocol overhead, link utilization and the
//! average media throughput of a throughput-driven adaptation client
//! behind a token-bucket shaped, delay-emulated link.
//!
//! Module map:
//!
//! * [`simcore`]: virtual clock, event queue and seeded randomness.
//! * [`catalog`]: the representation ladder and segment sizing.
//! * [`netem`]: token-bucket shaper, drop-tail queue, delay and bandwidth trajectories.
//! * [`transport`]: byte-accounted TCP and QUIC models.
//! * [`appproto`]: HTTP/1.1, HTTP/2 and SPDY-over-QUIC framing.
//! * [`client`]: the bandwidth estimator, representation selection and session traces.
//! * [`session`]: wires the above into a single streaming session.
//! * [`metrics`]: overhead, utilization and throughput plus multi-run aggregation.
//! * [`scenario`]: the overhead sweep, utilization grid and adaptation experiments.

pub mod appproto;
pub mod catalog;
pub mod client;
mod error;
pub mod metrics;
pub mod netem;
pub mod scenario;
pub mod session;
pub mod simcore;
pub mod transport;

pub use error::{Error, Result};
pub use simcore::SimTime;
pub use transport::{StackConfig, StackKind};
