//! C ABI over the dashsim simulator.
//!
//! Every function returns a [`DashsimStatus`]; on failure the message is
//! available from [`dashsim_last_error`] on the same thread. Catalogs and
//! sessions are opaque handles released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;

use dashsim::catalog::{build_default_catalog, load_catalog, MediaCatalog};
use dashsim::client::{estimate_bandwidth, ClientSession, EstimatorState};
use dashsim::metrics::{avg_media_throughput, link_utilization, protocol_overhead};
use dashsim::netem::{default_trajectory, BandwidthTrajectory};
use dashsim::session::{run_session, SessionConfig};
use dashsim::transport::analytic_stack_overhead;
use dashsim::{SimTime, StackConfig, StackKind};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DashsimStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    SimulationError = 3,
    IoError = 4,
    Panic = 5,
}

/// Values accepted in `DashsimSessionConfig::stack`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DashsimStack {
    Http2Tcp = 0,
    Http2Ssl = 1,
    Http1Quic = 2,
    SpdyQuic = 3,
}

fn stack_from(code: u32) -> Option<StackKind> {
    StackKind::ALL.get(code as usize).copied()
}

pub struct DashsimCatalog(MediaCatalog);

pub struct DashsimSession {
    session: ClientSession,
    available_kbps: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct DashsimSessionConfig {
    /// One of the `DashsimStack` values.
    pub stack: u32,
    pub rtt_ms: u32,
    /// Constant link rate; 0 selects the built-in bandwidth trajectory.
    pub rate_kbps: u32,
    /// Representation level, or -1 for adaptive selection.
    pub fixed_level: i32,
    /// Number of segments to fetch; 0 fetches the whole catalog.
    pub segment_limit: u32,
    pub seed: u64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct DashsimMetrics {
    pub overhead: f64,
    pub utilization: f64,
    pub avg_throughput_kbps: f64,
    pub segments: u32,
    pub media_bytes: u64,
    pub downlink_bytes: u64,
    pub duration_us: u64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct DashsimSegment {
    pub index: u32,
    pub level: u32,
    pub bitrate_kbps: u32,
    pub available_kbps: u32,
    pub request_us: u64,
    pub complete_us: u64,
    pub media_bytes: u64,
    pub b_m_kbps: f64,
    pub b_n_kbps: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: impl Into<String>) {
    let text = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).unwrap_or_default());
}

struct Failure(DashsimStatus, String);

impl From<dashsim::Error> for Failure {
    fn from(e: dashsim::Error) -> Self {
        let status = match e {
            dashsim::Error::Io { .. } => DashsimStatus::IoError,
            dashsim::Error::Invalid { .. } | dashsim::Error::OutOfRange { .. } | dashsim::Error::Parse { .. } => {
                DashsimStatus::InvalidArgument
            }
            _ => DashsimStatus::SimulationError,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(DashsimStatus::NullPointer, format!("{what} is null"))
}

fn invalid(message: String) -> Failure {
    Failure(DashsimStatus::InvalidArgument, message)
}

/// Runs `f`, converting errors and panics into a status and the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> DashsimStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            DashsimStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("internal panic");
            DashsimStatus::Panic
        }
    }
}

unsafe fn path_arg<'a>(path: *const c_char) -> Result<&'a Path, Failure> {
    if path.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(path).to_str().map_err(|_| invalid("path is not UTF-8".into()))?;
    Ok(Path::new(s))
}

unsafe fn out_arg<'a, T>(out: *mut T) -> Result<&'a mut T, Failure> {
    out.as_mut().ok_or_else(|| null("output pointer"))
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn dashsim_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dashsim_catalog_default(out: *mut *mut DashsimCatalog) -> DashsimStatus {
    guard(|| {
        let out = out_arg(out)?;
        *out = Box::into_raw(Box::new(DashsimCatalog(build_default_catalog())));
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dashsim_catalog_load(path: *const c_char, out: *mut *mut DashsimCatalog) -> DashsimStatus {
    guard(|| {
        let out = out_arg(out)?;
        let catalog = load_catalog(path_arg(path)?)?;
        *out = Box::into_raw(Box::new(DashsimCatalog(catalog)));
        Ok(())
    })
}

/// # Safety
/// `catalog` must come from this library and `out` be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dashsim_catalog_level_count(catalog: *const DashsimCatalog, out: *mut u32) -> DashsimStatus {
    guard(|| {
        let catalog = catalog.as_ref().ok_or_else(|| null("catalog"))?;
        *out_arg(out)? = catalog.0.level_count() as u32;
        Ok(())
    })
}

/// # Safety
/// `catalog` must come from this library and `out` be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dashsim_catalog_bitrate(
    catalog: *const DashsimCatalog,
    level: u32,
    out: *mut u32,
) -> DashsimStatus {
    guard(|| {
        let catalog = catalog.as_ref().ok_or_else(|| null("catalog"))?;
        *out_arg(out)? = catalog.0.representation(level as usize)?.bitrate_kbps;
        Ok(())
    })
}

/// # Safety
/// `catalog` must come from this library or be null; it must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dashsim_catalog_free(catalog: *mut DashsimCatalog) {
    if !catalog.is_null() {
        drop(Box::from_raw(catalog));
    }
}

/// A config with the defaults of an adaptive HTTP/2-over-TCP session.
#[no_mangle]
pub extern "C" fn dashsim_session_config_default() -> DashsimSessionConfig {
    DashsimSessionConfig {
        stack: DashsimStack::Http2Tcp as u32,
        rtt_ms: 0,
        rate_kbps: 0,
        fixed_level: -1,
        segment_limit: 0,
        seed: 1,
    }
}

/// Runs one streaming session to completion.
///
/// # Safety
/// `catalog` must come from this library, `config` be readable and `out`
/// valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dashsim_session_run(
    catalog: *const DashsimCatalog,
    config: *const DashsimSessionConfig,
    out: *mut *mut DashsimSession,
) -> DashsimStatus {
    guard(|| {
        let catalog = &catalog.as_ref().ok_or_else(|| null("catalog"))?.0;
        let c = *config.as_ref().ok_or_else(|| null("config"))?;
        let out = out_arg(out)?;
        let kind = stack_from(c.stack).ok_or_else(|| invalid(format!("unknown stack {}", c.stack)))?;
        let trajectory = if c.rate_kbps == 0 {
            default_trajectory()
        } else {
            BandwidthTrajectory::constant(c.rate_kbps)?
        };
        let mut cfg = SessionConfig::new(kind, SimTime::from_millis(u64::from(c.rtt_ms)), Arc::new(trajectory));
        cfg.seed = c.seed;
        cfg.client.fixed_level = match c.fixed_level {
            -1 => None,
            l if l >= 0 => Some(l as usize),
            l => return Err(invalid(format!("fixed level {l}"))),
        };
        cfg.segment_limit = (c.segment_limit > 0).then_some(c.segment_limit);
        let output = run_session(catalog, &cfg)?;
        let available_kbps = cfg.trajectory.time_weighted_mean(output.session.last_byte_at());
        *out = Box::into_raw(Box::new(DashsimSession { session: output.session, available_kbps }));
        Ok(())
    })
}

/// # Safety
/// `session` must come from this library and `out` be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dashsim_session_metrics(session: *const DashsimSession, out: *mut DashsimMetrics) -> DashsimStatus {
    guard(|| {
        let s = session.as_ref().ok_or_else(|| null("session"))?;
        let out = out_arg(out)?;
        let trace = &s.session;
        *out = DashsimMetrics {
            overhead: protocol_overhead(trace)?,
            utilization: link_utilization(trace, s.available_kbps)?,
            avg_throughput_kbps: avg_media_throughput(trace)?,
            segments: trace.records.len() as u32,
            media_bytes: trace.media_bytes(),
            downlink_bytes: trace.totals.downlink_received,
            duration_us: (trace.last_byte_at() - trace.started_at).as_micros(),
        };
        Ok(())
    })
}

/// # Safety
/// `session` must come from this library and `out` be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dashsim_session_segment(
    session: *const DashsimSession,
    index: u32,
    out: *mut DashsimSegment,
) -> DashsimStatus {
    guard(|| {
        let s = session.as_ref().ok_or_else(|| null("session"))?;
        let out = out_arg(out)?;
        let records = &s.session.records;
        let r = records
            .get(index as usize)
            .ok_or_else(|| invalid(format!("segment {index} out of range ({} segments)", records.len())))?;
        *out = DashsimSegment {
            index: r.index,
            level: r.level as u32,
            bitrate_kbps: r.bitrate_kbps,
            available_kbps: r.available_kbps,
            request_us: r.request_at.as_micros(),
            complete_us: r.complete_at.as_micros(),
            media_bytes: r.media_bytes,
            b_m_kbps: r.b_m_kbps,
            b_n_kbps: r.b_n_kbps,
        };
        Ok(())
    })
}

/// Writes the per-segment trace as CSV.
///
/// # Safety
/// `session` must come from this library and `path` be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn dashsim_session_write_trace(session: *const DashsimSession, path: *const c_char) -> DashsimStatus {
    guard(|| {
        let s = session.as_ref().ok_or_else(|| null("session"))?;
        s.session.save_trace_csv(path_arg(path)?)?;
        Ok(())
    })
}

/// # Safety
/// `session` must come from this library or be null; it must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dashsim_session_free(session: *mut DashsimSession) {
    if !session.is_null() {
        drop(Box::from_raw(session));
    }
}

/// Link, IP and transport header bytes as a fraction of a full-MTU frame.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dashsim_stack_header_overhead(stack: u32, out: *mut f64) -> DashsimStatus {
    guard(|| {
        let kind = stack_from(stack).ok_or_else(|| invalid(format!("unknown stack {stack}")))?;
        *out_arg(out)? = analytic_stack_overhead(&StackConfig::new(kind));
        Ok(())
    })
}

/// One step of the weighted bandwidth estimator.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dashsim_estimate_bandwidth(
    w1: f64,
    w2: f64,
    b_prev: f64,
    b_m: f64,
    out: *mut f64,
) -> DashsimStatus {
    guard(|| {
        let mut state = EstimatorState::new(w1, w2)?.with_prev(b_prev);
        *out_arg(out)? = estimate_bandwidth(&mut state, b_m);
        Ok(())
    })
}
