//! C ABI over the testbed. Every fallible call returns a [`QcStatus`]; the
//! message of the last failure on the calling thread is available from
//! [`qc_last_error`]. Handles are opaque and must be released with their
//! `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::net::SocketAddr;
use std::path::Path;
use std::ptr;

use quicoalesce::campaign::{self, CampaignConfig, Summary};
use quicoalesce::dnswire;
use quicoalesce::emulink::{DatagramRelay, StreamRelay, StreamRelayOptions};
use quicoalesce::scenario;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    NotFound = 4,
    Io = 5,
    BufferTooSmall = 6,
    Failed = 7,
}

thread_local! {
    static LAST_ERROR: RefCell<Vec<u8>> = const { RefCell::new(Vec::new()) };
}

fn fail(status: QcStatus, msg: impl std::fmt::Display) -> QcStatus {
    LAST_ERROR.with(|e| {
        let mut e = e.borrow_mut();
        e.clear();
        e.extend_from_slice(msg.to_string().as_bytes());
    });
    status
}

/// Copies the last error message (NUL-terminated, truncated to fit) into
/// `buf` and returns its full length without the terminator.
///
/// # Safety
/// `buf` must be null or valid for `cap` bytes.
#[no_mangle]
pub unsafe extern "C" fn qc_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        if !buf.is_null() && cap > 0 {
            let n = e.len().min(cap - 1);
            ptr::copy_nonoverlapping(e.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        e.len()
    })
}

unsafe fn str_arg<'a>(p: *const c_char) -> Result<&'a str, QcStatus> {
    if p.is_null() {
        return Err(fail(QcStatus::NullPointer, "null string argument"));
    }
    CStr::from_ptr(p).to_str().map_err(|e| fail(QcStatus::InvalidUtf8, e))
}

macro_rules! try_status {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(s) => return s,
        }
    };
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct QcProfile {
    pub rtt_ms: f64,
    pub downlink_mbps: f64,
    pub uplink_mbps: f64,
}

/// Looks up a built-in access profile by name.
///
/// # Safety
/// `name` must be a NUL-terminated string; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn qc_profile_lookup(name: *const c_char, out: *mut QcProfile) -> QcStatus {
    let name = try_status!(str_arg(name));
    if out.is_null() {
        return fail(QcStatus::NullPointer, "null output");
    }
    match scenario::find_profile(name, &[]) {
        Ok(p) => {
            *out = QcProfile {
                rtt_ms: p.rtt_ms,
                downlink_mbps: p.downlink_mbps,
                uplink_mbps: p.uplink_mbps,
            };
            QcStatus::Ok
        }
        Err(e) => fail(QcStatus::NotFound, e),
    }
}

/// (combo − baseline) / baseline.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn qc_relative_increase(combo_median: f64, baseline_median: f64, out: *mut f64) -> QcStatus {
    if out.is_null() {
        return fail(QcStatus::NullPointer, "null output");
    }
    match campaign::relative_increase(combo_median, baseline_median) {
        Ok(v) => {
            *out = v;
            QcStatus::Ok
        }
        Err(e) => fail(QcStatus::InvalidArgument, e),
    }
}

/// Encodes a DNS query into `buf`. `out_len` receives the encoded length,
/// also when the buffer is too small.
///
/// # Safety
/// `name` must be NUL-terminated; `buf` valid for `cap` bytes; `out_len`
/// valid for writes.
#[no_mangle]
pub unsafe extern "C" fn qc_dns_encode_query(
    name: *const c_char,
    qtype: u16,
    id: u16,
    buf: *mut u8,
    cap: usize,
    out_len: *mut usize,
) -> QcStatus {
    let name = try_status!(str_arg(name));
    if out_len.is_null() {
        return fail(QcStatus::NullPointer, "null length output");
    }
    let wire = match dnswire::make_query(name, qtype, id).and_then(|q| dnswire::encode(&q)) {
        Ok(w) => w,
        Err(e) => return fail(QcStatus::InvalidArgument, e),
    };
    *out_len = wire.len();
    if buf.is_null() || cap < wire.len() {
        return fail(QcStatus::BufferTooSmall, format!("need {} bytes", wire.len()));
    }
    ptr::copy_nonoverlapping(wire.as_ptr(), buf, wire.len());
    QcStatus::Ok
}

/// Opaque campaign summary.
pub struct QcSummary(Summary);

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct QcSummaryRow {
    pub n: usize,
    pub median_ms: f64,
    pub q1_ms: f64,
    pub q3_ms: f64,
    pub iqr_ms: f64,
    pub median_rtt_multiple: f64,
    /// NaN when the cell has no baseline.
    pub rel_increase: f64,
}

fn boxed_summary(s: Summary, out: *mut *mut QcSummary) -> QcStatus {
    // caller checked `out`
    unsafe { *out = Box::into_raw(Box::new(QcSummary(s))) };
    QcStatus::Ok
}

/// Summarizes a JSONL dataset.
///
/// # Safety
/// `path` must be NUL-terminated; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn qc_summary_load(path: *const c_char, out: *mut *mut QcSummary) -> QcStatus {
    let path = try_status!(str_arg(path));
    if out.is_null() {
        return fail(QcStatus::NullPointer, "null output");
    }
    match campaign::summarize(Path::new(path)) {
        Ok(s) => boxed_summary(s, out),
        Err(e) => fail(QcStatus::Io, e),
    }
}

/// Runs a campaign from a JSON config file and returns its summary.
///
/// # Safety
/// `config_path` must be NUL-terminated; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn qc_campaign_run(config_path: *const c_char, out: *mut *mut QcSummary) -> QcStatus {
    let path = try_status!(str_arg(config_path));
    if out.is_null() {
        return fail(QcStatus::NullPointer, "null output");
    }
    let cfg = match CampaignConfig::load(Path::new(path)) {
        Ok(c) => c,
        Err(e) => return fail(QcStatus::InvalidArgument, e),
    };
    match campaign::run_campaign(cfg) {
        Ok(outcome) => boxed_summary(outcome.summary, out),
        Err(e) => fail(QcStatus::Failed, e),
    }
}

/// Number of rows, or 0 for a null handle.
///
/// # Safety
/// `s` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qc_summary_row_count(s: *const QcSummary) -> usize {
    s.as_ref().map_or(0, |s| s.0.rows.len())
}

/// Number of failed visits in the dataset.
///
/// # Safety
/// `s` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qc_summary_failure_count(s: *const QcSummary) -> usize {
    s.as_ref().map_or(0, |s| s.0.failures.len())
}

/// Numeric columns of the row for (profile, page, combo).
///
/// # Safety
/// `s` must be a live handle; strings NUL-terminated; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn qc_summary_find(
    s: *const QcSummary,
    profile: *const c_char,
    page: *const c_char,
    combo: *const c_char,
    out: *mut QcSummaryRow,
) -> QcStatus {
    let Some(s) = s.as_ref() else {
        return fail(QcStatus::NullPointer, "null summary");
    };
    let (profile, page, combo) = (
        try_status!(str_arg(profile)),
        try_status!(str_arg(page)),
        try_status!(str_arg(combo)),
    );
    if out.is_null() {
        return fail(QcStatus::NullPointer, "null output");
    }
    match s.0.row(profile, page, combo) {
        Some(r) => {
            *out = QcSummaryRow {
                n: r.n,
                median_ms: r.median_ms,
                q1_ms: r.q1_ms,
                q3_ms: r.q3_ms,
                iqr_ms: r.iqr_ms,
                median_rtt_multiple: r.median_rtt_multiple,
                rel_increase: r.rel_increase.unwrap_or(f64::NAN),
            };
            QcStatus::Ok
        }
        None => fail(QcStatus::NotFound, format!("no row {profile}/{page}/{combo}")),
    }
}

/// Writes the summary CSV.
///
/// # Safety
/// `s` must be a live handle; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn qc_summary_write_csv(s: *const QcSummary, path: *const c_char) -> QcStatus {
    let Some(s) = s.as_ref() else {
        return fail(QcStatus::NullPointer, "null summary");
    };
    let path = try_status!(str_arg(path));
    let bytes = match s.0.to_csv() {
        Ok(b) => b,
        Err(e) => return fail(QcStatus::Failed, e),
    };
    match std::fs::write(path, bytes) {
        Ok(()) => QcStatus::Ok,
        Err(e) => fail(QcStatus::Io, e),
    }
}

/// # Safety
/// `s` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn qc_summary_free(s: *mut QcSummary) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

enum RelayInner {
    Datagram(DatagramRelay),
    Stream(StreamRelay),
}

/// Opaque running relay.
pub struct QcRelay(RelayInner);

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QcRelayKind {
    Datagram = 0,
    Stream = 1,
}

/// Starts a relay on loopback shaped by the named built-in profile and
/// forwarding to `upstream` ("ip:port").
///
/// # Safety
/// Strings must be NUL-terminated; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn qc_relay_start(
    kind: QcRelayKind,
    profile: *const c_char,
    upstream: *const c_char,
    out: *mut *mut QcRelay,
) -> QcStatus {
    let (profile, upstream) = (try_status!(str_arg(profile)), try_status!(str_arg(upstream)));
    if out.is_null() {
        return fail(QcStatus::NullPointer, "null output");
    }
    let profile = match scenario::find_profile(profile, &[]) {
        Ok(p) => p,
        Err(e) => return fail(QcStatus::NotFound, e),
    };
    let upstream: SocketAddr = match upstream.parse() {
        Ok(a) => a,
        Err(e) => return fail(QcStatus::InvalidArgument, e),
    };
    let relay = match kind {
        QcRelayKind::Datagram => DatagramRelay::start(&profile, upstream).map(RelayInner::Datagram),
        QcRelayKind::Stream => {
            StreamRelay::start(&profile, upstream, StreamRelayOptions::default()).map(RelayInner::Stream)
        }
    };
    match relay {
        Ok(r) => {
            *out = Box::into_raw(Box::new(QcRelay(r)));
            QcStatus::Ok
        }
        Err(e) => fail(QcStatus::Io, e),
    }
}

/// Local port the relay listens on, or 0 for a null handle.
///
/// # Safety
/// `r` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qc_relay_port(r: *const QcRelay) -> u16 {
    match r.as_ref().map(|r| &r.0) {
        Some(RelayInner::Datagram(d)) => d.local_addr().port(),
        Some(RelayInner::Stream(s)) => s.local_addr().port(),
        None => 0,
    }
}

/// Stops the relay (queued units are dropped) and releases it.
///
/// # Safety
/// `r` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn qc_relay_free(r: *mut QcRelay) {
    if r.is_null() {
        return;
    }
    let r = Box::from_raw(r);
    match &r.0 {
        RelayInner::Datagram(d) => d.shutdown(false),
        RelayInner::Stream(s) => s.shutdown(false),
    }
}
