use std::ffi::{c_char, CString};
use std::ptr;

use quicoalesce_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 256];
    let n = unsafe { qc_last_error(buf.as_mut_ptr(), buf.len()) };
    let bytes: Vec<u8> = buf[..n.min(255)].iter().map(|&c| c as u8).collect();
    String::from_utf8(bytes).unwrap()
}

#[test]
fn profile_lookup() {
    let mut p = QcProfile::default();
    let name = CString::new("4g_medium").unwrap();
    assert_eq!(unsafe { qc_profile_lookup(name.as_ptr(), &mut p) }, QcStatus::Ok);
    assert_eq!((p.rtt_ms, p.downlink_mbps, p.uplink_mbps), (104.5, 28.7, 4.2));

    let bogus = CString::new("dialup").unwrap();
    assert_eq!(unsafe { qc_profile_lookup(bogus.as_ptr(), &mut p) }, QcStatus::NotFound);
    assert!(last_error().contains("dialup"));
    assert_eq!(unsafe { qc_profile_lookup(ptr::null(), &mut p) }, QcStatus::NullPointer);
}

#[test]
fn relative_increase_matches_hand_arithmetic() {
    let mut v = 0.0;
    assert_eq!(unsafe { qc_relative_increase(669.8, 630.4, &mut v) }, QcStatus::Ok);
    assert!((v - 0.0625).abs() < 5e-4);
    assert_eq!(
        unsafe { qc_relative_increase(1.0, 0.0, &mut v) },
        QcStatus::InvalidArgument
    );
}

#[test]
fn dns_query_reports_needed_size() {
    let name = CString::new("example.org").unwrap();
    let mut len = 0usize;
    let st = unsafe { qc_dns_encode_query(name.as_ptr(), 1, 0x1234, ptr::null_mut(), 0, &mut len) };
    assert_eq!(st, QcStatus::BufferTooSmall);
    assert_eq!(len, 12 + 13 + 4);
    let mut buf = vec![0u8; len];
    let st = unsafe { qc_dns_encode_query(name.as_ptr(), 1, 0x1234, buf.as_mut_ptr(), buf.len(), &mut len) };
    assert_eq!(st, QcStatus::Ok);
    assert_eq!(&buf[..2], &[0x12, 0x34]);
    assert_eq!(&buf[12..], b"\x07example\x03org\x00\x00\x01\x00\x01");
}

#[test]
fn summary_handle_over_a_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let jsonl = dir.path().join("d.jsonl");
    let line = |combo_dns: &str, plt: f64| {
        format!(
            r#"{{"schema_version":1,"ts_unix_ms":0,"profile":"fibre","rtt_ms":14.8,"page":"single_doc","combo_dns":"{combo_dns}","combo_web":"h3_1rtt","coalesced":false,"coalesce_mode":null,"request_emission":"after_handshake","dns_handshake_ms":0.0,"dns_query_ms":0.0,"dns_lookup_ms":0.0,"connect_ms":1.0,"ttfrs_ms":1.0,"fetch_ms":{plt},"plt_ms":{plt},"dns_handshake_rtt":0.0,"dns_query_rtt":0.0,"dns_lookup_rtt":0.0,"connect_rtt":0.1,"ttfrs_rtt":0.1,"fetch_rtt":1.0,"plt_rtt":1.0,"early_data_used":false,"zero_rtt_accepted":null,"retried_1rtt":false,"single_connection":false,"failed":false,"fail_reason":null}}"#
        )
    };
    std::fs::write(
        &jsonl,
        format!("{}\n{}\nnot json\n", line("doudp", 100.0), line("doq", 110.0)),
    )
    .unwrap();
    let path = CString::new(jsonl.to_str().unwrap()).unwrap();
    let mut s: *mut QcSummary = ptr::null_mut();
    assert_eq!(unsafe { qc_summary_load(path.as_ptr(), &mut s) }, QcStatus::Ok);
    assert_eq!(unsafe { qc_summary_row_count(s) }, 2);
    let mut row = QcSummaryRow::default();
    let (p, pg, c) = (
        CString::new("fibre").unwrap(),
        CString::new("single_doc").unwrap(),
        CString::new("doq+h3_1rtt").unwrap(),
    );
    assert_eq!(
        unsafe { qc_summary_find(s, p.as_ptr(), pg.as_ptr(), c.as_ptr(), &mut row) },
        QcStatus::Ok
    );
    assert!((row.rel_increase - 0.10).abs() < 1e-12);
    let csv = CString::new(dir.path().join("s.csv").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { qc_summary_write_csv(s, csv.as_ptr()) }, QcStatus::Ok);
    unsafe { qc_summary_free(s) };
    unsafe { qc_summary_free(ptr::null_mut()) };
}

#[test]
fn relay_handle_lifecycle() {
    let (p, up) = (CString::new("fibre").unwrap(), CString::new("127.0.0.1:9").unwrap());
    let mut r: *mut QcRelay = ptr::null_mut();
    assert_eq!(
        unsafe { qc_relay_start(QcRelayKind::Datagram, p.as_ptr(), up.as_ptr(), &mut r) },
        QcStatus::Ok
    );
    assert_ne!(unsafe { qc_relay_port(r) }, 0);
    unsafe { qc_relay_free(r) };
    let bad = CString::new("not an address").unwrap();
    assert_eq!(
        unsafe { qc_relay_start(QcRelayKind::Stream, p.as_ptr(), bad.as_ptr(), &mut r) },
        QcStatus::InvalidArgument
    );
    assert_eq!(unsafe { qc_relay_port(ptr::null()) }, 0);
}
