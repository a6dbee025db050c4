//! Live visits through a testbed on loopback.

mod common;

use common::{loopback_port, profile, rt, testbed};
use quicoalesce::corpus::{self, PageClass};
use quicoalesce::endpoint::Alpn;
use quicoalesce::scenario::AccessProfile;
use quicoalesce::visit::{
    Client, CoalesceMode, DnsProtocol, ProtocolCombo, RequestEmission, VisitError, VisitRecord, WebMode,
};

#[test]
fn every_combo_completes_on_fibre() {
    let p = profile("fibre");
    let (tb, settings) = testbed(&p);
    let targets = tb.targets();
    rt().block_on(async {
        let client = Client::new(settings).unwrap();
        for combo in ProtocolCombo::standard_grid() {
            for page in PageClass::ALL {
                if combo.needs_ticket() {
                    client.prime(Alpn::H3, targets.prime).await.unwrap();
                }
                let t = client.visit(combo, page.id(), &targets).await.unwrap();
                let rtt = p.rtt_ms;
                eprintln!(
                    "{:<26} {:<16} lookup {:5.2} connect {:5.2} ttfrs {:5.2} fetch {:5.2} early {}",
                    combo.label(),
                    page.id(),
                    (t.dns_handshake_ms + t.dns_query_ms) / rtt,
                    t.connect_ms / rtt,
                    t.ttfrs_ms / rtt,
                    t.fetch_ms / rtt,
                    t.early_data_used
                );
                assert!(t.ttfrs_ms <= t.fetch_ms);
                assert_eq!(t.single_connection, combo.is_coalesced());
            }
        }
    });
}

#[test]
fn zero_rtt_without_ticket_is_a_precondition_error() {
    let p = profile("fibre");
    let (tb, settings) = testbed(&p);
    let targets = tb.targets();
    rt().block_on(async {
        let client = Client::new(settings).unwrap();
        let err = client
            .visit(
                ProtocolCombo::new(DnsProtocol::Doudp, WebMode::H3ZeroRtt),
                "single_doc",
                &targets,
            )
            .await
            .unwrap_err();
        assert!(matches!(err, VisitError::TicketMissing(_)), "{err}");
    });
}

#[test]
fn early_data_request_arrives_in_zero_rtt() {
    let p = profile("dsl");
    let (tb, mut settings) = testbed(&p);
    settings.emission = RequestEmission::EarlyData;
    let targets = tb.targets();
    rt().block_on(async {
        let client = Client::new(settings).unwrap();
        client.prime(Alpn::H3, targets.prime).await.unwrap();
        tb.server().events().clear();
        let addr = loopback_port(&targets.quic);
        let f = client.fetch_h3(addr, "doc_plus_assets", WebMode::H3ZeroRtt).await.unwrap();
        assert!(f.early_data_used && !f.retried_1rtt);
        assert!(f.ttfrs_ms < 0.25 * p.rtt_ms, "ttfrs {}", f.ttfrs_ms);
        assert_eq!(f.manifest, corpus::page_manifest(PageClass::DocPlusAssets));
        let early_index = tb.server().events().snapshot().iter().any(|e| {
            matches!(&e.kind, quicoalesce::endpoint::EventKind::Request { path, early: true } if path == "/doc_plus_assets/index.txt")
        });
        assert!(early_index, "index request not seen as 0-RTT by the server");
    });
}

#[test]
fn coalesced_paper_mode_waits_for_settings() {
    let p = profile("fibre");
    let (tb, settings) = testbed(&p);
    let targets = tb.targets();
    rt().block_on(async {
        let client = Client::new(settings).unwrap();
        let paper = client
            .visit_coalesced(CoalesceMode::Paper, "single_doc", &targets)
            .await
            .unwrap();
        let optimized = client
            .visit_coalesced(CoalesceMode::Optimized, "single_doc", &targets)
            .await
            .unwrap();
        // the SETTINGS wait costs one extra round trip
        let saved = (paper.ttfrs_ms - optimized.ttfrs_ms) / p.rtt_ms;
        assert!((0.7..1.3).contains(&saved), "saved {saved} RTT");
    });
}

#[test]
fn rejected_early_data_is_retried_on_the_same_connection() {
    let p = profile("cable");
    let (tb, mut settings) = testbed(&p);
    settings.emission = RequestEmission::EarlyData;
    let targets = tb.targets();
    rt().block_on(async {
        let client = Client::new(settings).unwrap();
        // a doq ticket resumes under h3 but may not carry early data there
        client.prime(Alpn::Doq, targets.prime).await.unwrap();
        let f = client
            .fetch_h3(loopback_port(&targets.quic), "single_doc", WebMode::H3ZeroRtt)
            .await
            .unwrap();
        assert!(f.retried_1rtt && !f.early_data_used);
        assert_eq!(f.manifest, corpus::page_manifest(PageClass::SingleDoc));
    });
}

#[test]
fn near_zero_network_visit_is_processing_only() {
    let p = AccessProfile::new("zero", 0.0001, 1e6, 1e6).unwrap();
    let (tb, settings) = testbed(&p);
    let targets = tb.targets();
    let combo = ProtocolCombo::baseline();
    let outcome = rt().block_on(async {
        let client = Client::new(settings).unwrap();
        client.visit(combo, "single_doc", &targets).await
    });
    let rec = VisitRecord::new(combo, &p, "single_doc", RequestEmission::AfterHandshake, 0.0, outcome);
    assert!(!rec.failed);
    let plt = rec.plt_ms.unwrap();
    assert!(plt < 20.0, "plt {plt} ms");
}

/// Fibre 1-RTT ttfrs against the paper's browser band. The client sends its
/// GET right after the handshake (about 1.1 RTT); the rest of the band is
/// browser work not modelled here.
#[test]
#[ignore = "band includes browser processing the testbed does not have"]
fn one_rtt_fibre_ttfrs_band() {
    let p = profile("fibre");
    let (tb, settings) = testbed(&p);
    let addr = loopback_port(&tb.targets().quic);
    let samples = rt().block_on(async {
        let client = Client::new(settings).unwrap();
        let mut xs = Vec::new();
        for _ in 0..15 {
            let f = client.fetch_h3(addr, "single_doc", WebMode::H3OneRtt).await.unwrap();
            xs.push(f.ttfrs_ms / p.rtt_ms);
        }
        xs
    });
    let m = common::median(samples);
    assert!((1.2..=1.9).contains(&m), "median ttfrs {m:.3} RTT");
}
