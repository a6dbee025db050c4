use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::{CoalesceMode, DnsProtocol, ProtocolCombo, RequestEmission, VisitError, WebMode};
use crate::scenario::AccessProfile;

pub const SCHEMA_VERSION: u32 = 1;

/// Raw durations of a successful visit, in milliseconds.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VisitTimings {
    pub dns_handshake_ms: f64,
    pub dns_query_ms: f64,
    pub connect_ms: f64,
    pub ttfrs_ms: f64,
    pub fetch_ms: f64,
    pub early_data_used: bool,
    pub zero_rtt_accepted: Option<bool>,
    pub retried_1rtt: bool,
    pub single_connection: bool,
}

/// One JSONL line of the dataset. Durations are `None` on failed visits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisitRecord {
    pub schema_version: u32,
    pub ts_unix_ms: u64,
    pub profile: String,
    pub rtt_ms: f64,
    pub page: String,
    pub combo_dns: DnsProtocol,
    pub combo_web: WebMode,
    pub coalesced: bool,
    pub coalesce_mode: Option<CoalesceMode>,
    pub request_emission: RequestEmission,
    pub dns_handshake_ms: Option<f64>,
    pub dns_query_ms: Option<f64>,
    pub dns_lookup_ms: Option<f64>,
    pub connect_ms: Option<f64>,
    pub ttfrs_ms: Option<f64>,
    pub fetch_ms: Option<f64>,
    pub plt_ms: Option<f64>,
    pub dns_handshake_rtt: Option<f64>,
    pub dns_query_rtt: Option<f64>,
    pub dns_lookup_rtt: Option<f64>,
    pub connect_rtt: Option<f64>,
    pub ttfrs_rtt: Option<f64>,
    pub fetch_rtt: Option<f64>,
    pub plt_rtt: Option<f64>,
    pub early_data_used: bool,
    pub zero_rtt_accepted: Option<bool>,
    pub retried_1rtt: bool,
    pub single_connection: bool,
    pub failed: bool,
    pub fail_reason: Option<String>,
}

fn now_unix_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or_default()
}

impl VisitRecord {
    /// Builds the record for one visit. `render_cost_ms` is added to the
    /// fetch time before PLT is composed.
    pub fn new(
        combo: ProtocolCombo,
        profile: &AccessProfile,
        page: &str,
        emission: RequestEmission,
        render_cost_ms: f64,
        outcome: Result<VisitTimings, VisitError>,
    ) -> Self {
        let mut rec = VisitRecord {
            schema_version: SCHEMA_VERSION,
            ts_unix_ms: now_unix_ms(),
            profile: profile.name.clone(),
            rtt_ms: profile.rtt_ms,
            page: page.to_string(),
            combo_dns: combo.dns,
            combo_web: combo.web,
            coalesced: combo.is_coalesced(),
            coalesce_mode: combo.coalesce_mode,
            request_emission: emission,
            dns_handshake_ms: None,
            dns_query_ms: None,
            dns_lookup_ms: None,
            connect_ms: None,
            ttfrs_ms: None,
            fetch_ms: None,
            plt_ms: None,
            dns_handshake_rtt: None,
            dns_query_rtt: None,
            dns_lookup_rtt: None,
            connect_rtt: None,
            ttfrs_rtt: None,
            fetch_rtt: None,
            plt_rtt: None,
            early_data_used: false,
            zero_rtt_accepted: None,
            retried_1rtt: false,
            single_connection: combo.is_coalesced(),
            failed: false,
            fail_reason: None,
        };
        let t = match outcome {
            Ok(t) => t,
            Err(e) => {
                rec.failed = true;
                rec.fail_reason = Some(e.to_string());
                return rec;
            }
        };
        let lookup = t.dns_handshake_ms + t.dns_query_ms;
        let fetch = t.fetch_ms + render_cost_ms;
        // a single connection already contains the lookup
        let plt = if t.single_connection { fetch } else { lookup + fetch };
        let norm = |v: f64| Some(profile.normalize_rtt(v));
        rec.dns_handshake_ms = Some(t.dns_handshake_ms);
        rec.dns_query_ms = Some(t.dns_query_ms);
        rec.dns_lookup_ms = Some(lookup);
        rec.connect_ms = Some(t.connect_ms);
        rec.ttfrs_ms = Some(t.ttfrs_ms);
        rec.fetch_ms = Some(fetch);
        rec.plt_ms = Some(plt);
        rec.dns_handshake_rtt = norm(t.dns_handshake_ms);
        rec.dns_query_rtt = norm(t.dns_query_ms);
        rec.dns_lookup_rtt = norm(lookup);
        rec.connect_rtt = norm(t.connect_ms);
        rec.ttfrs_rtt = norm(t.ttfrs_ms);
        rec.fetch_rtt = norm(fetch);
        rec.plt_rtt = norm(plt);
        rec.early_data_used = t.early_data_used;
        rec.zero_rtt_accepted = t.zero_rtt_accepted;
        rec.retried_1rtt = t.retried_1rtt;
        rec.single_connection = t.single_connection;
        rec
    }

    pub fn combo(&self) -> ProtocolCombo {
        match self.coalesce_mode {
            Some(m) if self.coalesced => ProtocolCombo::coalesced(m),
            _ => ProtocolCombo::new(self.combo_dns, self.combo_web),
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("records always serialize")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::builtin_profiles;
    use proptest::prelude::*;

    fn fibre() -> AccessProfile {
        builtin_profiles().remove(0)
    }

    proptest! {
        #[test]
        fn plt_composition_holds(hs in 0.0..500.0f64, q in 0.0..500.0f64, ttfrs in 0.0..500.0f64,
                                 extra in 0.0..2000.0f64, render in 0.0..100.0f64) {
            let t = VisitTimings {
                dns_handshake_ms: hs,
                dns_query_ms: q,
                connect_ms: ttfrs / 2.0,
                ttfrs_ms: ttfrs,
                fetch_ms: ttfrs + extra,
                ..Default::default()
            };
            let rec = VisitRecord::new(ProtocolCombo::baseline(), &fibre(), "p", RequestEmission::default(), render, Ok(t));
            let (lookup, fetch, plt) = (rec.dns_lookup_ms.unwrap(), rec.fetch_ms.unwrap(), rec.plt_ms.unwrap());
            prop_assert_eq!(plt, lookup + fetch);
            prop_assert!(rec.ttfrs_ms.unwrap() <= fetch);
            // survives the JSONL round trip bit for bit
            let back: VisitRecord = serde_json::from_str(&rec.to_json_line()).unwrap();
            prop_assert_eq!(back.plt_ms.unwrap(), back.dns_lookup_ms.unwrap() + back.fetch_ms.unwrap());
        }
    }

    #[test]
    fn failed_visit_keeps_reason() {
        let rec = VisitRecord::new(
            ProtocolCombo::coalesced(CoalesceMode::Paper),
            &fibre(),
            "complex",
            RequestEmission::EarlyData,
            0.0,
            Err(VisitError::SettingsTimeout(10_000)),
        );
        assert!(rec.failed && rec.plt_ms.is_none());
        assert!(rec.fail_reason.unwrap().contains("SETTINGS"));
        let v: serde_json::Value = serde_json::from_str(
            &VisitRecord::new(
                ProtocolCombo::coalesced(CoalesceMode::Paper),
                &fibre(),
                "x",
                RequestEmission::EarlyData,
                0.0,
                Ok(VisitTimings::default()),
            )
            .to_json_line(),
        )
        .unwrap();
        assert_eq!(v["combo_dns"], "doq");
        assert_eq!(v["combo_web"], "h3_1rtt");
        assert_eq!(v["coalesce_mode"], "paper");
        assert_eq!(v["request_emission"], "early_data");
    }
}
