use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use serde::Serialize;
use tracing::warn;

use super::stats::{median, quantile, relative_increase};
use super::CampaignError;
use crate::visit::{ProtocolCombo, VisitRecord};

/// One (profile, page, combo) cell, over page-load time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub profile: String,
    pub page: String,
    pub combo: String,
    pub n: usize,
    pub median_ms: f64,
    pub q1_ms: f64,
    pub q3_ms: f64,
    pub iqr_ms: f64,
    pub median_rtt_multiple: f64,
    /// `None` when the baseline cell has no successful visits.
    pub rel_increase: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FailedVisit {
    pub line: usize,
    pub profile: String,
    pub page: String,
    pub combo: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub rows: Vec<SummaryRow>,
    pub failures: Vec<FailedVisit>,
    /// (line number, parse error) of lines that were skipped.
    pub malformed: Vec<(usize, String)>,
    pub records: usize,
}

pub const CSV_HEADER: [&str; 10] = [
    "profile",
    "page",
    "combo",
    "n",
    "median_ms",
    "q1_ms",
    "q3_ms",
    "iqr_ms",
    "median_rtt_multiple",
    "rel_increase",
];

/// (line number, record) pairs.
pub type NumberedRecords = Vec<(usize, VisitRecord)>;

/// Reads a JSONL dataset. Lines that do not parse are reported and
/// skipped as (line number, error).
pub fn read_records(input: impl Read) -> Result<(NumberedRecords, Vec<(usize, String)>), CampaignError> {
    let mut records = Vec::new();
    let mut malformed = Vec::new();
    for (i, line) in BufReader::new(input).lines().enumerate() {
        let line = line.map_err(|source| CampaignError::Io {
            path: "<dataset>".into(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<VisitRecord>(&line) {
            Ok(r) => records.push((i + 1, r)),
            Err(e) => {
                warn!(line = i + 1, "skipping malformed record: {e}");
                malformed.push((i + 1, e.to_string()));
            }
        }
    }
    Ok((records, malformed))
}

type Key = (String, String, String);

/// Groups PLTs per cell in first-appearance order and computes the
/// quartiles and the increase over the baseline combo of the same
/// (profile, page).
pub fn summarize_records(records: &[(usize, VisitRecord)]) -> Summary {
    let mut order: Vec<Key> = Vec::new();
    let mut cells: HashMap<Key, (Vec<f64>, Vec<f64>)> = HashMap::new();
    let mut failures = Vec::new();
    for (line, r) in records {
        let key = (r.profile.clone(), r.page.clone(), r.combo().label());
        if !cells.contains_key(&key) {
            order.push(key.clone());
            cells.insert(key.clone(), (Vec::new(), Vec::new()));
        }
        match (r.failed, r.plt_ms, r.plt_rtt) {
            (false, Some(ms), Some(rtt)) => {
                let cell = cells.get_mut(&key).unwrap();
                cell.0.push(ms);
                cell.1.push(rtt);
            }
            _ => failures.push(FailedVisit {
                line: *line,
                profile: key.0,
                page: key.1,
                combo: key.2,
                reason: r.fail_reason.clone().unwrap_or_else(|| "missing durations".into()),
            }),
        }
    }
    let baseline = ProtocolCombo::baseline().label();
    let medians: HashMap<&Key, f64> = cells
        .iter()
        .filter_map(|(k, (ms, _))| median(ms).ok().map(|m| (k, m)))
        .collect();
    let rows = order
        .iter()
        .filter_map(|key| {
            let (ms, rtt) = &cells[key];
            let m = median(ms).ok()?;
            let q1 = quantile(ms, 0.25).ok()?;
            let q3 = quantile(ms, 0.75).ok()?;
            let base_key = (key.0.clone(), key.1.clone(), baseline.clone());
            let rel = medians.get(&base_key).and_then(|b| relative_increase(m, *b).ok());
            Some(SummaryRow {
                profile: key.0.clone(),
                page: key.1.clone(),
                combo: key.2.clone(),
                n: ms.len(),
                median_ms: m,
                q1_ms: q1,
                q3_ms: q3,
                iqr_ms: q3 - q1,
                median_rtt_multiple: median(rtt).ok()?,
                rel_increase: rel,
            })
        })
        .collect();
    Summary {
        rows,
        failures,
        malformed: Vec::new(),
        records: records.len(),
    }
}

pub fn summarize(jsonl: &Path) -> Result<Summary, CampaignError> {
    let file = std::fs::File::open(jsonl).map_err(|source| CampaignError::Io {
        path: jsonl.to_path_buf(),
        source,
    })?;
    let (records, malformed) = read_records(file)?;
    let mut summary = summarize_records(&records);
    summary.malformed = malformed;
    Ok(summary)
}

impl Summary {
    /// CSV with fixed precision so the bytes are reproducible.
    pub fn to_csv(&self) -> Result<Vec<u8>, CampaignError> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        w.write_record(CSV_HEADER)?;
        for r in &self.rows {
            w.write_record([
                r.profile.clone(),
                r.page.clone(),
                r.combo.clone(),
                r.n.to_string(),
                format!("{:.3}", r.median_ms),
                format!("{:.3}", r.q1_ms),
                format!("{:.3}", r.q3_ms),
                format!("{:.3}", r.iqr_ms),
                format!("{:.4}", r.median_rtt_multiple),
                r.rel_increase.map(|v| format!("{v:.6}")).unwrap_or_default(),
            ])?;
        }
        w.into_inner().map_err(|e| CampaignError::Csv(e.into_error().into()))
    }

    /// Plain-text table grouped page → profile → combo, with a footer that
    /// lists failed visits and skipped lines.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let mut pages: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !pages.contains(&r.page.as_str()) {
                pages.push(&r.page);
            }
        }
        for page in pages {
            let _ = writeln!(out, "== {page} ==");
            let mut profiles: Vec<&str> = Vec::new();
            for r in self.rows.iter().filter(|r| r.page == page) {
                if !profiles.contains(&r.profile.as_str()) {
                    profiles.push(&r.profile);
                }
            }
            for profile in profiles {
                let _ = writeln!(out, "  {profile}");
                let _ = writeln!(
                    out,
                    "    {:<26} {:>4} {:>11} {:>10} {:>7} {:>8}",
                    "combo", "n", "median_ms", "iqr_ms", "xRTT", "vs_base"
                );
                for r in self.rows.iter().filter(|r| r.page == page && r.profile == profile) {
                    let rel = r
                        .rel_increase
                        .map(|v| format!("{:+.1}%", v * 100.0))
                        .unwrap_or_else(|| "-".into());
                    let _ = writeln!(
                        out,
                        "    {:<26} {:>4} {:>11.1} {:>10.1} {:>7.2} {:>8}",
                        r.combo, r.n, r.median_ms, r.iqr_ms, r.median_rtt_multiple, rel
                    );
                }
            }
        }
        let _ = writeln!(
            out,
            "\n{} records, {} failed, {} malformed lines",
            self.records,
            self.failures.len(),
            self.malformed.len()
        );
        for f in &self.failures {
            let _ = writeln!(
                out,
                "  failed line {}: {}/{}/{}: {}",
                f.line, f.profile, f.page, f.combo, f.reason
            );
        }
        for (line, e) in &self.malformed {
            let _ = writeln!(out, "  malformed line {line}: {e}");
        }
        out
    }

    pub fn row(&self, profile: &str, page: &str, combo: &str) -> Option<&SummaryRow> {
        self.rows
            .iter()
            .find(|r| r.profile == profile && r.page == page && r.combo == combo)
    }
}
