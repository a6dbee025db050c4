//! Experiment grids: profiles × pages × combos × repetitions, the JSONL
//! dataset, and the summary statistics over it.

pub mod stats;
mod summary;
mod testbed;

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use tracing::{info, warn};

pub use stats::{median, quantile, relative_increase, StatsError};
pub use summary::{
    read_records, summarize, summarize_records, FailedVisit, NumberedRecords, Summary, SummaryRow, CSV_HEADER,
};
pub use testbed::{loopback_zone, Testbed};

use crate::corpus::{self, PageClass};
use crate::emulink::StreamRelayOptions;
use crate::endpoint::{Alpn, ContentStore, ServerConfig, SettingsPolicy, DEFAULT_SERVER_NAME};
use crate::scenario::{self, AccessProfile};
use crate::visit::{Client, ClientSettings, ProtocolCombo, QueryType, RequestEmission, VisitError, VisitRecord};

#[derive(Debug, thiserror::Error)]
pub enum CampaignError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config: {0}")]
    Config(String),
    #[error("config JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Profile(#[from] scenario::ProfileError),
    #[error(transparent)]
    Corpus(#[from] corpus::CorpusError),
    #[error(transparent)]
    Endpoint(#[from] crate::endpoint::EndpointError),
    #[error(transparent)]
    Relay(#[from] crate::emulink::RelayError),
    #[error(transparent)]
    Visit(#[from] VisitError),
    #[error("CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("client runtime: {0}")]
    Runtime(#[source] std::io::Error),
}

fn default_repetitions() -> u32 {
    30
}

fn default_timeout_ms() -> u64 {
    10_000
}

fn default_true() -> bool {
    true
}

/// Campaign description, normally read from a JSON file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignConfig {
    /// Profile names, built-in or from `profile_file`.
    pub profiles: Vec<String>,
    #[serde(default)]
    pub profile_file: Option<PathBuf>,
    pub pages: Vec<String>,
    #[serde(default = "ProtocolCombo::standard_grid")]
    pub combos: Vec<ProtocolCombo>,
    #[serde(default = "default_repetitions")]
    pub repetitions: u32,
    #[serde(default)]
    pub seed: u64,
    /// JSONL dataset; the summary goes next to it as `.csv` and `.txt`.
    pub output: PathBuf,
    #[serde(default)]
    pub request_emission: RequestEmission,
    #[serde(default)]
    pub settings_policy: SettingsPolicy,
    /// Serve a corpus from disk instead of generating it in memory.
    #[serde(default)]
    pub corpus_root: Option<PathBuf>,
    #[serde(default)]
    pub render_cost_ms: f64,
    #[serde(default)]
    pub query_type: QueryType,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_true")]
    pub hold_first_flight: bool,
}

impl CampaignConfig {
    pub fn load(path: &Path) -> Result<Self, CampaignError> {
        let text = std::fs::read_to_string(path).map_err(|source| CampaignError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg: CampaignConfig = serde_json::from_str(&text)?;
        // relative paths are relative to the config file
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            Some(&mut cfg.output),
            cfg.profile_file.as_mut(),
            cfg.corpus_root.as_mut(),
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Checks invariants and puts the baseline combo first (adding it if
    /// absent).
    pub fn normalized(mut self) -> Result<Self, CampaignError> {
        if self.repetitions == 0 {
            return Err(CampaignError::Config("repetitions must be at least 1".into()));
        }
        if self.profiles.is_empty() || self.pages.is_empty() {
            return Err(CampaignError::Config("profiles and pages must not be empty".into()));
        }
        if self
            .combos
            .iter()
            .any(|c| c.is_coalesced() && c.dns != crate::visit::DnsProtocol::Doq)
        {
            return Err(CampaignError::Config("coalesced combos require doq".into()));
        }
        let baseline = ProtocolCombo::baseline();
        self.combos.retain(|c| *c != baseline);
        self.combos.insert(0, baseline);
        let mut seen = Vec::new();
        self.combos.retain(|c| {
            let fresh = !seen.contains(c);
            seen.push(*c);
            fresh
        });
        Ok(self)
    }

    pub fn resolve_profiles(&self) -> Result<Vec<AccessProfile>, CampaignError> {
        let extra = match &self.profile_file {
            Some(p) => scenario::load_profiles(p)?,
            None => Vec::new(),
        };
        Ok(self
            .profiles
            .iter()
            .map(|n| scenario::find_profile(n, &extra))
            .collect::<Result<_, _>>()?)
    }

    pub fn summary_paths(&self) -> (PathBuf, PathBuf) {
        (self.output.with_extension("csv"), self.output.with_extension("txt"))
    }
}

#[derive(Debug, Clone)]
pub struct CampaignOutcome {
    pub dataset: PathBuf,
    pub summary_csv: PathBuf,
    pub summary_table: PathBuf,
    pub records: usize,
    pub failures: usize,
    pub summary: Summary,
}

fn content_store(cfg: &CampaignConfig) -> Result<ContentStore, CampaignError> {
    if let Some(root) = &cfg.corpus_root {
        return Ok(ContentStore::from_dir(root)?);
    }
    let mut store = ContentStore::new();
    for (path, bytes, ct) in corpus::corpus_files(cfg.seed)? {
        store.insert(&path, bytes, &ct)?;
    }
    Ok(store)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CampaignError + '_ {
    move |source| CampaignError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Runs the whole grid. Per profile the testbed is started once; within a
/// repetition every page sees every combo back to back, baseline first.
/// 0-RTT visits are preceded by an unmeasured priming connection. Records
/// are appended and flushed one line at a time.
pub fn run_campaign(config: CampaignConfig) -> Result<CampaignOutcome, CampaignError> {
    let cfg = config.normalized()?;
    let profiles = cfg.resolve_profiles()?;
    for page in &cfg.pages {
        if cfg.corpus_root.is_none() && PageClass::from_id(page).is_none() {
            return Err(CampaignError::Config(format!("unknown page {page:?}")));
        }
    }
    if let Some(dir) = cfg.output.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut out = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&cfg.output)
        .map_err(io_err(&cfg.output))?;

    let mut server_config = ServerConfig::generate(&[DEFAULT_SERVER_NAME])?;
    server_config.settings_policy = cfg.settings_policy;
    let content = content_store(&cfg)?;
    let zone = loopback_zone(DEFAULT_SERVER_NAME)?;

    let rt = tokio::runtime::Builder::new_current_thread()
        .enable_all()
        .build()
        .map_err(CampaignError::Runtime)?;
    let mut settings = ClientSettings::new(server_config.certificate.ca_der.clone());
    settings.emission = cfg.request_emission;
    settings.query_type = cfg.query_type;
    settings.timeout = Duration::from_millis(cfg.timeout_ms);
    let client = rt.block_on(async { Client::new(settings) })?;

    let mut written = 0usize;
    for profile in &profiles {
        let testbed = Testbed::start(
            profile,
            server_config.clone(),
            zone.clone(),
            content.clone(),
            StreamRelayOptions {
                hold_first_flight: cfg.hold_first_flight,
            },
        )?;
        let targets = testbed.targets();
        info!(profile = %profile.name, rtt_ms = profile.rtt_ms, "testbed up");
        let result = rt.block_on(async {
            for rep in 0..cfg.repetitions {
                for page in &cfg.pages {
                    for combo in &cfg.combos {
                        let outcome = async {
                            if combo.needs_ticket() {
                                client.prime(Alpn::H3, targets.prime).await?;
                            }
                            client.visit(*combo, page, &targets).await
                        }
                        .await;
                        if let Err(e) = &outcome {
                            warn!(profile = %profile.name, page, combo = %combo, rep, "visit failed: {e}");
                        }
                        let rec =
                            VisitRecord::new(*combo, profile, page, cfg.request_emission, cfg.render_cost_ms, outcome);
                        writeln!(out, "{}", rec.to_json_line())
                            .and_then(|_| out.flush())
                            .map_err(io_err(&cfg.output))?;
                        written += 1;
                    }
                }
                info!(profile = %profile.name, rep = rep + 1, of = cfg.repetitions, "repetition done");
            }
            Ok::<_, CampaignError>(())
        });
        testbed.shutdown();
        result?;
    }
    drop(client);
    drop(out);

    let summary = summarize(&cfg.output)?;
    let (csv_path, table_path) = cfg.summary_paths();
    write_summary(&summary, &csv_path, &table_path)?;
    Ok(CampaignOutcome {
        dataset: cfg.output.clone(),
        summary_csv: csv_path,
        summary_table: table_path,
        records: written,
        failures: summary.failures.len(),
        summary,
    })
}

pub fn write_summary(summary: &Summary, csv_path: &Path, table_path: &Path) -> Result<(), CampaignError> {
    let csv = summary.to_csv()?;
    File::create(csv_path)
        .and_then(|mut f| f.write_all(&csv))
        .map_err(io_err(csv_path))?;
    std::fs::write(table_path, summary.to_table()).map_err(io_err(table_path))?;
    Ok(())
}
