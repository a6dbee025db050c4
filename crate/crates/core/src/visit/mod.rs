//! The measurement client: one page visit per call, over a chosen DNS
//! transport and HTTP/3 handshake mode, or over a single coalesced
//! `doq-h3` connection.

mod client;
mod record;
mod tickets;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use client::{Client, ClientSettings, FetchTimings, QueryType, Resolution, Targets};
pub use record::{VisitRecord, VisitTimings, SCHEMA_VERSION};
pub use tickets::TicketCache;

#[derive(Debug, thiserror::Error)]
pub enum VisitError {
    #[error("timed out after {0} ms")]
    Timeout(u64),
    #[error("socket: {0}")]
    Io(#[from] std::io::Error),
    #[error("connect: {0}")]
    Connect(#[from] quinn::ConnectError),
    #[error("connection: {0}")]
    Connection(#[from] quinn::ConnectionError),
    #[error("stream write: {0}")]
    Write(#[from] quinn::WriteError),
    #[error("stream read: {0}")]
    Read(#[from] quinn::ReadToEndError),
    #[error("stream closed")]
    ClosedStream(#[from] quinn::ClosedStream),
    #[error("HTTP/2: {0}")]
    Http(#[from] hyper::Error),
    #[error("HTTP request: {0}")]
    HttpRequest(#[from] http::Error),
    #[error(transparent)]
    Dns(#[from] crate::dnswire::DnsError),
    #[error(transparent)]
    H3(#[from] crate::h3lite::H3Error),
    #[error(transparent)]
    Manifest(#[from] crate::corpus::CorpusError),
    #[error(transparent)]
    Endpoint(#[from] crate::endpoint::EndpointError),
    #[error("DNS answer has no addresses (rcode {0})")]
    NoAddress(u8),
    #[error("DNS response id {got} does not match query id {want}")]
    DnsId { want: u16, got: u16 },
    #[error("DoQ response length prefix is wrong")]
    DoqFraming,
    #[error("DoH status {0}")]
    DohStatus(u16),
    #[error("{path}: HTTP status {status}")]
    HttpStatus { path: String, status: u16 },
    #[error("{path}: got {got} bytes, manifest says {want}")]
    SizeMismatch { path: String, want: u64, got: u64 },
    #[error("no resumption ticket cached for {0}")]
    TicketMissing(String),
    #[error("priming did not yield a ticket and token within {0} ms")]
    PrimingTimeout(u64),
    #[error("server SETTINGS not received within {0} ms")]
    SettingsTimeout(u64),
    #[error("invalid combination: {0}")]
    InvalidCombo(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DnsProtocol {
    Doudp,
    Doh,
    Doq,
}

impl DnsProtocol {
    pub fn id(self) -> &'static str {
        match self {
            DnsProtocol::Doudp => "doudp",
            DnsProtocol::Doh => "doh",
            DnsProtocol::Doq => "doq",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum WebMode {
    #[serde(rename = "h3_1rtt")]
    H3OneRtt,
    #[serde(rename = "h3_0rtt")]
    H3ZeroRtt,
}

impl WebMode {
    pub fn id(self) -> &'static str {
        match self {
            WebMode::H3OneRtt => "h3_1rtt",
            WebMode::H3ZeroRtt => "h3_0rtt",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoalesceMode {
    /// Client opens its control stream after the DNS answer and waits for
    /// the server's SETTINGS before the first GET.
    Paper,
    /// Control streams go out at handshake time; no wait.
    Optimized,
}

impl CoalesceMode {
    pub fn id(self) -> &'static str {
        match self {
            CoalesceMode::Paper => "paper",
            CoalesceMode::Optimized => "optimized",
        }
    }
}

/// When a 0-RTT visit writes its index request.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestEmission {
    /// After the handshake completes.
    #[default]
    AfterHandshake,
    /// In the first flight, as early data.
    EarlyData,
}

impl RequestEmission {
    pub fn id(self) -> &'static str {
        match self {
            RequestEmission::AfterHandshake => "after_handshake",
            RequestEmission::EarlyData => "early_data",
        }
    }
}

impl FromStr for RequestEmission {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "after_handshake" => Ok(Self::AfterHandshake),
            "early_data" => Ok(Self::EarlyData),
            other => Err(format!("unknown request emission {other:?}")),
        }
    }
}

/// One cell of the experiment grid. Labels look like `doq+h3_0rtt` or
/// `doq+coalesced_paper`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ProtocolCombo {
    pub dns: DnsProtocol,
    pub web: WebMode,
    pub coalesce_mode: Option<CoalesceMode>,
}

impl ProtocolCombo {
    pub const fn new(dns: DnsProtocol, web: WebMode) -> Self {
        Self {
            dns,
            web,
            coalesce_mode: None,
        }
    }

    /// The single-connection `doq-h3` visit. The web leg is a fresh
    /// handshake, so it is labelled 1-RTT.
    pub const fn coalesced(mode: CoalesceMode) -> Self {
        Self {
            dns: DnsProtocol::Doq,
            web: WebMode::H3OneRtt,
            coalesce_mode: Some(mode),
        }
    }

    pub const fn baseline() -> Self {
        Self::new(DnsProtocol::Doudp, WebMode::H3OneRtt)
    }

    pub fn is_coalesced(&self) -> bool {
        self.coalesce_mode.is_some()
    }

    pub fn is_baseline(&self) -> bool {
        *self == Self::baseline()
    }

    pub fn needs_ticket(&self) -> bool {
        !self.is_coalesced() && self.web == WebMode::H3ZeroRtt
    }

    pub fn label(&self) -> String {
        match self.coalesce_mode {
            Some(m) => format!("{}+coalesced_{}", self.dns.id(), m.id()),
            None => format!("{}+{}", self.dns.id(), self.web.id()),
        }
    }

    /// The six combos of the standard grid, baseline first.
    pub fn standard_grid() -> Vec<Self> {
        use DnsProtocol::*;
        use WebMode::*;
        vec![
            Self::new(Doudp, H3OneRtt),
            Self::new(Doh, H3OneRtt),
            Self::new(Doq, H3OneRtt),
            Self::new(Doq, H3ZeroRtt),
            Self::coalesced(CoalesceMode::Paper),
            Self::coalesced(CoalesceMode::Optimized),
        ]
    }
}

impl fmt::Display for ProtocolCombo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for ProtocolCombo {
    type Err = VisitError;
    fn from_str(s: &str) -> Result<Self, VisitError> {
        let bad = || VisitError::InvalidCombo(s.to_string());
        let (dns, web) = s.split_once('+').ok_or_else(bad)?;
        let dns = match dns {
            "doudp" => DnsProtocol::Doudp,
            "doh" => DnsProtocol::Doh,
            "doq" => DnsProtocol::Doq,
            _ => return Err(bad()),
        };
        let combo = match web {
            "h3_1rtt" => Self::new(dns, WebMode::H3OneRtt),
            "h3_0rtt" => Self::new(dns, WebMode::H3ZeroRtt),
            "coalesced" | "coalesced_paper" => Self::coalesced(CoalesceMode::Paper),
            "coalesced_optimized" => Self::coalesced(CoalesceMode::Optimized),
            _ => return Err(bad()),
        };
        if combo.is_coalesced() && dns != DnsProtocol::Doq {
            return Err(VisitError::InvalidCombo(format!("{s}: coalescing requires doq")));
        }
        Ok(combo)
    }
}

impl TryFrom<String> for ProtocolCombo {
    type Error = VisitError;
    fn try_from(s: String) -> Result<Self, VisitError> {
        s.parse()
    }
}

impl From<ProtocolCombo> for String {
    fn from(c: ProtocolCombo) -> String {
        c.label()
    }
}
