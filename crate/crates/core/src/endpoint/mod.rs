//! The combined server: an authoritative zone and a static content store
//! behind DoUDP, DoH, DoQ, HTTP/3 and the coalesced `doq-h3` ALPN.

mod doh;
mod doudp;
mod quic;
mod store;
pub mod tls;

use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use tracing::info;

use crate::h3lite::{ALPN_DOQ, ALPN_DOQ_H3, ALPN_H3};
pub use doh::DNS_MESSAGE;
pub use store::{content_type_for, ContentItem, ContentStore, ZoneEntry, ZoneStore};
pub use tls::{CertBundle, TicketKeyring, DEFAULT_SERVER_NAME};

#[derive(Debug, thiserror::Error)]
pub enum EndpointError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("binding {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        #[source]
        source: std::io::Error,
    },
    #[error("zone line {line}: {reason}")]
    Zone { line: usize, reason: String },
    #[error("content path must be absolute: {0}")]
    ContentPath(String),
    #[error(transparent)]
    Dns(#[from] crate::dnswire::DnsError),
    #[error("certificate generation: {0}")]
    Cert(#[from] rcgen::Error),
    #[error("TLS configuration: {0}")]
    Tls(#[from] rustls::Error),
    #[error("QUIC crypto configuration: {0}")]
    QuicCrypto(String),
    #[error("PEM: {0}")]
    Pem(String),
    #[error("runtime: {0}")]
    Runtime(#[source] std::io::Error),
    #[error("no ALPN configured")]
    NoAlpn,
}

/// The three QUIC application protocols served on the one QUIC port.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Alpn {
    Doq,
    H3,
    DoqH3,
}

impl Alpn {
    pub fn wire(self) -> &'static [u8] {
        match self {
            Alpn::Doq => ALPN_DOQ,
            Alpn::H3 => ALPN_H3,
            Alpn::DoqH3 => ALPN_DOQ_H3,
        }
    }

    pub fn from_wire(b: &[u8]) -> Option<Self> {
        [Alpn::Doq, Alpn::H3, Alpn::DoqH3].into_iter().find(|a| a.wire() == b)
    }
}

/// When the server opens its control stream on a `doq-h3` connection.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SettingsPolicy {
    /// Only after the client's control stream has arrived.
    #[default]
    Deferred,
    /// At connection establishment.
    Immediate,
}

impl std::str::FromStr for SettingsPolicy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "deferred" => Ok(Self::Deferred),
            "immediate" => Ok(Self::Immediate),
            other => Err(format!("unknown settings policy {other:?}")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub certificate: CertBundle,
    pub ticket_keyring: TicketKeyring,
    pub alpns: Vec<Alpn>,
    /// Answer unvalidated Initials with Retry. Off for every measurement.
    pub retry_validation: bool,
    pub early_data: bool,
    pub settings_policy: SettingsPolicy,
    /// Reset `doq-h3` request streams that arrive before the client's
    /// SETTINGS.
    pub strict_settings: bool,
}

impl ServerConfig {
    /// Fresh certificate and keyring, all three ALPNs, no Retry, 0-RTT on.
    pub fn generate(server_names: &[&str]) -> Result<Self, EndpointError> {
        Ok(Self {
            certificate: CertBundle::generate(server_names)?,
            ticket_keyring: TicketKeyring::default(),
            alpns: vec![Alpn::Doq, Alpn::H3, Alpn::DoqH3],
            retry_validation: false,
            early_data: true,
            settings_policy: SettingsPolicy::Deferred,
            strict_settings: false,
        })
    }
}

/// Where each listener should bind. Port 0 picks a free port.
#[derive(Debug, Clone, Copy)]
pub struct ListenAddrs {
    pub udp: SocketAddr,
    pub tls: SocketAddr,
    pub quic: SocketAddr,
}

impl Default for ListenAddrs {
    fn default() -> Self {
        let any: SocketAddr = "127.0.0.1:0".parse().unwrap();
        Self {
            udp: any,
            tls: any,
            quic: any,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum EventKind {
    /// First flight seen; `validated` is true when the client presented an
    /// address-validation token.
    Incoming {
        remote: SocketAddr,
        validated: bool,
    },
    Retry {
        remote: SocketAddr,
    },
    Accepted {
        alpn: Option<Alpn>,
    },
    HandshakeDone,
    /// A DNS query; `early` when it arrived in 0-RTT.
    DnsQuery {
        transport: &'static str,
        early: bool,
    },
    /// An HTTP/3 request; `early` when it arrived in 0-RTT.
    Request {
        path: String,
        early: bool,
    },
    ClientSettings,
    ServerSettingsSent,
    StreamReset {
        code: u64,
    },
}

#[derive(Debug, Clone, Serialize)]
pub struct ServerEvent {
    pub at_us: u64,
    pub conn: u64,
    #[serde(flatten)]
    pub kind: EventKind,
}

/// Transport-level event log, used by tests and the acceptance harness to
/// observe Retry, 0-RTT and stream ordering from the server side.
#[derive(Debug, Clone)]
pub struct EventLog {
    epoch: Instant,
    events: Arc<Mutex<Vec<ServerEvent>>>,
}

impl Default for EventLog {
    fn default() -> Self {
        Self {
            epoch: Instant::now(),
            events: Arc::default(),
        }
    }
}

impl EventLog {
    pub(crate) fn push(&self, conn: u64, kind: EventKind) {
        let at_us = self.epoch.elapsed().as_micros() as u64;
        self.events.lock().unwrap().push(ServerEvent { at_us, conn, kind });
    }

    pub fn snapshot(&self) -> Vec<ServerEvent> {
        self.events.lock().unwrap().clone()
    }

    pub fn clear(&self) {
        self.events.lock().unwrap().clear();
    }
}

pub(crate) struct Shared {
    pub zone: ZoneStore,
    pub content: ContentStore,
    pub config: ServerConfig,
    pub events: EventLog,
}

/// A running server. Owns its own runtime so it can be driven from
/// synchronous code and from another runtime alike.
pub struct Server {
    runtime: Option<tokio::runtime::Runtime>,
    udp: SocketAddr,
    tls: SocketAddr,
    quic: SocketAddr,
    shared: Arc<Shared>,
    quic_endpoint: quinn::Endpoint,
}

impl Server {
    pub fn start(
        zone: ZoneStore,
        content: ContentStore,
        config: ServerConfig,
        addrs: ListenAddrs,
    ) -> Result<Self, EndpointError> {
        if config.alpns.is_empty() {
            return Err(EndpointError::NoAlpn);
        }
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .thread_name("endpoint")
            .enable_all()
            .build()
            .map_err(EndpointError::Runtime)?;
        let shared = Arc::new(Shared {
            zone,
            content,
            config,
            events: EventLog::default(),
        });
        let (udp, tls, quic, quic_endpoint) = runtime.block_on(async {
            let udp = doudp::spawn(addrs.udp, shared.clone()).await?;
            let tls = doh::spawn(addrs.tls, shared.clone()).await?;
            let (quic, ep) = quic::spawn(addrs.quic, shared.clone())?;
            Ok::<_, EndpointError>((udp, tls, quic, ep))
        })?;
        info!(%udp, %tls, %quic, "endpoint serving");
        Ok(Self {
            runtime: Some(runtime),
            udp,
            tls,
            quic,
            shared,
            quic_endpoint,
        })
    }

    pub fn udp_addr(&self) -> SocketAddr {
        self.udp
    }

    pub fn tls_addr(&self) -> SocketAddr {
        self.tls
    }

    pub fn quic_addr(&self) -> SocketAddr {
        self.quic
    }

    pub fn certificate(&self) -> &CertBundle {
        &self.shared.config.certificate
    }

    pub fn config(&self) -> &ServerConfig {
        &self.shared.config
    }

    pub fn events(&self) -> &EventLog {
        &self.shared.events
    }

    /// Blocks the calling thread until Ctrl-C.
    pub fn run_until_ctrl_c(&self) {
        if let Some(rt) = &self.runtime {
            rt.block_on(async {
                let _ = tokio::signal::ctrl_c().await;
            });
        }
    }

    pub fn shutdown(&mut self) {
        self.quic_endpoint.close(0u32.into(), b"shutdown");
        if let Some(rt) = self.runtime.take() {
            rt.shutdown_background();
        }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        self.shutdown();
    }
}
