use std::collections::HashMap;
use std::future::Future;
use std::net::{IpAddr, SocketAddr};
use std::sync::Arc;
use std::time::{Duration, Instant};

use bytes::Bytes;
use http::{header, Request};
use http_body_util::{BodyExt, Full};
use hyper_util::rt::{TokioExecutor, TokioIo};
use quinn::crypto::rustls::QuicClientConfig;
use quinn::{Connection, RecvStream, VarInt};
use rustls::pki_types::{CertificateDer, ServerName};
use serde::{Deserialize, Serialize};
use tokio::net::{TcpStream, UdpSocket};
use tokio::sync::watch;
use tokio::task::JoinSet;
use tokio_rustls::TlsConnector;
use tracing::debug;

use super::{
    CoalesceMode, DnsProtocol, ProtocolCombo, RequestEmission, TicketCache, VisitError, VisitTimings, WebMode,
};
use crate::corpus::{self, PageManifest};
use crate::dnswire::{self, TYPE_A, TYPE_AAAA};
use crate::endpoint::{tls, Alpn};
use crate::h3lite::{self, frame, varint, FrameParser, StreamKind, TAG_DNS, TAG_REQUEST};

const H3_NO_ERROR: u32 = 0x100;
const MAX_RESPONSE: usize = 16 * 1024 * 1024;
const MAX_DNS: usize = 2 + 65535;

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1000.0
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryType {
    #[default]
    A,
    Aaaa,
    /// A then AAAA, sequentially over the same transport.
    Both,
}

impl QueryType {
    fn qtypes(self) -> &'static [u16] {
        match self {
            QueryType::A => &[TYPE_A],
            QueryType::Aaaa => &[TYPE_AAAA],
            QueryType::Both => &[TYPE_A, TYPE_AAAA],
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClientSettings {
    /// CA that signed the server certificate.
    pub ca: CertificateDer<'static>,
    /// SNI, `:authority` and the name that is resolved.
    pub server_name: String,
    pub query_type: QueryType,
    pub emission: RequestEmission,
    pub timeout: Duration,
    /// How long priming waits for a ticket and a NEW_TOKEN.
    pub prime_timeout: Duration,
    pub settings_timeout: Duration,
}

impl ClientSettings {
    pub fn new(ca: CertificateDer<'static>) -> Self {
        Self {
            ca,
            server_name: tls::DEFAULT_SERVER_NAME.to_string(),
            query_type: QueryType::A,
            emission: RequestEmission::AfterHandshake,
            timeout: Duration::from_secs(10),
            prime_timeout: Duration::from_secs(3),
            settings_timeout: Duration::from_secs(5),
        }
    }
}

/// Where the client sends each kind of traffic, normally the relays.
#[derive(Debug, Clone, Copy)]
pub struct Targets {
    pub doudp: SocketAddr,
    pub doh: SocketAddr,
    /// The QUIC resolver (DoQ and `doq-h3`). Web connections go to the
    /// resolved address on this port.
    pub quic: SocketAddr,
    /// Where priming connections go. Priming is not measured, so this is
    /// usually the server itself.
    pub prime: SocketAddr,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Resolution {
    pub addresses: Vec<IpAddr>,
    pub handshake_ms: f64,
    pub query_ms: f64,
}

impl Resolution {
    pub fn lookup_ms(&self) -> f64 {
        self.handshake_ms + self.query_ms
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FetchTimings {
    pub connect_ms: f64,
    pub ttfrs_ms: f64,
    pub fetch_ms: f64,
    pub early_data_used: bool,
    pub zero_rtt_accepted: Option<bool>,
    pub retried_1rtt: bool,
    pub manifest: PageManifest,
}

/// Measurement client. Must be created and used inside a tokio runtime.
pub struct Client {
    settings: ClientSettings,
    endpoint: quinn::Endpoint,
    tickets: Arc<TicketCache>,
    fresh: HashMap<Alpn, quinn::ClientConfig>,
    resuming: HashMap<Alpn, quinn::ClientConfig>,
    doh: TlsConnector,
    /// One stub-resolver socket for every DoUDP query.
    udp: UdpSocket,
}

impl Client {
    pub fn new(settings: ClientSettings) -> Result<Self, VisitError> {
        let endpoint = quinn::Endpoint::client(SocketAddr::from(([127, 0, 0, 1], 0)))?;
        let tickets = Arc::new(TicketCache::new());
        let quic = |crypto: rustls::ClientConfig| -> Result<quinn::ClientConfig, VisitError> {
            let crypto = QuicClientConfig::try_from(crypto)
                .map_err(|e| crate::endpoint::EndpointError::QuicCrypto(e.to_string()))?;
            let mut cfg = quinn::ClientConfig::new(Arc::new(crypto));
            // no path MTU probes: on slow uplinks a probe queues ahead of
            // the first request
            let mut transport = quinn::TransportConfig::default();
            transport.mtu_discovery_config(None);
            cfg.transport_config(Arc::new(transport));
            Ok(cfg)
        };
        let base = tls::client_crypto_base(&settings.ca)?;
        let mut fresh = HashMap::new();
        let mut resuming = HashMap::new();
        for alpn in [Alpn::Doq, Alpn::H3, Alpn::DoqH3] {
            let mut cfg = quic(tls::client_crypto_fresh(&base, &[alpn.wire()]))?;
            cfg.token_store(Arc::new(quinn::NoneTokenStore));
            fresh.insert(alpn, cfg);
            let mut cfg = quic(tls::client_crypto_resuming(&base, &[alpn.wire()], tickets.clone()))?;
            cfg.token_store(tickets.clone());
            resuming.insert(alpn, cfg);
        }
        let doh = TlsConnector::from(Arc::new(tls::client_crypto_fresh(&base, &[b"h2"])));
        let udp = std::net::UdpSocket::bind(SocketAddr::from(([127, 0, 0, 1], 0)))?;
        udp.set_nonblocking(true)?;
        let udp = UdpSocket::from_std(udp)?;
        Ok(Self {
            settings,
            endpoint,
            tickets,
            fresh,
            resuming,
            doh,
            udp,
        })
    }

    pub fn settings(&self) -> &ClientSettings {
        &self.settings
    }

    pub fn tickets(&self) -> &Arc<TicketCache> {
        &self.tickets
    }

    async fn within<T>(&self, fut: impl Future<Output = Result<T, VisitError>>) -> Result<T, VisitError> {
        let limit = self.settings.timeout;
        tokio::time::timeout(limit, fut)
            .await
            .map_err(|_| VisitError::Timeout(limit.as_millis() as u64))?
    }

    /// One measured page visit. Coalesced combos take the single-connection
    /// path; 0-RTT combos expect [`Client::prime`] to have run.
    pub async fn visit(&self, combo: ProtocolCombo, page: &str, targets: &Targets) -> Result<VisitTimings, VisitError> {
        if let Some(mode) = combo.coalesce_mode {
            if combo.dns != DnsProtocol::Doq {
                return Err(VisitError::InvalidCombo(combo.label()));
            }
            return self.visit_coalesced(mode, page, targets).await;
        }
        self.within(async {
            let res = self.resolve_inner(combo.dns, targets).await?;
            let ip = res.addresses[0];
            let addr = SocketAddr::new(ip, targets.quic.port());
            let fetch = self.fetch_inner(addr, page, combo.web).await?;
            Ok(VisitTimings {
                dns_handshake_ms: res.handshake_ms,
                dns_query_ms: res.query_ms,
                connect_ms: fetch.connect_ms,
                ttfrs_ms: fetch.ttfrs_ms,
                fetch_ms: fetch.fetch_ms,
                early_data_used: fetch.early_data_used,
                zero_rtt_accepted: fetch.zero_rtt_accepted,
                retried_1rtt: fetch.retried_1rtt,
                single_connection: false,
            })
        })
        .await
    }

    /// Resolves the configured server name.
    pub async fn resolve(&self, proto: DnsProtocol, targets: &Targets) -> Result<Resolution, VisitError> {
        self.within(self.resolve_inner(proto, targets)).await
    }

    async fn resolve_inner(&self, proto: DnsProtocol, targets: &Targets) -> Result<Resolution, VisitError> {
        let res = match proto {
            DnsProtocol::Doudp => self.resolve_udp(targets.doudp).await?,
            DnsProtocol::Doq => self.resolve_doq(targets.quic).await?,
            DnsProtocol::Doh => self.resolve_doh(targets.doh).await?,
        };
        debug!(?proto, handshake = res.handshake_ms, query = res.query_ms, "resolved");
        Ok(res)
    }

    fn queries(&self, id: u16) -> Result<Vec<dnswire::DnsMessage>, VisitError> {
        self.settings
            .query_type
            .qtypes()
            .iter()
            .map(|&t| dnswire::make_query(&self.settings.server_name, t, id).map_err(VisitError::from))
            .collect()
    }

    fn collect_answer(msg: &dnswire::DnsMessage, out: &mut Vec<IpAddr>) {
        out.extend(msg.addresses());
    }

    fn finish_resolution(
        addresses: Vec<IpAddr>,
        last_rcode: u8,
        handshake_ms: f64,
        query_ms: f64,
    ) -> Result<Resolution, VisitError> {
        if addresses.is_empty() {
            return Err(VisitError::NoAddress(last_rcode));
        }
        Ok(Resolution {
            addresses,
            handshake_ms,
            query_ms,
        })
    }

    async fn resolve_udp(&self, target: SocketAddr) -> Result<Resolution, VisitError> {
        let socket = &self.udp;
        let mut buf = vec![0u8; 4096];
        let mut addresses = Vec::new();
        let mut rcode = 0;
        let start = Instant::now();
        for query in self.queries(rand::random())? {
            socket.send_to(&dnswire::encode(&query)?, target).await?;
            let resp = loop {
                let (n, from) = socket.recv_from(&mut buf).await?;
                // late answers to earlier queries are ignored
                match dnswire::decode(&buf[..n]) {
                    Ok(m) if from == target && m.id == query.id && m.flags.qr => break m,
                    _ => continue,
                }
            };
            rcode = resp.flags.rcode;
            Self::collect_answer(&resp, &mut addresses);
        }
        Self::finish_resolution(addresses, rcode, 0.0, ms(start.elapsed()))
    }

    async fn resolve_doq(&self, target: SocketAddr) -> Result<Resolution, VisitError> {
        let start = Instant::now();
        let conn = self
            .endpoint
            .connect_with(self.fresh[&Alpn::Doq].clone(), target, &self.settings.server_name)?
            .await?;
        let handshake = start.elapsed();
        let mut addresses = Vec::new();
        let mut rcode = 0;
        for query in self.queries(0)? {
            let resp = doq_exchange(&conn, None, &query).await?;
            rcode = resp.flags.rcode;
            Self::collect_answer(&resp, &mut addresses);
        }
        let query = start.elapsed() - handshake;
        conn.close(VarInt::from_u32(0), b"");
        Self::finish_resolution(addresses, rcode, ms(handshake), ms(query))
    }

    async fn resolve_doh(&self, target: SocketAddr) -> Result<Resolution, VisitError> {
        let start = Instant::now();
        let tcp = TcpStream::connect(target).await?;
        tcp.set_nodelay(true)?;
        let name = ServerName::try_from(self.settings.server_name.clone())
            .map_err(|e| VisitError::Io(std::io::Error::new(std::io::ErrorKind::InvalidInput, e)))?;
        let tls = self.doh.connect(name, tcp).await?;
        let handshake = start.elapsed();
        let (mut sender, conn) = hyper::client::conn::http2::handshake(TokioExecutor::new(), TokioIo::new(tls)).await?;
        let driver = tokio::spawn(async move {
            if let Err(e) = conn.await {
                debug!("doh client connection: {e}");
            }
        });
        let mut addresses = Vec::new();
        let mut rcode = 0;
        let uri = format!("https://{}/dns-query", self.settings.server_name);
        for query in self.queries(0)? {
            let req = Request::post(uri.as_str())
                .header(header::CONTENT_TYPE, crate::endpoint::DNS_MESSAGE)
                .header(header::ACCEPT, crate::endpoint::DNS_MESSAGE)
                .body(Full::new(Bytes::from(dnswire::encode(&query)?)))?;
            let resp = sender.send_request(req).await?;
            if resp.status() != http::StatusCode::OK {
                driver.abort();
                return Err(VisitError::DohStatus(resp.status().as_u16()));
            }
            let body = resp.into_body().collect().await?.to_bytes();
            let msg = dnswire::decode(&body)?;
            rcode = msg.flags.rcode;
            Self::collect_answer(&msg, &mut addresses);
        }
        let query = start.elapsed() - handshake;
        driver.abort();
        Self::finish_resolution(addresses, rcode, ms(handshake), ms(query))
    }

    /// Fetches a page over HTTP/3 from `addr`.
    pub async fn fetch_h3(&self, addr: SocketAddr, page: &str, mode: WebMode) -> Result<FetchTimings, VisitError> {
        self.within(self.fetch_inner(addr, page, mode)).await
    }

    async fn fetch_inner(&self, addr: SocketAddr, page: &str, mode: WebMode) -> Result<FetchTimings, VisitError> {
        let name = &self.settings.server_name;
        let index = corpus::index_path(page);
        let start = Instant::now();
        match mode {
            WebMode::H3OneRtt => {
                let conn = self
                    .endpoint
                    .connect_with(self.fresh[&Alpn::H3].clone(), addr, name)?
                    .await?;
                let connect = start.elapsed();
                let _control = open_control(&conn).await?;
                spawn_uni_reader(&conn);
                let (ttfrs, index_resp) = request(&conn, None, name, &index, start).await?;
                let (manifest, fetch) = fetch_assets(&conn, None, name, index_resp, start).await?;
                conn.close(VarInt::from_u32(H3_NO_ERROR), b"");
                Ok(FetchTimings {
                    connect_ms: ms(connect),
                    ttfrs_ms: ms(ttfrs),
                    fetch_ms: ms(fetch),
                    early_data_used: false,
                    zero_rtt_accepted: None,
                    retried_1rtt: false,
                    manifest,
                })
            }
            WebMode::H3ZeroRtt => {
                let connecting = self
                    .endpoint
                    .connect_with(self.resuming[&Alpn::H3].clone(), addr, name)?;
                let (conn, accepted) = connecting
                    .into_0rtt()
                    .map_err(|_| VisitError::TicketMissing(name.clone()))?;
                let (connect_tx, connect_rx) = tokio::sync::oneshot::channel();
                tokio::spawn(async move {
                    let ok = accepted.await;
                    let _ = connect_tx.send((ok, start.elapsed()));
                });
                match self.settings.emission {
                    RequestEmission::AfterHandshake => {
                        let (ok, connect) = connect_rx.await.map_err(|_| connection_lost())?;
                        let _control = open_control(&conn).await?;
                        spawn_uni_reader(&conn);
                        let (ttfrs, index_resp) = request(&conn, None, name, &index, start).await?;
                        let (manifest, fetch) = fetch_assets(&conn, None, name, index_resp, start).await?;
                        conn.close(VarInt::from_u32(H3_NO_ERROR), b"");
                        Ok(FetchTimings {
                            connect_ms: ms(connect),
                            ttfrs_ms: ms(ttfrs),
                            fetch_ms: ms(fetch),
                            early_data_used: false,
                            zero_rtt_accepted: Some(ok),
                            retried_1rtt: false,
                            manifest,
                        })
                    }
                    RequestEmission::EarlyData => {
                        let _control = open_control(&conn).await?;
                        spawn_uni_reader(&conn);
                        let first = request(&conn, None, name, &index, start).await;
                        let (ok, connect) = connect_rx.await.map_err(|_| connection_lost())?;
                        let (ttfrs, index_resp, retried) = if ok {
                            let (ttfrs, resp) = first?;
                            (ttfrs, resp, false)
                        } else {
                            // rejected early data: the connection carries on
                            // as 1-RTT and the request is sent again
                            drop(first);
                            let _control = open_control(&conn).await?;
                            let (ttfrs, resp) = request(&conn, None, name, &index, start).await?;
                            (ttfrs, resp, true)
                        };
                        let (manifest, fetch) = fetch_assets(&conn, None, name, index_resp, start).await?;
                        conn.close(VarInt::from_u32(H3_NO_ERROR), b"");
                        Ok(FetchTimings {
                            connect_ms: ms(connect),
                            ttfrs_ms: ms(ttfrs),
                            fetch_ms: ms(fetch),
                            early_data_used: ok && !retried,
                            zero_rtt_accepted: Some(ok),
                            retried_1rtt: retried,
                            manifest,
                        })
                    }
                }
            }
        }
    }

    /// Unmeasured connection that leaves a fresh ticket and address-
    /// validation token for `alpn` in the cache. Older ones are discarded.
    pub async fn prime(&self, alpn: Alpn, target: SocketAddr) -> Result<(), VisitError> {
        let name = &self.settings.server_name;
        self.tickets.clear();
        let conn = self
            .endpoint
            .connect_with(self.resuming[&alpn].clone(), target, name)?
            .await?;
        let limit = self.settings.prime_timeout;
        let ready = self.tickets.wait_ready(name, 1, limit).await;
        conn.close(VarInt::from_u32(H3_NO_ERROR), b"");
        if !ready {
            return Err(VisitError::PrimingTimeout(limit.as_millis() as u64));
        }
        Ok(())
    }

    /// The single-connection visit over `doq-h3`.
    pub async fn visit_coalesced(
        &self,
        mode: CoalesceMode,
        page: &str,
        targets: &Targets,
    ) -> Result<VisitTimings, VisitError> {
        self.within(self.coalesced_inner(mode, page, targets)).await
    }

    async fn coalesced_inner(
        &self,
        mode: CoalesceMode,
        page: &str,
        targets: &Targets,
    ) -> Result<VisitTimings, VisitError> {
        let name = &self.settings.server_name;
        let start = Instant::now();
        let conn = self
            .endpoint
            .connect_with(self.fresh[&Alpn::DoqH3].clone(), targets.quic, name)?
            .await?;
        let connect = start.elapsed();
        let mut settings = spawn_uni_reader(&conn);
        let mut control = match mode {
            CoalesceMode::Optimized => Some(open_control(&conn).await?),
            CoalesceMode::Paper => None,
        };

        let dns_start = Instant::now();
        let mut addresses = Vec::new();
        let mut rcode = 0;
        for query in self.queries(0)? {
            let resp = doq_exchange(&conn, Some(TAG_DNS), &query).await?;
            rcode = resp.flags.rcode;
            Self::collect_answer(&resp, &mut addresses);
        }
        let dns = dns_start.elapsed();
        if addresses.is_empty() {
            return Err(VisitError::NoAddress(rcode));
        }

        if control.is_none() {
            control = Some(open_control(&conn).await?);
            let limit = self.settings.settings_timeout;
            match tokio::time::timeout(limit, settings.wait_for(|seen| *seen)).await {
                Ok(Ok(_)) => {}
                Ok(Err(_)) => return Err(connection_lost()),
                Err(_) => return Err(VisitError::SettingsTimeout(limit.as_millis() as u64)),
            }
        }
        let index = corpus::index_path(page);
        let (ttfrs, index_resp) = request(&conn, Some(TAG_REQUEST), name, &index, start).await?;
        let (_, fetch) = fetch_assets(&conn, Some(TAG_REQUEST), name, index_resp, start).await?;
        conn.close(VarInt::from_u32(H3_NO_ERROR), b"");
        drop(control);
        Ok(VisitTimings {
            dns_handshake_ms: 0.0,
            dns_query_ms: ms(dns),
            connect_ms: ms(connect),
            ttfrs_ms: ms(ttfrs),
            fetch_ms: ms(fetch),
            early_data_used: false,
            zero_rtt_accepted: None,
            retried_1rtt: false,
            single_connection: true,
        })
    }
}

fn connection_lost() -> VisitError {
    VisitError::Connection(quinn::ConnectionError::LocallyClosed)
}

/// One DoQ query on its own stream, optionally behind a coalescing tag.
async fn doq_exchange(
    conn: &Connection,
    tag: Option<u8>,
    query: &dnswire::DnsMessage,
) -> Result<dnswire::DnsMessage, VisitError> {
    let wire = dnswire::encode(query)?;
    let mut out = Vec::with_capacity(wire.len() + 3);
    out.extend(tag);
    out.extend_from_slice(&(wire.len() as u16).to_be_bytes());
    out.extend_from_slice(&wire);
    let (mut send, mut recv) = conn.open_bi().await?;
    send.write_all(&out).await?;
    send.finish()?;
    let body = recv.read_to_end(MAX_DNS).await?;
    if body.len() < 2 || usize::from(u16::from_be_bytes([body[0], body[1]])) != body.len() - 2 {
        return Err(VisitError::DoqFraming);
    }
    let resp = dnswire::decode(&body[2..])?;
    if resp.id != 0 {
        return Err(VisitError::DnsId { want: 0, got: resp.id });
    }
    Ok(resp)
}

/// Opens the client control stream and sends SETTINGS. The stream must
/// stay alive for the life of the connection.
async fn open_control(conn: &Connection) -> Result<quinn::SendStream, VisitError> {
    let mut s = conn.open_uni().await?;
    s.write_all(&h3lite::control_stream_preamble()).await?;
    Ok(s)
}

async fn read_varint(recv: &mut RecvStream) -> Option<u64> {
    let mut buf = [0u8; 8];
    recv.read_exact(&mut buf[..1]).await.ok()?;
    let len = varint::len_from_first_byte(buf[0]);
    recv.read_exact(&mut buf[1..len]).await.ok()?;
    varint::decode(&buf[..len]).ok().map(|(v, _)| v)
}

/// Accepts the server's unidirectional streams and reports when its
/// SETTINGS frame has arrived.
fn spawn_uni_reader(conn: &Connection) -> watch::Receiver<bool> {
    let (tx, rx) = watch::channel(false);
    let conn = conn.clone();
    tokio::spawn(async move {
        while let Ok(mut recv) = conn.accept_uni().await {
            let Some(ty) = read_varint(&mut recv).await else {
                continue;
            };
            if StreamKind::from_uni_type(ty) != Some(StreamKind::Control) {
                let _ = recv.stop(VarInt::from_u32(0x0103));
                continue;
            }
            let tx = tx.clone();
            tokio::spawn(async move {
                let mut parser = FrameParser::new();
                let mut buf = [0u8; 512];
                while let Ok(Some(n)) = recv.read(&mut buf).await {
                    parser.push(&buf[..n]);
                    while let Ok(Some(f)) = parser.next_frame() {
                        if f.frame_type == frame::SETTINGS {
                            tx.send_replace(true);
                        }
                    }
                }
            });
        }
    });
    rx
}

/// Sends one GET and reads the whole response. Returns the time from
/// `start` at which the HEADERS were written.
async fn request(
    conn: &Connection,
    tag: Option<u8>,
    authority: &str,
    path: &str,
    start: Instant,
) -> Result<(Duration, h3lite::Response), VisitError> {
    let mut out = Vec::new();
    out.extend(tag);
    out.extend(h3lite::build_request(authority, path)?);
    let (mut send, mut recv) = conn.open_bi().await?;
    send.write_all(&out).await?;
    let written = start.elapsed();
    send.finish()?;
    let body = recv.read_to_end(MAX_RESPONSE).await?;
    let resp = h3lite::parse_response(&body)?;
    if resp.status != 200 {
        return Err(VisitError::HttpStatus {
            path: path.to_string(),
            status: resp.status,
        });
    }
    Ok((written, resp))
}

/// Parses the index and fetches every asset concurrently. Returns the
/// manifest and the time from `start` to the last body byte.
async fn fetch_assets(
    conn: &Connection,
    tag: Option<u8>,
    authority: &str,
    index: h3lite::Response,
    start: Instant,
) -> Result<(PageManifest, Duration), VisitError> {
    let manifest = corpus::parse_manifest(&index.body)?;
    let mut set = JoinSet::new();
    for asset in manifest.assets.clone() {
        let conn = conn.clone();
        let authority = authority.to_string();
        set.spawn(async move {
            let (_, resp) = request(&conn, tag, &authority, &asset.path, start).await?;
            if let Some(want) = asset.size_bytes {
                let got = resp.body.len() as u64;
                if got != want {
                    return Err(VisitError::SizeMismatch {
                        path: asset.path,
                        want,
                        got,
                    });
                }
            }
            Ok::<_, VisitError>(())
        });
    }
    while let Some(joined) = set.join_next().await {
        joined.map_err(|e| VisitError::Io(std::io::Error::other(e)))??;
    }
    Ok((manifest, start.elapsed()))
}
