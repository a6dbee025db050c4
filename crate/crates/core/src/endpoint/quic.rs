//! One QUIC endpoint carrying three ALPNs: `doq`, `h3` and `doq-h3`.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use quinn::crypto::rustls::{HandshakeData, QuicServerConfig};
use quinn::{Connection, RecvStream, SendStream, VarInt};
use tokio::sync::watch;
use tracing::{debug, warn};

use super::{tls, Alpn, EndpointError, EventKind, SettingsPolicy, Shared};
use crate::dnswire;
use crate::h3lite::{self, frame, varint, FrameParser, StreamKind};

pub(crate) const DOQ_PROTOCOL_ERROR: u32 = 0x2;
pub(crate) const H3_STREAM_CREATION_ERROR: u32 = 0x0103;
pub(crate) const H3_MISSING_SETTINGS: u32 = 0x010a;
pub(crate) const H3_MESSAGE_ERROR: u32 = 0x010e;

const MAX_DOQ_STREAM: usize = 2 + 65535;
const MAX_REQUEST_STREAM: usize = 64 * 1024;

static NEXT_CONN: AtomicU64 = AtomicU64::new(1);

pub(super) fn spawn(addr: SocketAddr, shared: Arc<Shared>) -> Result<(SocketAddr, quinn::Endpoint), EndpointError> {
    let cfg = &shared.config;
    let alpns: Vec<&[u8]> = cfg.alpns.iter().map(|a| a.wire()).collect();
    let crypto = tls::server_crypto(&cfg.certificate, &cfg.ticket_keyring, &alpns, cfg.early_data)?;
    let crypto = QuicServerConfig::try_from(crypto).map_err(|e| EndpointError::QuicCrypto(e.to_string()))?;
    let server_config = quinn::ServerConfig::with_crypto(Arc::new(crypto));
    let endpoint =
        quinn::Endpoint::server(server_config, addr).map_err(|source| EndpointError::Bind { addr, source })?;
    let local = endpoint
        .local_addr()
        .map_err(|source| EndpointError::Bind { addr, source })?;
    let ep = endpoint.clone();
    tokio::spawn(async move {
        while let Some(incoming) = ep.accept().await {
            let id = NEXT_CONN.fetch_add(1, Ordering::Relaxed);
            let remote = incoming.remote_address();
            let validated = incoming.remote_address_validated();
            shared.events.push(id, EventKind::Incoming { remote, validated });
            if shared.config.retry_validation && !validated {
                shared.events.push(id, EventKind::Retry { remote });
                let _ = incoming.retry();
                continue;
            }
            let shared = shared.clone();
            tokio::spawn(async move {
                if let Err(e) = handle_connection(incoming, id, shared).await {
                    debug!(conn = id, "connection ended: {e}");
                }
            });
        }
    });
    Ok((local, endpoint))
}

#[derive(Clone)]
struct ConnCtx {
    id: u64,
    conn: Connection,
    shared: Arc<Shared>,
}

impl ConnCtx {
    fn event(&self, kind: EventKind) {
        self.shared.events.push(self.id, kind);
    }
}

async fn handle_connection(
    incoming: quinn::Incoming,
    id: u64,
    shared: Arc<Shared>,
) -> Result<(), quinn::ConnectionError> {
    let mut connecting = incoming.accept()?;
    let alpn = connecting
        .handshake_data()
        .await?
        .downcast::<HandshakeData>()
        .ok()
        .and_then(|hd| hd.protocol)
        .and_then(|p| Alpn::from_wire(&p));
    shared.events.push(id, EventKind::Accepted { alpn });
    // Accepting 0.5-RTT lets streams that arrive in 0-RTT be served before
    // the client's Finished.
    let (conn, established) = match connecting.into_0rtt() {
        Ok(pair) => pair,
        Err(connecting) => {
            let conn = connecting.await?;
            let ctx = ConnCtx { id, conn, shared };
            ctx.event(EventKind::HandshakeDone);
            return serve(ctx, alpn).await;
        }
    };
    let events = shared.events.clone();
    tokio::spawn(async move {
        established.await;
        events.push(id, EventKind::HandshakeDone);
    });
    serve(ConnCtx { id, conn, shared }, alpn).await
}

async fn serve(ctx: ConnCtx, alpn: Option<Alpn>) -> Result<(), quinn::ConnectionError> {
    match alpn {
        Some(Alpn::Doq) => serve_doq(ctx).await,
        Some(Alpn::H3) => serve_h3(ctx).await,
        Some(Alpn::DoqH3) => serve_coalesced(ctx).await,
        None => {
            ctx.conn
                .close(VarInt::from_u32(DOQ_PROTOCOL_ERROR), b"no application protocol");
            Ok(())
        }
    }
}

async fn serve_doq(ctx: ConnCtx) -> Result<(), quinn::ConnectionError> {
    loop {
        let (send, recv) = ctx.conn.accept_bi().await?;
        let ctx = ctx.clone();
        tokio::spawn(async move { doq_stream(&ctx, send, recv).await });
    }
}

/// One RFC 9250 exchange: 2-byte length, message with id 0, FIN each way.
async fn doq_stream(ctx: &ConnCtx, mut send: SendStream, mut recv: RecvStream) {
    let early = recv.is_0rtt();
    let body = match recv.read_to_end(MAX_DOQ_STREAM).await {
        Ok(b) => b,
        Err(e) => {
            debug!(conn = ctx.id, "doq read: {e}");
            return;
        }
    };
    let protocol_error = |why: &'static str| {
        ctx.conn.close(VarInt::from_u32(DOQ_PROTOCOL_ERROR), why.as_bytes());
    };
    if body.len() < 2 || usize::from(u16::from_be_bytes([body[0], body[1]])) != body.len() - 2 {
        return protocol_error("bad length prefix");
    }
    let Ok(query) = dnswire::decode(&body[2..]) else {
        return protocol_error("undecodable query");
    };
    if query.id != 0 {
        return protocol_error("message id must be 0");
    }
    ctx.event(EventKind::DnsQuery {
        transport: "quic",
        early,
    });
    let Ok(resp) = dnswire::encode(&ctx.shared.zone.answer(&query)) else {
        return protocol_error("unencodable response");
    };
    let mut out = Vec::with_capacity(resp.len() + 2);
    out.extend_from_slice(&(resp.len() as u16).to_be_bytes());
    out.extend_from_slice(&resp);
    if send.write_all(&out).await.is_ok() {
        let _ = send.finish();
    }
}

async fn h3_request(ctx: &ConnCtx, mut send: SendStream, mut recv: RecvStream, early: bool) {
    let bytes = match recv.read_to_end(MAX_REQUEST_STREAM).await {
        Ok(b) => b,
        Err(e) => {
            debug!(conn = ctx.id, "request read: {e}");
            return;
        }
    };
    let req = h3lite::frame_parse(&bytes)
        .ok()
        .and_then(|frames| frames.into_iter().next())
        .ok_or(h3lite::H3Error::Malformed("no HEADERS"))
        .and_then(|f| h3lite::parse_request_headers(&f));
    let req = match req {
        Ok(r) => r,
        Err(e) => {
            debug!(conn = ctx.id, "bad request: {e}");
            let _ = send.reset(VarInt::from_u32(H3_MESSAGE_ERROR));
            return;
        }
    };
    ctx.event(EventKind::Request {
        path: req.path.clone(),
        early,
    });
    let out = match (req.method.as_str(), ctx.shared.content.get(&req.path)) {
        ("GET", Some(item)) => h3lite::build_response(200, &item.content_type, &item.bytes),
        ("GET", None) => h3lite::build_response(404, "text/plain", b""),
        _ => h3lite::build_response(405, "text/plain", b""),
    };
    let out = out.expect("status codes are constant and valid");
    if send.write_all(&out).await.is_ok() {
        let _ = send.finish();
    }
}

/// Opens the server control stream and writes SETTINGS. The stream is
/// kept open until the connection ends.
async fn open_control(ctx: &ConnCtx) {
    let mut stream = match ctx.conn.open_uni().await {
        Ok(s) => s,
        Err(e) => {
            debug!(conn = ctx.id, "open control stream: {e}");
            return;
        }
    };
    if stream.write_all(&h3lite::control_stream_preamble()).await.is_err() {
        return;
    }
    ctx.event(EventKind::ServerSettingsSent);
    let conn = ctx.conn.clone();
    tokio::spawn(async move {
        conn.closed().await;
        drop(stream);
    });
}

async fn read_varint(recv: &mut RecvStream) -> Option<u64> {
    let mut buf = [0u8; 8];
    recv.read_exact(&mut buf[..1]).await.ok()?;
    let len = varint::len_from_first_byte(buf[0]);
    recv.read_exact(&mut buf[1..len]).await.ok()?;
    varint::decode(&buf[..len]).ok().map(|(v, _)| v)
}

/// Peer unidirectional streams: tracks the client's control stream and
/// SETTINGS, drains QPACK streams, refuses unknown types.
struct PeerControl {
    control_opened: watch::Sender<bool>,
    settings_seen: watch::Sender<bool>,
}

async fn accept_uni_loop(ctx: ConnCtx, peer: Arc<PeerControl>) {
    while let Ok(mut recv) = ctx.conn.accept_uni().await {
        let ctx = ctx.clone();
        let peer = peer.clone();
        tokio::spawn(async move {
            let Some(ty) = read_varint(&mut recv).await else {
                return;
            };
            match StreamKind::from_uni_type(ty) {
                Some(StreamKind::Control) => {
                    peer.control_opened.send_replace(true);
                    read_control(&ctx, &mut recv, &peer).await;
                }
                Some(_) => {
                    let _ = recv.read_to_end(usize::MAX).await;
                }
                None => {
                    let _ = recv.stop(VarInt::from_u32(H3_STREAM_CREATION_ERROR));
                }
            }
        });
    }
}

async fn read_control(ctx: &ConnCtx, recv: &mut RecvStream, peer: &PeerControl) {
    let mut parser = FrameParser::new();
    let mut buf = vec![0u8; 1024];
    loop {
        match recv.read(&mut buf).await {
            Ok(Some(n)) => parser.push(&buf[..n]),
            _ => return,
        }
        loop {
            match parser.next_frame() {
                Ok(Some(f)) if f.frame_type == frame::SETTINGS => {
                    if !*peer.settings_seen.borrow() {
                        ctx.event(EventKind::ClientSettings);
                        peer.settings_seen.send_replace(true);
                    }
                }
                Ok(Some(_)) => {}
                Ok(None) => break,
                Err(e) => {
                    warn!(conn = ctx.id, "client control stream: {e}");
                    return;
                }
            }
        }
    }
}

fn peer_control() -> Arc<PeerControl> {
    Arc::new(PeerControl {
        control_opened: watch::channel(false).0,
        settings_seen: watch::channel(false).0,
    })
}

async fn serve_h3(ctx: ConnCtx) -> Result<(), quinn::ConnectionError> {
    open_control(&ctx).await;
    tokio::spawn(accept_uni_loop(ctx.clone(), peer_control()));
    loop {
        let (send, recv) = ctx.conn.accept_bi().await?;
        let ctx = ctx.clone();
        tokio::spawn(async move {
            let early = recv.is_0rtt();
            h3_request(&ctx, send, recv, early).await
        });
    }
}

async fn serve_coalesced(ctx: ConnCtx) -> Result<(), quinn::ConnectionError> {
    let peer = peer_control();
    let policy = ctx.shared.config.settings_policy;
    match policy {
        SettingsPolicy::Immediate => open_control(&ctx).await,
        SettingsPolicy::Deferred => {
            let mut opened = peer.control_opened.subscribe();
            let ctx = ctx.clone();
            tokio::spawn(async move {
                if opened.wait_for(|v| *v).await.is_ok() {
                    open_control(&ctx).await;
                }
            });
        }
    }
    tokio::spawn(accept_uni_loop(ctx.clone(), peer.clone()));
    let strict = ctx.shared.config.strict_settings;
    loop {
        let (mut send, mut recv) = ctx.conn.accept_bi().await?;
        let ctx = ctx.clone();
        let peer = peer.clone();
        tokio::spawn(async move {
            let early = recv.is_0rtt();
            let mut tag = [0u8; 1];
            if recv.read_exact(&mut tag).await.is_err() {
                return;
            }
            match StreamKind::from_tag(tag[0]) {
                Some(StreamKind::CoalescedDns) => doq_stream(&ctx, send, recv).await,
                Some(StreamKind::Request) => {
                    if strict && !*peer.settings_seen.borrow() {
                        let _ = send.reset(VarInt::from_u32(H3_MISSING_SETTINGS));
                        let _ = recv.stop(VarInt::from_u32(H3_MISSING_SETTINGS));
                        ctx.event(EventKind::StreamReset {
                            code: H3_MISSING_SETTINGS.into(),
                        });
                        return;
                    }
                    h3_request(&ctx, send, recv, early).await
                }
                _ => {
                    let _ = send.reset(VarInt::from_u32(H3_STREAM_CREATION_ERROR));
                    let _ = recv.stop(VarInt::from_u32(H3_STREAM_CREATION_ERROR));
                    ctx.event(EventKind::StreamReset {
                        code: H3_STREAM_CREATION_ERROR.into(),
                    });
                }
            }
        });
    }
}
