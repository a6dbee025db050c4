//! RFC 8484 server over TLS 1.3 and HTTP/2 (HTTP/1.1 also accepted).

use std::net::SocketAddr;
use std::sync::Arc;

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use bytes::Bytes;
use http::{header, Method, Request, Response, StatusCode};
use http_body_util::{BodyExt, Full, Limited};
use hyper::body::Incoming;
use hyper::service::service_fn;
use hyper_util::rt::{TokioExecutor, TokioIo};
use hyper_util::server::conn::auto;
use tokio::net::TcpListener;
use tokio_rustls::TlsAcceptor;
use tracing::debug;

use super::{tls, EndpointError, EventKind, Shared};

pub const DNS_MESSAGE: &str = "application/dns-message";
const MAX_BODY: usize = 65535;

pub(super) async fn spawn(addr: SocketAddr, shared: Arc<Shared>) -> Result<SocketAddr, EndpointError> {
    let listener = TcpListener::bind(addr)
        .await
        .map_err(|source| EndpointError::Bind { addr, source })?;
    let local = listener
        .local_addr()
        .map_err(|source| EndpointError::Bind { addr, source })?;
    let cfg = &shared.config;
    let crypto = tls::server_crypto(&cfg.certificate, &cfg.ticket_keyring, &[b"h2", b"http/1.1"], false)?;
    let acceptor = TlsAcceptor::from(Arc::new(crypto));
    tokio::spawn(async move {
        loop {
            let (tcp, peer) = match listener.accept().await {
                Ok(c) => c,
                Err(e) => {
                    debug!("doh accept: {e}");
                    continue;
                }
            };
            let _ = tcp.set_nodelay(true);
            let acceptor = acceptor.clone();
            let shared = shared.clone();
            tokio::spawn(async move {
                let tls = match acceptor.accept(tcp).await {
                    Ok(t) => t,
                    Err(e) => {
                        debug!(%peer, "doh TLS handshake: {e}");
                        return;
                    }
                };
                let svc = service_fn(move |req| {
                    let shared = shared.clone();
                    async move { Ok::<_, std::convert::Infallible>(handle(req, &shared).await) }
                });
                if let Err(e) = auto::Builder::new(TokioExecutor::new())
                    .serve_connection(TokioIo::new(tls), svc)
                    .await
                {
                    debug!(%peer, "doh connection: {e}");
                }
            });
        }
    });
    Ok(local)
}

fn reply(status: StatusCode, body: Vec<u8>) -> Response<Full<Bytes>> {
    let mut resp = Response::new(Full::new(Bytes::from(body)));
    *resp.status_mut() = status;
    if status == StatusCode::OK {
        resp.headers_mut()
            .insert(header::CONTENT_TYPE, header::HeaderValue::from_static(DNS_MESSAGE));
    }
    resp
}

async fn handle(req: Request<Incoming>, shared: &Shared) -> Response<Full<Bytes>> {
    if req.uri().path() != "/dns-query" {
        return reply(StatusCode::NOT_FOUND, Vec::new());
    }
    let query = match *req.method() {
        Method::POST => {
            let ct = req
                .headers()
                .get(header::CONTENT_TYPE)
                .and_then(|v| v.to_str().ok())
                .unwrap_or("");
            if ct != DNS_MESSAGE {
                return reply(StatusCode::UNSUPPORTED_MEDIA_TYPE, Vec::new());
            }
            match Limited::new(req.into_body(), MAX_BODY).collect().await {
                Ok(b) => b.to_bytes().to_vec(),
                Err(_) => return reply(StatusCode::PAYLOAD_TOO_LARGE, Vec::new()),
            }
        }
        Method::GET => {
            let param = req
                .uri()
                .query()
                .unwrap_or("")
                .split('&')
                .find_map(|kv| kv.strip_prefix("dns="));
            match param.and_then(|p| URL_SAFE_NO_PAD.decode(p).ok()) {
                Some(q) => q,
                None => return reply(StatusCode::BAD_REQUEST, Vec::new()),
            }
        }
        _ => return reply(StatusCode::METHOD_NOT_ALLOWED, Vec::new()),
    };
    match shared.zone.answer_wire(&query) {
        Some(resp) => {
            shared.events.push(
                0,
                EventKind::DnsQuery {
                    transport: "https",
                    early: false,
                },
            );
            reply(StatusCode::OK, resp)
        }
        None => reply(StatusCode::BAD_REQUEST, Vec::new()),
    }
}
