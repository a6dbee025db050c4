//! The combined server driven by raw clients, without the visit layer.

mod common;

use std::net::{SocketAddr, UdpSocket};
use std::sync::Arc;
use std::time::Duration;

use base64::Engine;
use bytes::Bytes;
use http_body_util::{BodyExt, Full};
use hyper_util::rt::{TokioExecutor, TokioIo};
use quicoalesce::campaign::loopback_zone;
use quicoalesce::dnswire::{self, DnsMessage};
use quicoalesce::endpoint::{
    tls, Alpn, EventKind, ListenAddrs, Server, ServerConfig, SettingsPolicy, ZoneStore, DEFAULT_SERVER_NAME,
    DNS_MESSAGE,
};
use quicoalesce::h3lite::{self, StreamKind};
use quicoalesce::visit::TicketCache;
use rustls::pki_types::ServerName;

const QTYPE_A: u16 = 1;

fn zone() -> ZoneStore {
    let mut z = loopback_zone(DEFAULT_SERVER_NAME).unwrap();
    z.insert("www.test.example", "10.0.0.9".parse().unwrap(), 60).unwrap();
    z
}

fn server_with(cfg: ServerConfig) -> Server {
    Server::start(zone(), common::content(), cfg, ListenAddrs::default()).unwrap()
}

fn server() -> Server {
    server_with(ServerConfig::generate(&[DEFAULT_SERVER_NAME]).unwrap())
}

fn base(s: &Server) -> rustls::ClientConfig {
    tls::client_crypto_base(&s.certificate().ca_der).unwrap()
}

fn query(name: &str, id: u16) -> Vec<u8> {
    dnswire::encode(&dnswire::make_query(name, QTYPE_A, id).unwrap()).unwrap()
}

fn udp_exchange(server: SocketAddr, msg: &[u8]) -> DnsMessage {
    let sock = UdpSocket::bind("127.0.0.1:0").unwrap();
    sock.set_read_timeout(Some(Duration::from_secs(2))).unwrap();
    sock.send_to(msg, server).unwrap();
    let mut buf = [0u8; 1500];
    let (n, _) = sock.recv_from(&mut buf).unwrap();
    dnswire::decode(&buf[..n]).unwrap()
}

fn quic_client(
    base: &rustls::ClientConfig,
    alpn: Alpn,
    store: Option<Arc<dyn rustls::client::ClientSessionStore>>,
) -> quinn::Endpoint {
    let crypto = match store {
        Some(s) => tls::client_crypto_resuming(base, &[alpn.wire()], s),
        None => tls::client_crypto_fresh(base, &[alpn.wire()]),
    };
    let crypto = quinn::crypto::rustls::QuicClientConfig::try_from(crypto).unwrap();
    let mut ep = quinn::Endpoint::client("127.0.0.1:0".parse().unwrap()).unwrap();
    ep.set_default_client_config(quinn::ClientConfig::new(Arc::new(crypto)));
    ep
}

async fn connect(ep: &quinn::Endpoint, addr: SocketAddr) -> quinn::Connection {
    ep.connect(addr, DEFAULT_SERVER_NAME).unwrap().await.unwrap()
}

/// One DoQ exchange on a fresh bidirectional stream, with an optional
/// leading stream tag for the coalesced mode.
async fn doq(conn: &quinn::Connection, tag: Option<u8>, msg: &[u8]) -> Result<DnsMessage, String> {
    let (mut send, mut recv) = conn.open_bi().await.map_err(|e| e.to_string())?;
    let mut out = tag.map(|t| vec![t]).unwrap_or_default();
    out.extend_from_slice(&(msg.len() as u16).to_be_bytes());
    out.extend_from_slice(msg);
    send.write_all(&out).await.map_err(|e| e.to_string())?;
    send.finish().map_err(|e| e.to_string())?;
    let body = recv.read_to_end(4096).await.map_err(|e| e.to_string())?;
    assert_eq!(usize::from(u16::from_be_bytes([body[0], body[1]])), body.len() - 2);
    dnswire::decode(&body[2..]).map_err(|e| e.to_string())
}

async fn get(conn: &quinn::Connection, tag: Option<u8>, path: &str) -> h3lite::Response {
    let (mut send, mut recv) = conn.open_bi().await.unwrap();
    let mut out = tag.map(|t| vec![t]).unwrap_or_default();
    out.extend(h3lite::build_request(DEFAULT_SERVER_NAME, path).unwrap());
    send.write_all(&out).await.unwrap();
    send.finish().unwrap();
    let body = recv.read_to_end(1 << 20).await.unwrap();
    h3lite::parse_response(&body).unwrap()
}

async fn open_control(conn: &quinn::Connection) -> quinn::SendStream {
    let mut s = conn.open_uni().await.unwrap();
    s.write_all(&h3lite::control_stream_preamble()).await.unwrap();
    s
}

#[test]
fn doudp_answers_and_echoes_id() {
    let s = server();
    let resp = udp_exchange(s.udp_addr(), &query("www.test.example", 0xbeef));
    assert_eq!(resp.id, 0xbeef);
    assert!(resp.flags.qr && resp.flags.ra);
    assert_eq!(resp.addresses(), vec!["10.0.0.9".parse::<std::net::IpAddr>().unwrap()]);
}

#[test]
fn doudp_error_rcodes() {
    let s = server();
    let nx = udp_exchange(s.udp_addr(), &query("missing.example", 1));
    assert_eq!(nx.flags.rcode, 3);
    assert!(nx.answers.is_empty());

    let mut chaos = dnswire::make_query(DEFAULT_SERVER_NAME, QTYPE_A, 2).unwrap();
    chaos.questions[0].qclass = 3;
    let resp = udp_exchange(s.udp_addr(), &dnswire::encode(&chaos).unwrap());
    assert_eq!(resp.flags.rcode, 4);
}

#[test]
fn doudp_drops_garbage() {
    let s = server();
    let sock = UdpSocket::bind("127.0.0.1:0").unwrap();
    sock.set_read_timeout(Some(Duration::from_millis(300))).unwrap();
    sock.send_to(&[0xff; 5], s.udp_addr()).unwrap();
    let mut buf = [0u8; 512];
    assert!(sock.recv_from(&mut buf).is_err());
    // still serving afterwards
    let resp = udp_exchange(s.udp_addr(), &query(DEFAULT_SERVER_NAME, 3));
    assert_eq!(resp.answers.len(), 1);
}

async fn doh_request(s: &Server, req: http::Request<Full<Bytes>>) -> (http::StatusCode, Option<String>, Bytes) {
    let crypto = tls::client_crypto_fresh(&base(s), &[b"h2"]);
    let connector = tokio_rustls::TlsConnector::from(Arc::new(crypto));
    let tcp = tokio::net::TcpStream::connect(s.tls_addr()).await.unwrap();
    let name = ServerName::try_from(DEFAULT_SERVER_NAME).unwrap();
    let stream = connector.connect(name, tcp).await.unwrap();
    let (mut sender, conn) = hyper::client::conn::http2::handshake(TokioExecutor::new(), TokioIo::new(stream))
        .await
        .unwrap();
    tokio::spawn(conn);
    let resp = sender.send_request(req).await.unwrap();
    let status = resp.status();
    let ct = resp
        .headers()
        .get(http::header::CONTENT_TYPE)
        .map(|v| v.to_str().unwrap().to_string());
    let body = resp.into_body().collect().await.unwrap().to_bytes();
    (status, ct, body)
}

fn doh_uri(query: &str) -> String {
    format!("https://{DEFAULT_SERVER_NAME}/dns-query{query}")
}

fn post(ct: &str, body: Vec<u8>) -> http::Request<Full<Bytes>> {
    http::Request::post(doh_uri(""))
        .header(http::header::CONTENT_TYPE, ct)
        .body(Full::new(Bytes::from(body)))
        .unwrap()
}

#[test]
fn doh_post_and_get_agree() {
    let s = server();
    common::rt().block_on(async {
        let q = query(DEFAULT_SERVER_NAME, 0);
        let (status, ct, posted) = doh_request(&s, post(DNS_MESSAGE, q.clone())).await;
        assert_eq!(status, 200);
        assert_eq!(ct.as_deref(), Some(DNS_MESSAGE));
        assert_eq!(dnswire::decode(&posted).unwrap().answers.len(), 1);

        let b64 = base64::engine::general_purpose::URL_SAFE_NO_PAD.encode(&q);
        let req = http::Request::get(doh_uri(&format!("?dns={b64}")))
            .body(Full::new(Bytes::new()))
            .unwrap();
        let (status, _, fetched) = doh_request(&s, req).await;
        assert_eq!(status, 200);
        assert_eq!(posted, fetched);
    });
}

#[test]
fn doh_rejects_bad_requests() {
    let s = server();
    common::rt().block_on(async {
        let q = query(DEFAULT_SERVER_NAME, 0);
        let (status, _, _) = doh_request(&s, post("text/plain", q.clone())).await;
        assert_eq!(status, 415);
        let (status, _, _) = doh_request(&s, post(DNS_MESSAGE, q[..q.len() - 3].to_vec())).await;
        assert_eq!(status, 400);
    });
}

#[test]
fn doq_query_is_answered_on_its_stream() {
    let s = server();
    common::rt().block_on(async {
        let ep = quic_client(&base(&s), Alpn::Doq, None);
        let conn = connect(&ep, s.quic_addr()).await;
        let resp = doq(&conn, None, &query("www.test.example", 0)).await.unwrap();
        assert_eq!(resp.id, 0);
        assert_eq!(resp.answers.len(), 1);
        // a second query on the same connection uses a new stream
        let resp = doq(&conn, None, &query("missing.example", 0)).await.unwrap();
        assert_eq!(resp.flags.rcode, 3);
    });
}

#[test]
fn doq_nonzero_id_closes_the_connection() {
    let s = server();
    common::rt().block_on(async {
        let ep = quic_client(&base(&s), Alpn::Doq, None);
        let conn = connect(&ep, s.quic_addr()).await;
        assert!(doq(&conn, None, &query(DEFAULT_SERVER_NAME, 7)).await.is_err());
        match tokio::time::timeout(Duration::from_secs(2), conn.closed())
            .await
            .unwrap()
        {
            quinn::ConnectionError::ApplicationClosed(close) => assert_eq!(close.error_code.into_inner(), 0x2),
            other => panic!("unexpected close {other}"),
        }
    });
}

#[test]
fn h3_serves_the_index_document_and_404() {
    let s = server();
    common::rt().block_on(async {
        let ep = quic_client(&base(&s), Alpn::H3, None);
        let conn = connect(&ep, s.quic_addr()).await;
        let _control = open_control(&conn).await;
        let resp = get(&conn, None, "/doc_plus_assets/index.txt").await;
        assert_eq!(resp.status, 200);
        assert_eq!(resp.body.len(), 18_252);
        let again = get(&conn, None, "/doc_plus_assets/index.txt").await;
        assert_eq!(resp.body, again.body);
        assert_eq!(get(&conn, None, "/nope.txt").await.status, 404);
    });
}

#[test]
fn first_flight_is_never_answered_with_retry() {
    let s = server();
    common::rt().block_on(async {
        let ep = quic_client(&base(&s), Alpn::Doq, None);
        let conn = connect(&ep, s.quic_addr()).await;
        doq(&conn, None, &query(DEFAULT_SERVER_NAME, 0)).await.unwrap();
    });
    let events = s.events().snapshot();
    assert!(events.iter().any(|e| matches!(e.kind, EventKind::Incoming { .. })));
    assert!(!events.iter().any(|e| matches!(e.kind, EventKind::Retry { .. })));
}

#[test]
fn coalesced_connection_serves_dns_and_web() {
    let mut cfg = ServerConfig::generate(&[DEFAULT_SERVER_NAME]).unwrap();
    cfg.settings_policy = SettingsPolicy::Immediate;
    let s = server_with(cfg);
    let dns = StreamKind::CoalescedDns.tag();
    let web = StreamKind::Request.tag();
    common::rt().block_on(async {
        let ep = quic_client(&base(&s), Alpn::DoqH3, None);
        let conn = connect(&ep, s.quic_addr()).await;
        let id = conn.stable_id();
        let _control = open_control(&conn).await;
        let resp = doq(&conn, dns, &query(DEFAULT_SERVER_NAME, 0)).await.unwrap();
        assert_eq!(resp.answers.len(), 1);

        // unknown tag: that stream is reset, the connection carries on
        let (mut send, mut recv) = conn.open_bi().await.unwrap();
        send.write_all(&[0x7f, 0, 0]).await.unwrap();
        send.finish().unwrap();
        assert!(recv.read_to_end(1024).await.is_err());

        let (a, b) = tokio::join!(
            get(&conn, web, "/complex/index.txt"),
            get(&conn, web, "/doc_plus_assets/index.txt")
        );
        assert_eq!((a.status, b.status), (200, 200));
        assert_eq!(b.body.len(), 18_252);
        assert_eq!(conn.stable_id(), id);
        assert!(conn.close_reason().is_none());
    });
    let resets = s
        .events()
        .snapshot()
        .into_iter()
        .filter(|e| matches!(e.kind, EventKind::StreamReset { .. }))
        .count();
    assert_eq!(resets, 1);
}

/// Primes a ticket on `first`, then reconnects on `second` offering 0-RTT.
/// Returns (early data accepted, server-side resumptions of the second
/// handshake).
async fn resume(s: &Server, first: Alpn, second: Alpn) -> (bool, u64) {
    let base = base(s);
    let tickets = Arc::new(TicketCache::new());
    let store: Arc<dyn rustls::client::ClientSessionStore> = tickets.clone();
    let ep = quic_client(&base, first, Some(store.clone()));
    let conn = connect(&ep, s.quic_addr()).await;
    assert!(tickets.wait_ready(DEFAULT_SERVER_NAME, 0, Duration::from_secs(2)).await);
    conn.close(0u32.into(), b"");
    ep.wait_idle().await;

    let before = s.config().ticket_keyring.resumptions();
    let ep = quic_client(&base, second, Some(store));
    let connecting = ep.connect(s.quic_addr(), DEFAULT_SERVER_NAME).unwrap();
    let (conn, accepted) = match connecting.into_0rtt() {
        Ok((conn, accepted)) => {
            let ok = accepted.await;
            (conn, ok)
        }
        Err(connecting) => (connecting.await.unwrap(), false),
    };
    let resumed = s.config().ticket_keyring.resumptions() - before;
    conn.close(0u32.into(), b"");
    (accepted, resumed)
}

#[test]
fn same_alpn_ticket_gives_zero_rtt() {
    let s = server();
    let (accepted, resumed) = common::rt().block_on(resume(&s, Alpn::H3, Alpn::H3));
    assert!(accepted);
    assert_eq!(resumed, 1);
}

#[test]
fn cross_alpn_ticket_resumes_without_early_data() {
    let s = server();
    let rt = common::rt();
    for (a, b) in [(Alpn::Doq, Alpn::H3), (Alpn::Doq, Alpn::DoqH3), (Alpn::H3, Alpn::Doq)] {
        let (accepted, resumed) = rt.block_on(resume(&s, a, b));
        // TLS 1.3 forbids early data under a different ALPN than the ticket's
        assert!(!accepted, "{a:?} -> {b:?}");
        // the shared keyring still resumes the session
        assert_eq!(resumed, 1, "{a:?} -> {b:?}");
    }
}
