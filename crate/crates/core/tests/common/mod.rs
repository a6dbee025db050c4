//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use std::io::{Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, UdpSocket};
use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

use quicoalesce::campaign::{loopback_zone, Testbed};
use quicoalesce::corpus;
use quicoalesce::emulink::{DatagramRelay, StreamRelay, StreamRelayOptions};
use quicoalesce::endpoint::{ContentStore, ServerConfig, DEFAULT_SERVER_NAME};
use quicoalesce::scenario::{builtin_profiles, AccessProfile};
use quicoalesce::visit::ClientSettings;

pub fn profile(name: &str) -> AccessProfile {
    builtin_profiles().into_iter().find(|p| p.name == name).unwrap()
}

pub fn content() -> ContentStore {
    let mut store = ContentStore::new();
    for (path, bytes, ct) in corpus::corpus_files(5).unwrap() {
        store.insert(&path, bytes, &ct).unwrap();
    }
    store
}

pub fn testbed_with(p: &AccessProfile, cfg: ServerConfig) -> (Testbed, ClientSettings) {
    let settings = ClientSettings::new(cfg.certificate.ca_der.clone());
    let tb = Testbed::start(
        p,
        cfg,
        loopback_zone(DEFAULT_SERVER_NAME).unwrap(),
        content(),
        StreamRelayOptions::default(),
    )
    .unwrap();
    (tb, settings)
}

pub fn testbed(p: &AccessProfile) -> (Testbed, ClientSettings) {
    testbed_with(p, ServerConfig::generate(&[DEFAULT_SERVER_NAME]).unwrap())
}

pub fn rt() -> tokio::runtime::Runtime {
    tokio::runtime::Builder::new_current_thread()
        .enable_all()
        .build()
        .unwrap()
}

pub fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.total_cmp(b));
    xs[(xs.len() - 1) / 2]
}

/// One-way latencies (up, down) in ms of isolated datagrams of `len` bytes
/// through a datagram relay, `samples` of each.
pub fn datagram_latencies(p: &AccessProfile, len: usize, samples: usize) -> (Vec<f64>, Vec<f64>) {
    let sink = UdpSocket::bind("127.0.0.1:0").unwrap();
    sink.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
    let relay = DatagramRelay::start(p, sink.local_addr().unwrap()).unwrap();
    let client = UdpSocket::bind("127.0.0.1:0").unwrap();
    client.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
    let payload = vec![0x5a; len];
    let (tx, rx) = mpsc::channel();
    let server = thread::spawn(move || {
        let mut buf = [0u8; 2048];
        for _ in 0..samples {
            let (n, from) = sink.recv_from(&mut buf).unwrap();
            let arrived = Instant::now();
            let sent = Instant::now();
            sink.send_to(&buf[..n], from).unwrap();
            tx.send((arrived, sent)).unwrap();
        }
    });
    let mut up = Vec::new();
    let mut down = Vec::new();
    let mut buf = [0u8; 2048];
    for _ in 0..samples {
        let t0 = Instant::now();
        client.send_to(&payload, relay.local_addr()).unwrap();
        let (n, _) = client.recv_from(&mut buf).unwrap();
        let t3 = Instant::now();
        assert_eq!(n, len);
        let (t1, t2) = rx.recv().unwrap();
        up.push((t1 - t0).as_secs_f64() * 1e3);
        down.push((t3 - t2).as_secs_f64() * 1e3);
        thread::sleep(Duration::from_millis(5));
    }
    server.join().unwrap();
    relay.shutdown(false);
    (up, down)
}

/// Round-trip time in ms of a small request/response over a fresh
/// connection through a stream relay, measured from connect().
pub fn stream_echo_ms(p: &AccessProfile, hold_first_flight: bool) -> f64 {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let upstream = listener.local_addr().unwrap();
    let server = thread::spawn(move || {
        let (mut s, _) = listener.accept().unwrap();
        let mut buf = [0u8; 64];
        let n = s.read(&mut buf).unwrap();
        s.write_all(&buf[..n]).unwrap();
    });
    let relay = StreamRelay::start(p, upstream, StreamRelayOptions { hold_first_flight }).unwrap();
    let start = Instant::now();
    let mut c = TcpStream::connect(relay.local_addr()).unwrap();
    c.set_nodelay(true).unwrap();
    c.write_all(b"ping").unwrap();
    let mut buf = [0u8; 4];
    c.read_exact(&mut buf).unwrap();
    let elapsed = start.elapsed().as_secs_f64() * 1e3;
    assert_eq!(&buf, b"ping");
    server.join().unwrap();
    relay.shutdown(false);
    elapsed
}

pub fn within(measured: f64, expected: f64, abs_ms: f64, rel: f64) -> bool {
    (measured - expected).abs() <= abs_ms.max(rel * expected)
}

/// The web address a visit derives from the zone's A record.
pub fn loopback_port(s: &SocketAddr) -> SocketAddr {
    SocketAddr::new([127, 0, 0, 1].into(), s.port())
}
