//! Relay timing measured on loopback against the analytic schedule.

mod common;

use std::net::UdpSocket;
use std::thread;
use std::time::{Duration, Instant};

use common::{datagram_latencies, median, profile, stream_echo_ms, within};
use quicoalesce::emulink::DatagramRelay;
use quicoalesce::scenario::{builtin_profiles, AccessProfile, Direction};

#[test]
fn isolated_datagram_latency_matches_profile() {
    for p in builtin_profiles() {
        let (up, down) = datagram_latencies(&p, 100, 5);
        for (dir, samples) in [(Direction::Up, up), (Direction::Down, down)] {
            let expected = p.one_way_delay_ms() + p.serialization_delay_ms(100, dir);
            let got = median(samples);
            assert!(
                within(got, expected, 1.0, 0.05),
                "{} {dir:?}: measured {got:.3} ms, expected {expected:.3} ms",
                p.name
            );
        }
    }
}

#[test]
fn near_zero_profile_is_a_passthrough() {
    let p = AccessProfile::new("zero", 0.0001, 1e6, 1e6).unwrap();
    let (up, down) = datagram_latencies(&p, 100, 5);
    let rtt = median(up) + median(down);
    assert!(rtt < 2.0, "relay rtt {rtt} ms");
}

#[test]
fn back_to_back_dsl_uplink_datagrams_are_serialized() {
    let p = profile("dsl");
    let sink = UdpSocket::bind("127.0.0.1:0").unwrap();
    sink.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
    let relay = DatagramRelay::start(&p, sink.local_addr().unwrap()).unwrap();
    let client = UdpSocket::bind("127.0.0.1:0").unwrap();
    let payload = [0u8; 1250];
    client.send_to(&payload, relay.local_addr()).unwrap();
    client.send_to(&payload, relay.local_addr()).unwrap();
    let mut buf = [0u8; 2048];
    sink.recv_from(&mut buf).unwrap();
    let first = Instant::now();
    sink.recv_from(&mut buf).unwrap();
    let gap = first.elapsed().as_secs_f64() * 1e3;
    assert!(gap >= 0.93, "gap {gap} ms");
    let expected = p.serialization_delay_ms(1250, Direction::Up);
    assert!(within(gap, expected, 1.0, 0.05), "gap {gap} ms, expected {expected} ms");
    relay.shutdown(false);
}

#[test]
fn datagrams_keep_sending_order() {
    let p = profile("cable");
    let sink = UdpSocket::bind("127.0.0.1:0").unwrap();
    sink.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
    let relay = DatagramRelay::start(&p, sink.local_addr().unwrap()).unwrap();
    let client = UdpSocket::bind("127.0.0.1:0").unwrap();
    for i in 0u32..100 {
        // varying sizes so serialization differs per unit
        let mut msg = i.to_be_bytes().to_vec();
        msg.resize(4 + (i as usize * 37) % 1200, 0);
        client.send_to(&msg, relay.local_addr()).unwrap();
    }
    let mut buf = [0u8; 2048];
    for i in 0u32..100 {
        let (n, _) = sink.recv_from(&mut buf).unwrap();
        assert!(n >= 4);
        assert_eq!(u32::from_be_bytes(buf[..4].try_into().unwrap()), i);
    }
    assert_eq!(relay.stats().up_units, 100);
    relay.shutdown(false);
}

#[test]
fn stream_echo_pays_the_handshake_hold() {
    let p = profile("fibre");
    let held = median((0..3).map(|_| stream_echo_ms(&p, true)).collect());
    assert!(within(held, 2.0 * p.rtt_ms, 3.0, 0.0), "held echo {held} ms");
    let plain = median((0..3).map(|_| stream_echo_ms(&p, false)).collect());
    assert!(within(plain, p.rtt_ms, 3.0, 0.0), "plain echo {plain} ms");
}

#[test]
fn zero_delay_stream_echo_is_fast() {
    let p = AccessProfile::new("zero", 0.0001, 1e6, 1e6).unwrap();
    let echo = stream_echo_ms(&p, false);
    assert!(echo < 2.0, "echo {echo} ms");
}

#[test]
fn shutdown_with_empty_queues_returns_immediately() {
    let p = profile("4g");
    let sink = UdpSocket::bind("127.0.0.1:0").unwrap();
    let relay = DatagramRelay::start(&p, sink.local_addr().unwrap()).unwrap();
    thread::sleep(Duration::from_millis(10));
    let t = Instant::now();
    relay.shutdown(true);
    assert!(t.elapsed() < Duration::from_millis(200));
}
