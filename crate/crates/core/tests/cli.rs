//! The `quicoalesce` binary end to end.

use std::net::{TcpListener, TcpStream, UdpSocket};
use std::path::Path;
use std::process::{Child, Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use quicoalesce::visit::VisitRecord;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_quicoalesce"));
    c.env("RUST_LOG", "warn");
    c
}

fn free_udp_port() -> u16 {
    UdpSocket::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

fn free_tcp_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

struct Killed(Child);

impl Drop for Killed {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

#[test]
fn corpus_gen_serve_and_visit() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("corpus");
    let out = bin()
        .args(["corpus", "gen", "--root"])
        .arg(&root)
        .args(["--seed", "4"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().count(), 3);

    let zone = dir.path().join("zone.txt");
    std::fs::write(&zone, "# testbed\ntest.example A 60 127.0.0.1\n").unwrap();
    let ca = dir.path().join("ca.pem");
    let (udp, tls, quic) = (free_udp_port(), free_tcp_port(), free_udp_port());
    let _server = Killed(
        bin()
            .args(["serve", "--zone"])
            .arg(&zone)
            .arg("--root")
            .arg(&root)
            .args(["--udp", &format!("127.0.0.1:{udp}")])
            .args(["--tls", &format!("127.0.0.1:{tls}")])
            .args(["--quic", &format!("127.0.0.1:{quic}")])
            .arg("--ca-out")
            .arg(&ca)
            .stdout(Stdio::null())
            .spawn()
            .unwrap(),
    );
    let deadline = Instant::now() + Duration::from_secs(10);
    while TcpStream::connect(("127.0.0.1", tls)).is_err() {
        assert!(Instant::now() < deadline, "server did not come up");
        thread::sleep(Duration::from_millis(50));
    }

    for combo in ["doh+h3_1rtt", "doq+h3_0rtt", "doq+coalesced"] {
        let out = bin()
            .args([
                "visit",
                "--combo",
                combo,
                "--profile",
                "cable",
                "--page",
                "doc_plus_assets",
            ])
            .args(["--server", "127.0.0.1"])
            .args(["--udp-port", &udp.to_string()])
            .args(["--tls-port", &tls.to_string()])
            .args(["--quic-port", &quic.to_string()])
            .arg("--ca")
            .arg(&ca)
            .arg("--emulate")
            .output()
            .unwrap();
        let stdout = String::from_utf8(out.stdout).unwrap();
        assert!(
            out.status.success(),
            "{combo}: {stdout} {}",
            String::from_utf8_lossy(&out.stderr)
        );
        let rec: VisitRecord = serde_json::from_str(stdout.trim()).unwrap();
        assert!(!rec.failed);
        assert_eq!(rec.combo().label(), combo.replace("coalesced", "coalesced_paper"));
        // the emulated link makes every visit take several round trips
        assert!(rec.plt_rtt.unwrap() > 2.0, "{combo}: {:?}", rec.plt_rtt);
    }
}

#[test]
fn campaign_summarize_writes_the_csv() {
    let dir = tempfile::tempdir().unwrap();
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    let csv = dir.path().join("summary.csv");
    let out = bin()
        .args(["campaign", "summarize", "--in"])
        .arg(fixtures.join("dataset_small.jsonl"))
        .arg("--out")
        .arg(&csv)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(
        std::fs::read_to_string(&csv).unwrap(),
        std::fs::read_to_string(fixtures.join("dataset_small.summary.csv")).unwrap()
    );
    assert!(String::from_utf8(out.stdout).unwrap().contains("== doc_plus_assets =="));
    assert!(dir.path().join("summary.txt").exists());
}

#[test]
fn unknown_profile_fails_cleanly() {
    let out = bin()
        .args([
            "visit",
            "--combo",
            "doq+h3_1rtt",
            "--profile",
            "satellite",
            "--page",
            "single_doc",
        ])
        .args(["--server", "127.0.0.1", "--ca", "/nonexistent.pem"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("satellite"));
}
