use std::io::{ErrorKind, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use tracing::{debug, warn};

use super::clock::{sleep_until, Counters};
use super::{DeliverySchedule, RelayEndpoint, RelayError, RelayKind, RelayStats};
use crate::scenario::{AccessProfile, Direction};

const POLL: Duration = Duration::from_millis(20);
const SEGMENT: usize = 1448;
const CONNECT_TIMEOUT: Duration = Duration::from_secs(2);

#[derive(Debug, Clone, Copy)]
pub struct StreamRelayOptions {
    /// Hold each connection's first client flight for one extra RTT. The
    /// kernel completes the loopback TCP handshake locally, so this is where
    /// the SYN/SYN-ACK round trip is paid.
    pub hold_first_flight: bool,
}

impl Default for StreamRelayOptions {
    fn default() -> Self {
        Self {
            hold_first_flight: true,
        }
    }
}

struct Shared {
    epoch: Instant,
    stop: AtomicBool,
    abort: AtomicBool,
    counters: Counters,
    last_error: Mutex<Option<String>>,
    up: Mutex<DeliverySchedule>,
    down: Mutex<DeliverySchedule>,
    hold: Duration,
    upstream: SocketAddr,
    conns: Mutex<Vec<JoinHandle<()>>>,
}

/// TCP relay: every accepted client connection is paired with a fresh
/// upstream connection and both byte streams are shaped.
pub struct StreamRelay {
    endpoint: RelayEndpoint,
    shared: Arc<Shared>,
    accept: Mutex<Option<JoinHandle<()>>>,
}

enum Chunk {
    Data { release: Instant, data: Vec<u8> },
    Fin { release: Instant },
}

impl StreamRelay {
    pub fn start(
        profile: &AccessProfile,
        upstream: SocketAddr,
        options: StreamRelayOptions,
    ) -> Result<Self, RelayError> {
        let bind = if upstream.is_ipv4() { "127.0.0.1:0" } else { "[::1]:0" };
        let listener = TcpListener::bind(bind).map_err(RelayError::Bind)?;
        let local = listener.local_addr().map_err(RelayError::Bind)?;
        let hold = if options.hold_first_flight {
            Duration::from_secs_f64(profile.rtt_ms / 1000.0)
        } else {
            Duration::ZERO
        };
        let shared = Arc::new(Shared {
            epoch: Instant::now(),
            stop: AtomicBool::new(false),
            abort: AtomicBool::new(false),
            counters: Counters::default(),
            last_error: Mutex::new(None),
            up: Mutex::new(DeliverySchedule::new(profile, Direction::Up)),
            down: Mutex::new(DeliverySchedule::new(profile, Direction::Down)),
            hold,
            upstream,
            conns: Mutex::new(Vec::new()),
        });
        let accept_shared = shared.clone();
        let accept = thread::Builder::new()
            .name("relay-accept".into())
            .spawn(move || accept_loop(listener, accept_shared))
            .map_err(RelayError::Spawn)?;
        debug!(%local, %upstream, profile = %profile.name, "stream relay up");
        Ok(Self {
            endpoint: RelayEndpoint {
                listen_address: local,
                upstream_address: upstream,
                profile: profile.clone(),
                kind: RelayKind::Stream,
            },
            shared,
            accept: Mutex::new(Some(accept)),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.endpoint.listen_address
    }

    pub fn endpoint(&self) -> &RelayEndpoint {
        &self.endpoint
    }

    pub fn stats(&self) -> RelayStats {
        self.shared.counters.snapshot()
    }

    pub fn last_error(&self) -> Option<String> {
        self.shared.last_error.lock().unwrap().clone()
    }

    /// Stops accepting and closes all relayed connections, delivering queued
    /// bytes first when `drain` is set. Idempotent.
    pub fn shutdown(&self, drain: bool) {
        let Some(accept) = self.accept.lock().unwrap().take() else {
            return;
        };
        if !drain {
            self.shared.abort.store(true, Ordering::SeqCst);
        }
        self.shared.stop.store(true, Ordering::SeqCst);
        // unblock accept()
        let _ = TcpStream::connect_timeout(&self.endpoint.listen_address, Duration::from_millis(200));
        let _ = accept.join();
        let conns = std::mem::take(&mut *self.shared.conns.lock().unwrap());
        for c in conns {
            let _ = c.join();
        }
    }
}

impl Drop for StreamRelay {
    fn drop(&mut self) {
        self.shutdown(false);
    }
}

fn accept_loop(listener: TcpListener, shared: Arc<Shared>) {
    for conn in listener.incoming() {
        if shared.stop.load(Ordering::SeqCst) {
            break;
        }
        let client = match conn {
            Ok(c) => c,
            Err(e) => {
                debug!("relay accept: {e}");
                continue;
            }
        };
        let conn_shared = shared.clone();
        let handle = thread::Builder::new()
            .name("relay-conn".into())
            .spawn(move || relay_connection(client, conn_shared));
        let mut conns = shared.conns.lock().unwrap();
        conns.retain(|h| !h.is_finished());
        match handle {
            Ok(h) => conns.push(h),
            Err(e) => warn!("spawning relay connection thread: {e}"),
        }
    }
}

fn note_error(shared: &Shared, what: String) {
    warn!("{what}");
    *shared.last_error.lock().unwrap() = Some(what);
}

fn relay_connection(client: TcpStream, shared: Arc<Shared>) {
    let upstream = match TcpStream::connect_timeout(&shared.upstream, CONNECT_TIMEOUT) {
        Ok(u) => u,
        Err(e) => {
            note_error(&shared, format!("upstream {} refused: {e}", shared.upstream));
            // zero linger turns the close into a reset
            let _ = socket2::SockRef::from(&client).set_linger(Some(Duration::ZERO));
            return;
        }
    };
    let _ = client.set_nodelay(true);
    let _ = upstream.set_nodelay(true);

    let pipes = (|| -> std::io::Result<_> {
        let up = pipe(client.try_clone()?, upstream.try_clone()?, shared.clone(), true)?;
        let down = pipe(upstream.try_clone()?, client.try_clone()?, shared.clone(), false)?;
        Ok([up, down])
    })();
    match pipes {
        Ok(handles) => {
            for h in handles.into_iter().flatten() {
                let _ = h.join();
            }
        }
        Err(e) => note_error(&shared, format!("relay connection setup: {e}")),
    }
}

/// Spawns the reader and writer threads for one direction.
fn pipe(mut from: TcpStream, to: TcpStream, shared: Arc<Shared>, up: bool) -> std::io::Result<[JoinHandle<()>; 2]> {
    from.set_read_timeout(Some(POLL))?;
    let (tx, rx) = mpsc::channel::<Chunk>();
    let writer_shared = shared.clone();
    let writer = thread::Builder::new()
        .name("relay-pipe-tx".into())
        .spawn(move || pipe_writer(rx, to, writer_shared, up))?;
    let reader = thread::Builder::new().name("relay-pipe-rx".into()).spawn(move || {
        let mut buf = vec![0u8; 64 * 1024];
        let mut first = up;
        let mut last_release = Instant::now();
        loop {
            if shared.stop.load(Ordering::SeqCst) {
                break;
            }
            let n = match from.read(&mut buf) {
                Ok(0) => break,
                Ok(n) => n,
                Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => continue,
                Err(_) => break,
            };
            let arrival = Instant::now().saturating_duration_since(shared.epoch);
            let schedule = if up { &shared.up } else { &shared.down };
            let mut schedule = schedule.lock().unwrap();
            for segment in buf[..n].chunks(SEGMENT) {
                let hold = if first { shared.hold } else { Duration::ZERO };
                first = false;
                let release = shared.epoch + schedule.admit(arrival, segment.len(), hold);
                last_release = release;
                if tx
                    .send(Chunk::Data {
                        release,
                        data: segment.to_vec(),
                    })
                    .is_err()
                {
                    return;
                }
            }
        }
        let _ = tx.send(Chunk::Fin { release: last_release });
    })?;
    Ok([reader, writer])
}

fn pipe_writer(rx: Receiver<Chunk>, mut to: TcpStream, shared: Arc<Shared>, up: bool) {
    for chunk in rx {
        match chunk {
            Chunk::Data { release, data } => {
                if !sleep_until(release, &shared.abort) {
                    break;
                }
                if to.write_all(&data).is_err() {
                    break;
                }
                shared.counters.record(up, data.len());
            }
            Chunk::Fin { release } => {
                sleep_until(release, &shared.abort);
                break;
            }
        }
    }
    let _ = to.shutdown(Shutdown::Write);
}
