use std::collections::hash_map::Entry;
use std::collections::HashMap;
use std::io::ErrorKind;
use std::net::{SocketAddr, UdpSocket};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use tracing::{debug, warn};

use super::clock::{sleep_until, Counters};
use super::{DeliverySchedule, RelayEndpoint, RelayError, RelayKind, RelayStats};
use crate::scenario::{AccessProfile, Direction};

const POLL: Duration = Duration::from_millis(20);
const SESSION_IDLE: Duration = Duration::from_secs(120);
const MAX_DATAGRAM: usize = 65_535;

struct Unit<T> {
    release: Instant,
    target: T,
    data: Vec<u8>,
}

struct Shared {
    epoch: Instant,
    stop: AtomicBool,
    abort: AtomicBool,
    counters: Counters,
    last_error: Mutex<Option<String>>,
}

impl Shared {
    fn since_epoch(&self, at: Instant) -> Duration {
        at.saturating_duration_since(self.epoch)
    }

    fn note_error(&self, what: String) {
        warn!("{what}");
        *self.last_error.lock().unwrap() = Some(what);
    }
}

struct Session {
    socket: Arc<UdpSocket>,
    last_active: Arc<AtomicU64>,
    dead: Arc<AtomicBool>,
    handle: JoinHandle<()>,
}

/// Datagram relay: every datagram from a client is forwarded from a
/// per-client upstream socket, replies go back to that client.
pub struct DatagramRelay {
    endpoint: RelayEndpoint,
    shared: Arc<Shared>,
    threads: Mutex<Option<Vec<JoinHandle<()>>>>,
}

impl DatagramRelay {
    pub fn start(profile: &AccessProfile, upstream: SocketAddr) -> Result<Self, RelayError> {
        let bind_ip: SocketAddr = if upstream.is_ipv4() {
            "127.0.0.1:0".parse().unwrap()
        } else {
            "[::1]:0".parse().unwrap()
        };
        let listen = UdpSocket::bind(bind_ip).map_err(RelayError::Bind)?;
        listen.set_read_timeout(Some(POLL)).map_err(RelayError::Bind)?;
        let listen = Arc::new(listen);
        let local = listen.local_addr().map_err(RelayError::Bind)?;

        let shared = Arc::new(Shared {
            epoch: Instant::now(),
            stop: AtomicBool::new(false),
            abort: AtomicBool::new(false),
            counters: Counters::default(),
            last_error: Mutex::new(None),
        });

        let (up_tx, up_rx) = mpsc::channel::<Unit<Arc<UdpSocket>>>();
        let (down_tx, down_rx) = mpsc::channel::<Unit<SocketAddr>>();
        let up_schedule = DeliverySchedule::new(profile, Direction::Up);
        let down_schedule = Arc::new(Mutex::new(DeliverySchedule::new(profile, Direction::Down)));

        let mut threads = Vec::new();
        {
            let shared = shared.clone();
            threads.push(spawn("relay-up-tx", move || up_sender(up_rx, shared))?);
        }
        {
            let shared = shared.clone();
            let listen = listen.clone();
            threads.push(spawn("relay-down-tx", move || down_sender(down_rx, listen, shared))?);
        }
        {
            let shared = shared.clone();
            let listen = listen.clone();
            let ctx = ClientSide {
                listen,
                upstream,
                bind_ip,
                shared,
                up_schedule,
                up_tx,
                down_schedule,
                down_tx,
            };
            threads.push(spawn("relay-client-rx", move || ctx.run())?);
        }

        debug!(%local, %upstream, profile = %profile.name, "datagram relay up");
        Ok(Self {
            endpoint: RelayEndpoint {
                listen_address: local,
                upstream_address: upstream,
                profile: profile.clone(),
                kind: RelayKind::Datagram,
            },
            shared,
            threads: Mutex::new(Some(threads)),
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

    /// Most recent forwarding error, e.g. an unreachable upstream.
    pub fn last_error(&self) -> Option<String> {
        self.shared.last_error.lock().unwrap().clone()
    }

    /// Stops accepting datagrams. With `drain`, units already queued are
    /// still delivered at their release time; otherwise they are dropped.
    /// Calling it again is a no-op.
    pub fn shutdown(&self, drain: bool) {
        let Some(threads) = self.threads.lock().unwrap().take() else {
            return;
        };
        if !drain {
            self.shared.abort.store(true, Ordering::SeqCst);
        }
        self.shared.stop.store(true, Ordering::SeqCst);
        for t in threads {
            let _ = t.join();
        }
    }
}

impl Drop for DatagramRelay {
    fn drop(&mut self) {
        self.shutdown(false);
    }
}

fn spawn(name: &str, f: impl FnOnce() + Send + 'static) -> Result<JoinHandle<()>, RelayError> {
    thread::Builder::new()
        .name(name.to_string())
        .spawn(f)
        .map_err(RelayError::Spawn)
}

struct ClientSide {
    listen: Arc<UdpSocket>,
    upstream: SocketAddr,
    bind_ip: SocketAddr,
    shared: Arc<Shared>,
    up_schedule: DeliverySchedule,
    up_tx: Sender<Unit<Arc<UdpSocket>>>,
    down_schedule: Arc<Mutex<DeliverySchedule>>,
    down_tx: Sender<Unit<SocketAddr>>,
}

impl ClientSide {
    fn run(mut self) {
        let mut sessions: HashMap<SocketAddr, Session> = HashMap::new();
        let mut buf = vec![0u8; MAX_DATAGRAM];
        while !self.shared.stop.load(Ordering::SeqCst) {
            let (len, from) = match self.listen.recv_from(&mut buf) {
                Ok(r) => r,
                Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => continue,
                Err(e) => {
                    // ICMP errors for earlier replies surface here; keep going.
                    debug!("relay listen socket: {e}");
                    continue;
                }
            };
            let arrival = Instant::now();

            if sessions.get(&from).is_some_and(|s| s.dead.load(Ordering::SeqCst)) {
                if let Some(s) = sessions.remove(&from) {
                    let _ = s.handle.join();
                }
            }
            let session = match sessions.entry(from) {
                Entry::Occupied(e) => e.into_mut(),
                Entry::Vacant(e) => match self.open_session(from) {
                    Ok(s) => e.insert(s),
                    Err(err) => {
                        self.shared.note_error(format!("relay session for {from}: {err}"));
                        continue;
                    }
                },
            };
            session
                .last_active
                .store(self.shared.since_epoch(arrival).as_millis() as u64, Ordering::Relaxed);

            let release = self
                .up_schedule
                .admit(self.shared.since_epoch(arrival), len, Duration::ZERO);
            let unit = Unit {
                release: self.shared.epoch + release,
                target: session.socket.clone(),
                data: buf[..len].to_vec(),
            };
            if self.up_tx.send(unit).is_err() {
                break;
            }
        }
        drop(self.up_tx);
        for (_, s) in sessions {
            let _ = s.handle.join();
        }
    }

    fn open_session(&self, client: SocketAddr) -> std::io::Result<Session> {
        let socket = UdpSocket::bind(self.bind_ip)?;
        socket.connect(self.upstream)?;
        socket.set_read_timeout(Some(POLL))?;
        let socket = Arc::new(socket);
        let last_active = Arc::new(AtomicU64::new(0));
        let dead = Arc::new(AtomicBool::new(false));
        let ctx = UpstreamSide {
            socket: socket.clone(),
            client,
            shared: self.shared.clone(),
            schedule: self.down_schedule.clone(),
            tx: self.down_tx.clone(),
            last_active: last_active.clone(),
            dead: dead.clone(),
        };
        let handle = thread::Builder::new()
            .name("relay-upstream-rx".into())
            .spawn(move || ctx.run())?;
        Ok(Session {
            socket,
            last_active,
            dead,
            handle,
        })
    }
}

struct UpstreamSide {
    socket: Arc<UdpSocket>,
    client: SocketAddr,
    shared: Arc<Shared>,
    schedule: Arc<Mutex<DeliverySchedule>>,
    tx: Sender<Unit<SocketAddr>>,
    last_active: Arc<AtomicU64>,
    dead: Arc<AtomicBool>,
}

impl UpstreamSide {
    fn run(self) {
        let mut buf = vec![0u8; MAX_DATAGRAM];
        while !self.shared.stop.load(Ordering::SeqCst) {
            let len = match self.socket.recv(&mut buf) {
                Ok(n) => n,
                Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                    let idle_since = Duration::from_millis(self.last_active.load(Ordering::Relaxed));
                    if self.shared.since_epoch(Instant::now()) > idle_since + SESSION_IDLE {
                        break;
                    }
                    continue;
                }
                Err(e) => {
                    self.shared.note_error(format!(
                        "upstream {} unreachable: {e}",
                        self.socket.peer_addr().map(|a| a.to_string()).unwrap_or_default()
                    ));
                    continue;
                }
            };
            let arrival = Instant::now();
            let since = self.shared.since_epoch(arrival);
            self.last_active.store(since.as_millis() as u64, Ordering::Relaxed);
            // Holding the lock across send keeps channel order == schedule order.
            let mut schedule = self.schedule.lock().unwrap();
            let release = schedule.admit(since, len, Duration::ZERO);
            let unit = Unit {
                release: self.shared.epoch + release,
                target: self.client,
                data: buf[..len].to_vec(),
            };
            if self.tx.send(unit).is_err() {
                break;
            }
        }
        self.dead.store(true, Ordering::SeqCst);
    }
}

fn up_sender(rx: Receiver<Unit<Arc<UdpSocket>>>, shared: Arc<Shared>) {
    for unit in rx {
        if !sleep_until(unit.release, &shared.abort) {
            continue;
        }
        match unit.target.send(&unit.data) {
            Ok(_) => shared.counters.record(true, unit.data.len()),
            Err(e) => shared.note_error(format!("forwarding upstream: {e}")),
        }
    }
}

fn down_sender(rx: Receiver<Unit<SocketAddr>>, listen: Arc<UdpSocket>, shared: Arc<Shared>) {
    for unit in rx {
        if !sleep_until(unit.release, &shared.abort) {
            continue;
        }
        match listen.send_to(&unit.data, unit.target) {
            Ok(_) => shared.counters.record(false, unit.data.len()),
            Err(e) => debug!("forwarding to client {}: {e}", unit.target),
        }
    }
}
