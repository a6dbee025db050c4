use std::collections::{HashMap, VecDeque};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use bytes::Bytes;
use rustls::client::{ClientSessionStore, Tls12ClientSessionValue, Tls13ClientSessionValue};
use rustls::pki_types::ServerName;
use rustls::NamedGroup;
use tokio::sync::Notify;

const MAX_TICKETS: usize = 8;
const MAX_TOKENS: usize = 4;

#[derive(Debug, Default)]
struct Entry {
    tickets: VecDeque<Tls13ClientSessionValue>,
    tokens: VecDeque<Bytes>,
    kx_hint: Option<NamedGroup>,
    obtained_at: Option<Instant>,
}

/// Client-side resumption state per server name: TLS 1.3 session tickets
/// and QUIC address-validation tokens. Each ticket is handed out once.
#[derive(Debug, Default)]
pub struct TicketCache {
    entries: Mutex<HashMap<String, Entry>>,
    changed: Notify,
}

impl TicketCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn ticket_count(&self, server_name: &str) -> usize {
        self.entries
            .lock()
            .unwrap()
            .get(server_name)
            .map_or(0, |e| e.tickets.len())
    }

    pub fn token_count(&self, server_name: &str) -> usize {
        self.entries
            .lock()
            .unwrap()
            .get(server_name)
            .map_or(0, |e| e.tokens.len())
    }

    pub fn obtained_at(&self, server_name: &str) -> Option<Instant> {
        self.entries
            .lock()
            .unwrap()
            .get(server_name)
            .and_then(|e| e.obtained_at)
    }

    /// Forgets tickets and tokens (key-exchange hints are kept).
    pub fn clear(&self) {
        for e in self.entries.lock().unwrap().values_mut() {
            e.tickets.clear();
            e.tokens.clear();
            e.obtained_at = None;
        }
    }

    /// Waits until at least one ticket and `tokens` tokens are cached for
    /// `server_name`. Returns false on timeout.
    pub async fn wait_ready(&self, server_name: &str, tokens: usize, timeout: Duration) -> bool {
        let deadline = tokio::time::Instant::now() + timeout;
        loop {
            let notified = self.changed.notified();
            tokio::pin!(notified);
            notified.as_mut().enable();
            if self.ticket_count(server_name) > 0 && self.token_count(server_name) >= tokens {
                return true;
            }
            if tokio::time::timeout_at(deadline, notified).await.is_err() {
                return false;
            }
        }
    }

    fn with_entry<R>(&self, name: &str, f: impl FnOnce(&mut Entry) -> R) -> R {
        let mut map = self.entries.lock().unwrap();
        f(map.entry(name.to_string()).or_default())
    }
}

fn key(name: &ServerName<'_>) -> String {
    name.to_str().into_owned()
}

impl ClientSessionStore for TicketCache {
    fn set_kx_hint(&self, server_name: ServerName<'static>, group: NamedGroup) {
        self.with_entry(&key(&server_name), |e| e.kx_hint = Some(group));
    }

    fn kx_hint(&self, server_name: &ServerName<'_>) -> Option<NamedGroup> {
        self.entries
            .lock()
            .unwrap()
            .get(&key(server_name))
            .and_then(|e| e.kx_hint)
    }

    // TLS 1.2 is never negotiated
    fn set_tls12_session(&self, _: ServerName<'static>, _: Tls12ClientSessionValue) {}

    fn tls12_session(&self, _: &ServerName<'_>) -> Option<Tls12ClientSessionValue> {
        None
    }

    fn remove_tls12_session(&self, _: &ServerName<'static>) {}

    fn insert_tls13_ticket(&self, server_name: ServerName<'static>, value: Tls13ClientSessionValue) {
        self.with_entry(&key(&server_name), |e| {
            if e.tickets.len() == MAX_TICKETS {
                e.tickets.pop_front();
            }
            e.tickets.push_back(value);
            e.obtained_at = Some(Instant::now());
        });
        self.changed.notify_waiters();
    }

    fn take_tls13_ticket(&self, server_name: &ServerName<'static>) -> Option<Tls13ClientSessionValue> {
        self.entries
            .lock()
            .unwrap()
            .get_mut(&key(server_name))
            .and_then(|e| e.tickets.pop_back())
    }
}

impl quinn::TokenStore for TicketCache {
    fn insert(&self, server_name: &str, token: Bytes) {
        self.with_entry(server_name, |e| {
            if e.tokens.len() == MAX_TOKENS {
                e.tokens.pop_front();
            }
            e.tokens.push_back(token);
        });
        self.changed.notify_waiters();
    }

    fn take(&self, server_name: &str) -> Option<Bytes> {
        self.entries
            .lock()
            .unwrap()
            .get_mut(server_name)
            .and_then(|e| e.tokens.pop_back())
    }
}
