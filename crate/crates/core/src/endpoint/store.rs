use std::collections::HashMap;
use std::net::{IpAddr, Ipv4Addr, Ipv6Addr};
use std::path::Path;
use std::sync::Arc;

use bytes::Bytes;

use super::EndpointError;
use crate::dnswire::{self, DnsMessage, CLASS_IN, RCODE_FORMERR, RCODE_NOTIMP, TYPE_A, TYPE_AAAA};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ZoneEntry {
    pub a_records: Vec<Ipv4Addr>,
    pub aaaa_records: Vec<Ipv6Addr>,
    pub ttl: u32,
}

/// Authoritative records, keyed by lowercase name.
#[derive(Debug, Clone, Default)]
pub struct ZoneStore {
    entries: HashMap<String, ZoneEntry>,
}

impl ZoneStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, addr: IpAddr, ttl: u32) -> Result<(), EndpointError> {
        let name = dnswire::normalize_name(name)?;
        let entry = self.entries.entry(name).or_insert_with(|| ZoneEntry {
            ttl,
            ..ZoneEntry::default()
        });
        match addr {
            IpAddr::V4(a) => entry.a_records.push(a),
            IpAddr::V6(a) => entry.aaaa_records.push(a),
        }
        Ok(())
    }

    /// Parses `<name> <A|AAAA> <ttl> <address>` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, EndpointError> {
        let mut zone = Self::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |why: &str| EndpointError::Zone {
                line: i + 1,
                reason: why.to_string(),
            };
            let parts: Vec<&str> = line.split_whitespace().collect();
            let [name, rtype, ttl, addr] = parts[..] else {
                return Err(bad("expected 4 fields"));
            };
            let ttl: u32 = ttl.parse().map_err(|_| bad("bad ttl"))?;
            let addr: IpAddr = addr.parse().map_err(|_| bad("bad address"))?;
            match (rtype.to_ascii_uppercase().as_str(), addr) {
                ("A", IpAddr::V4(_)) | ("AAAA", IpAddr::V6(_)) => {}
                ("A" | "AAAA", _) => return Err(bad("address family does not match type")),
                _ => return Err(bad("type must be A or AAAA")),
            }
            zone.insert(name, addr, ttl).map_err(|e| bad(&e.to_string()))?;
        }
        Ok(zone)
    }

    pub fn load(path: &Path) -> Result<Self, EndpointError> {
        let text = std::fs::read_to_string(path).map_err(|e| EndpointError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::parse(&text)
    }

    pub fn lookup(&self, name: &str) -> Option<&ZoneEntry> {
        self.entries.get(&name.to_ascii_lowercase())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Builds the authoritative answer for one decoded query.
    pub fn answer(&self, query: &DnsMessage) -> DnsMessage {
        if query.flags.qr || query.questions.len() != 1 {
            return dnswire::make_error_response(query, RCODE_FORMERR);
        }
        let q = &query.questions[0];
        if q.qclass != CLASS_IN {
            return dnswire::make_error_response(query, RCODE_NOTIMP);
        }
        let Some(entry) = self.lookup(&q.name) else {
            return dnswire::make_response(query, &[], 0, true)
                .unwrap_or_else(|_| dnswire::make_error_response(query, RCODE_FORMERR));
        };
        let addrs: Vec<IpAddr> = match q.qtype {
            TYPE_A => entry.a_records.iter().map(|a| IpAddr::V4(*a)).collect(),
            TYPE_AAAA => entry.aaaa_records.iter().map(|a| IpAddr::V6(*a)).collect(),
            _ => Vec::new(),
        };
        dnswire::make_response(query, &addrs, entry.ttl, false)
            .unwrap_or_else(|_| dnswire::make_error_response(query, RCODE_FORMERR))
    }

    /// Decodes, answers and re-encodes. `None` for undecodable input.
    pub fn answer_wire(&self, query: &[u8]) -> Option<Vec<u8>> {
        let q = dnswire::decode(query).ok()?;
        dnswire::encode(&self.answer(&q)).ok()
    }
}

#[derive(Debug, Clone)]
pub struct ContentItem {
    pub bytes: Bytes,
    pub content_type: String,
}

/// Static files served over HTTP/3, keyed by absolute path.
#[derive(Debug, Clone, Default)]
pub struct ContentStore {
    items: HashMap<String, Arc<ContentItem>>,
}

pub fn content_type_for(path: &str) -> &'static str {
    let ext = path.rsplit_once('.').map(|(_, e)| e).unwrap_or("");
    match ext {
        "txt" => "text/plain",
        "html" | "htm" => "text/html; charset=utf-8",
        "js" => "application/javascript",
        "css" => "text/css",
        "png" => "image/png",
        "svg" => "image/svg+xml",
        "json" => "application/json",
        _ => "application/octet-stream",
    }
}

impl ContentStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, path: &str, bytes: impl Into<Bytes>, content_type: &str) -> Result<(), EndpointError> {
        if !path.starts_with('/') {
            return Err(EndpointError::ContentPath(path.to_string()));
        }
        self.items.insert(
            path.to_string(),
            Arc::new(ContentItem {
                bytes: bytes.into(),
                content_type: content_type.to_string(),
            }),
        );
        Ok(())
    }

    pub fn get(&self, path: &str) -> Option<Arc<ContentItem>> {
        self.items.get(path).cloned()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Loads every regular file under `root`; `<root>/a/b.txt` is served as
    /// `/a/b.txt`.
    pub fn from_dir(root: &Path) -> Result<Self, EndpointError> {
        let mut store = Self::new();
        let mut pending = vec![root.to_path_buf()];
        while let Some(dir) = pending.pop() {
            let io = |e| EndpointError::Io {
                path: dir.display().to_string(),
                source: e,
            };
            for entry in std::fs::read_dir(&dir).map_err(io)? {
                let entry = entry.map_err(io)?;
                let path = entry.path();
                if entry.file_type().map_err(io)?.is_dir() {
                    pending.push(path);
                    continue;
                }
                let rel = path.strip_prefix(root).expect("walked under root");
                let url: String = rel
                    .components()
                    .map(|c| format!("/{}", c.as_os_str().to_string_lossy()))
                    .collect();
                let bytes = std::fs::read(&path).map_err(|e| EndpointError::Io {
                    path: path.display().to_string(),
                    source: e,
                })?;
                let ct = content_type_for(&url);
                store.insert(&url, bytes, ct)?;
            }
        }
        Ok(store)
    }
}
