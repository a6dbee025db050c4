//! Certificates and TLS configurations shared by every server role.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rcgen::{BasicConstraints, CertificateParams, DnType, IsCa, Issuer, KeyPair};
use rustls::pki_types::pem::PemObject;
use rustls::pki_types::{CertificateDer, PrivateKeyDer, PrivatePkcs8KeyDer};
use rustls::server::{ServerSessionMemoryCache, StoresServerSessions};

use super::EndpointError;

pub const DEFAULT_SERVER_NAME: &str = "test.example";

/// A per-run CA plus one leaf for the server names. Clients pin the CA.
#[derive(Clone)]
pub struct CertBundle {
    pub ca_der: CertificateDer<'static>,
    pub ca_pem: String,
    pub leaf_der: CertificateDer<'static>,
    key_der: Vec<u8>,
}

impl fmt::Debug for CertBundle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CertBundle")
            .field("ca_der_len", &self.ca_der.len())
            .field("leaf_der_len", &self.leaf_der.len())
            .finish_non_exhaustive()
    }
}

impl CertBundle {
    pub fn generate(names: &[&str]) -> Result<Self, EndpointError> {
        let ca_key = KeyPair::generate()?;
        let mut ca_params = CertificateParams::new(Vec::<String>::new())?;
        ca_params
            .distinguished_name
            .push(DnType::CommonName, "quicoalesce testbed CA");
        ca_params.is_ca = IsCa::Ca(BasicConstraints::Unconstrained);
        let ca_cert = ca_params.self_signed(&ca_key)?;
        let issuer = Issuer::new(ca_params, ca_key);

        let leaf_key = KeyPair::generate()?;
        let names: Vec<String> = names.iter().map(|s| s.to_string()).collect();
        let mut leaf_params = CertificateParams::new(names)?;
        leaf_params
            .distinguished_name
            .push(DnType::CommonName, "quicoalesce testbed server");
        let leaf_cert = leaf_params.signed_by(&leaf_key, &issuer)?;

        Ok(Self {
            ca_der: ca_cert.der().clone(),
            ca_pem: ca_cert.pem(),
            leaf_der: leaf_cert.der().clone(),
            key_der: leaf_key.serialize_der(),
        })
    }

    fn chain(&self) -> Vec<CertificateDer<'static>> {
        vec![self.leaf_der.clone(), self.ca_der.clone()]
    }

    fn key(&self) -> PrivateKeyDer<'static> {
        PrivateKeyDer::Pkcs8(PrivatePkcs8KeyDer::from(self.key_der.clone()))
    }
}

/// Server-side resumption state shared by all roles. rustls only accepts
/// early data for stateful resumption, so the shared "keyring" is one
/// session store rather than a ticket-encryption key.
#[derive(Clone)]
pub struct TicketKeyring(Arc<SessionStore>);

#[derive(Debug)]
struct SessionStore {
    inner: Arc<ServerSessionMemoryCache>,
    resumed: AtomicU64,
}

impl SessionStore {
    fn hit(&self, found: Option<Vec<u8>>) -> Option<Vec<u8>> {
        if found.is_some() {
            self.resumed.fetch_add(1, Ordering::Relaxed);
        }
        found
    }
}

impl StoresServerSessions for SessionStore {
    fn put(&self, key: Vec<u8>, value: Vec<u8>) -> bool {
        self.inner.put(key, value)
    }

    fn get(&self, key: &[u8]) -> Option<Vec<u8>> {
        self.hit(self.inner.get(key))
    }

    fn take(&self, key: &[u8]) -> Option<Vec<u8>> {
        self.hit(self.inner.take(key))
    }

    fn can_cache(&self) -> bool {
        self.inner.can_cache()
    }
}

impl TicketKeyring {
    pub fn new(capacity: usize) -> Self {
        Self(Arc::new(SessionStore {
            inner: ServerSessionMemoryCache::new(capacity),
            resumed: AtomicU64::new(0),
        }))
    }

    pub fn same_as(&self, other: &TicketKeyring) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }

    /// Number of handshakes that found their ticket in the store.
    pub fn resumptions(&self) -> u64 {
        self.0.resumed.load(Ordering::Relaxed)
    }
}

impl Default for TicketKeyring {
    fn default() -> Self {
        Self::new(4096)
    }
}

impl fmt::Debug for TicketKeyring {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("TicketKeyring")
    }
}

fn provider() -> Arc<rustls::crypto::CryptoProvider> {
    Arc::new(rustls::crypto::ring::default_provider())
}

/// TLS 1.3-only server configuration for the given ALPNs.
pub fn server_crypto(
    certs: &CertBundle,
    keyring: &TicketKeyring,
    alpns: &[&[u8]],
    early_data: bool,
) -> Result<rustls::ServerConfig, EndpointError> {
    let mut cfg = rustls::ServerConfig::builder_with_provider(provider())
        .with_protocol_versions(&[&rustls::version::TLS13])?
        .with_no_client_auth()
        .with_single_cert(certs.chain(), certs.key())?;
    cfg.alpn_protocols = alpns.iter().map(|a| a.to_vec()).collect();
    cfg.session_storage = keyring.0.clone();
    cfg.send_tls13_tickets = 2;
    // QUIC permits only 0 or u32::MAX
    cfg.max_early_data_size = if early_data { u32::MAX } else { 0 };
    Ok(cfg)
}

/// Root store that trusts only the pinned testbed CA.
pub fn pinned_roots(ca: &CertificateDer<'static>) -> Result<rustls::RootCertStore, EndpointError> {
    let mut roots = rustls::RootCertStore::empty();
    roots.add(ca.clone())?;
    Ok(roots)
}

/// TLS 1.3 client configuration pinned to `ca`, without ALPN or
/// resumption. rustls only resumes a ticket under a configuration that
/// shares the verifier it was issued under, so every per-ALPN variant is
/// cloned from one base.
pub fn client_crypto_base(ca: &CertificateDer<'static>) -> Result<rustls::ClientConfig, EndpointError> {
    let mut cfg = rustls::ClientConfig::builder_with_provider(provider())
        .with_protocol_versions(&[&rustls::version::TLS13])?
        .with_root_certificates(pinned_roots(ca)?)
        .with_no_client_auth();
    cfg.resumption = rustls::client::Resumption::disabled();
    Ok(cfg)
}

/// Variant of `base` with resumption disabled, for fresh 1-RTT connections.
pub fn client_crypto_fresh(base: &rustls::ClientConfig, alpns: &[&[u8]]) -> rustls::ClientConfig {
    let mut cfg = base.clone();
    cfg.alpn_protocols = alpns.iter().map(|a| a.to_vec()).collect();
    cfg.resumption = rustls::client::Resumption::disabled();
    cfg.enable_early_data = false;
    cfg
}

/// Variant of `base` that stores tickets in `store` and offers early data
/// when a ticket allows it.
pub fn client_crypto_resuming(
    base: &rustls::ClientConfig,
    alpns: &[&[u8]],
    store: Arc<dyn rustls::client::ClientSessionStore>,
) -> rustls::ClientConfig {
    let mut cfg = client_crypto_fresh(base, alpns);
    cfg.resumption = rustls::client::Resumption::store(store);
    cfg.enable_early_data = true;
    cfg
}

/// Reads the first certificate from a PEM file or buffer.
pub fn ca_from_pem(pem: &[u8]) -> Result<CertificateDer<'static>, EndpointError> {
    CertificateDer::from_pem_slice(pem).map_err(|e| EndpointError::Pem(e.to_string()))
}
