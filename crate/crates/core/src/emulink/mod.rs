//! Userspace link emulation on loopback.
//!
//! Two relays stand in for a netem-shaped access link: a datagram relay for
//! all UDP traffic (DoUDP, DoQ, HTTP/3) and a byte-stream relay for the TCP
//! path used by DoH. Both apply a symmetric one-way delay plus
//! store-and-forward serialization at the profile's uplink/downlink rate,
//! keep per-direction FIFO order and never drop anything.

mod clock;
mod datagram;
mod schedule;
mod stream;

use std::net::SocketAddr;

use serde::Serialize;

use crate::scenario::AccessProfile;

pub use datagram::DatagramRelay;
pub use schedule::DeliverySchedule;
pub use stream::{StreamRelay, StreamRelayOptions};

#[derive(Debug, thiserror::Error)]
pub enum RelayError {
    #[error("binding relay socket: {0}")]
    Bind(#[source] std::io::Error),
    #[error("relay thread: {0}")]
    Spawn(#[source] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RelayKind {
    Datagram,
    Stream,
}

/// Static description of a running relay.
#[derive(Debug, Clone, Serialize)]
pub struct RelayEndpoint {
    pub listen_address: SocketAddr,
    pub upstream_address: SocketAddr,
    pub profile: AccessProfile,
    pub kind: RelayKind,
}

/// Per-direction unit and byte counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct RelayStats {
    pub up_units: u64,
    pub up_bytes: u64,
    pub down_units: u64,
    pub down_bytes: u64,
}

pub fn start_datagram_relay(profile: &AccessProfile, upstream: SocketAddr) -> Result<DatagramRelay, RelayError> {
    DatagramRelay::start(profile, upstream)
}

pub fn start_stream_relay(
    profile: &AccessProfile,
    upstream: SocketAddr,
    options: StreamRelayOptions,
) -> Result<StreamRelay, RelayError> {
    StreamRelay::start(profile, upstream, options)
}
