use std::net::{IpAddr, Ipv4Addr};

use crate::emulink::{DatagramRelay, StreamRelay, StreamRelayOptions};
use crate::endpoint::{ContentStore, ListenAddrs, Server, ServerConfig, ZoneStore};
use crate::scenario::AccessProfile;
use crate::visit::Targets;

use super::CampaignError;

/// A server plus the three relays that shape its traffic for one profile:
/// DoUDP and QUIC through datagram relays, DoH through a stream relay.
pub struct Testbed {
    profile: AccessProfile,
    server: Server,
    udp: DatagramRelay,
    tls: StreamRelay,
    quic: DatagramRelay,
}

/// Zone that points `name` at the loopback address the relays listen on.
pub fn loopback_zone(name: &str) -> Result<ZoneStore, CampaignError> {
    let mut zone = ZoneStore::new();
    zone.insert(name, IpAddr::V4(Ipv4Addr::LOCALHOST), 300)?;
    Ok(zone)
}

impl Testbed {
    pub fn start(
        profile: &AccessProfile,
        config: ServerConfig,
        zone: ZoneStore,
        content: ContentStore,
        stream_options: StreamRelayOptions,
    ) -> Result<Self, CampaignError> {
        let server = Server::start(zone, content, config, ListenAddrs::default())?;
        let udp = DatagramRelay::start(profile, server.udp_addr())?;
        let tls = StreamRelay::start(profile, server.tls_addr(), stream_options)?;
        let quic = DatagramRelay::start(profile, server.quic_addr())?;
        Ok(Self {
            profile: profile.clone(),
            server,
            udp,
            tls,
            quic,
        })
    }

    pub fn profile(&self) -> &AccessProfile {
        &self.profile
    }

    pub fn server(&self) -> &Server {
        &self.server
    }

    pub fn targets(&self) -> Targets {
        Targets {
            doudp: self.udp.local_addr(),
            doh: self.tls.local_addr(),
            quic: self.quic.local_addr(),
            prime: self.server.quic_addr(),
        }
    }

    /// Stops the relays (dropping anything queued) and the server.
    pub fn shutdown(mut self) {
        self.udp.shutdown(false);
        self.tls.shutdown(false);
        self.quic.shutdown(false);
        self.server.shutdown();
    }
}
