use std::net::SocketAddr;
use std::sync::Arc;

use tokio::net::UdpSocket;
use tracing::{debug, warn};

use super::{EndpointError, EventKind, Shared};

pub(super) async fn spawn(addr: SocketAddr, shared: Arc<Shared>) -> Result<SocketAddr, EndpointError> {
    let socket = UdpSocket::bind(addr)
        .await
        .map_err(|source| EndpointError::Bind { addr, source })?;
    let local = socket
        .local_addr()
        .map_err(|source| EndpointError::Bind { addr, source })?;
    tokio::spawn(async move {
        let mut buf = vec![0u8; 4096];
        loop {
            let (n, peer) = match socket.recv_from(&mut buf).await {
                Ok(r) => r,
                Err(e) => {
                    // ICMP errors from earlier sends surface here on Linux
                    debug!("doudp recv: {e}");
                    continue;
                }
            };
            let Some(resp) = shared.zone.answer_wire(&buf[..n]) else {
                debug!(%peer, len = n, "dropping undecodable datagram");
                continue;
            };
            shared.events.push(
                0,
                EventKind::DnsQuery {
                    transport: "udp",
                    early: false,
                },
            );
            if let Err(e) = socket.send_to(&resp, peer).await {
                warn!(%peer, "doudp send: {e}");
            }
        }
    });
    Ok(local)
}
