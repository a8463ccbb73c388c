use std::net::Ipv4Addr;

use ipnet::Ipv4Net;
use thiserror::Error;

use crate::device::PeerId;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TunnelError {
    #[error("unknown peer")]
    UnknownPeer,
    #[error("peer public key already registered")]
    DuplicatePeer,
    #[error("allowed IPs {0} overlap another peer")]
    OverlappingAllowedIps(Ipv4Net),
    #[error("no endpoint known for peer {0:?}")]
    NoEndpoint(PeerId),
    #[error("no peer allowed to carry traffic for {0}")]
    NoRoute(Ipv4Addr),
    #[error("session with peer {0:?} not yet confirmed by the initiator")]
    AwaitingConfirmation(PeerId),
    #[error("malformed packet")]
    Malformed,
    #[error("no handshake in flight with index {0:#010x}")]
    UnknownHandshakeIndex(u32),
    #[error("handshake response failed to authenticate")]
    HandshakeAuthentication,
    #[error("key agreement produced a degenerate secret")]
    DegenerateKey,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid key {0:?}: expected 32 bytes of base64")]
    Key(String),
    #[error(transparent)]
    Tunnel(#[from] TunnelError),
}
