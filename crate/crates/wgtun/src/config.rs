//! JSON device configuration with base64 keys.
//!
//! ```json
//! {
//!   "private_key": "<base64>",
//!   "listen_port": 51820,
//!   "peers": [
//!     { "public_key": "<base64>", "allowed_ips": ["192.168.32.0/20"], "endpoint": "203.0.113.1:51820" }
//!   ]
//! }
//! ```

use std::net::SocketAddr;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use ipnet::Ipv4Net;
use serde::{Deserialize, Serialize};

use crate::device::{PeerConfig, PeerIdentity, TunnelDevice};
use crate::error::ConfigError;
use crate::suite::{Key, StandardSuite};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeerEntry {
    pub public_key: String,
    pub allowed_ips: Vec<Ipv4Net>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<SocketAddr>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceConfig {
    pub private_key: String,
    pub listen_port: u16,
    #[serde(default)]
    pub peers: Vec<PeerEntry>,
}

pub fn encode_key(key: &Key) -> String {
    STANDARD.encode(key)
}

pub fn decode_key(text: &str) -> Result<Key, ConfigError> {
    STANDARD
        .decode(text.trim())
        .ok()
        .and_then(|v| Key::try_from(v).ok())
        .ok_or_else(|| ConfigError::Key(text.to_string()))
}

impl PeerEntry {
    pub fn to_peer_config(&self) -> Result<PeerConfig, ConfigError> {
        Ok(PeerConfig {
            public_key: decode_key(&self.public_key)?,
            allowed_ips: self.allowed_ips.iter().map(|n| n.trunc()).collect(),
            endpoint: self.endpoint,
        })
    }
}

impl DeviceConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data serializes")
    }

    pub fn identity(&self) -> Result<PeerIdentity, ConfigError> {
        Ok(PeerIdentity::from_private_with(
            &StandardSuite,
            decode_key(&self.private_key)?,
        ))
    }

    /// Builds a device; `seed` drives its ephemeral keys and indices.
    pub fn build(&self, seed: u64) -> Result<TunnelDevice, ConfigError> {
        let mut dev = TunnelDevice::new(self.identity()?, self.listen_port, seed);
        for p in &self.peers {
            dev.add_peer(p.to_peer_config()?)?;
        }
        Ok(dev)
    }
}
