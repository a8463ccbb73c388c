//! A simulated layer-3 tunnel modelled on WireGuard.
//!
//! The device is a pure state machine: callers feed it inner packets, received
//! datagrams and timer ticks with an explicit current time, and it returns the
//! datagrams to send. Cryptography sits behind [`CryptoSuite`] so the
//! primitives can be swapped without touching the protocol logic.

pub mod config;
pub mod device;
pub mod error;
pub mod ip;
pub mod messages;
pub mod noise;
pub mod replay;
pub mod routing;
pub mod suite;
pub mod tai64n;

pub use config::{DeviceConfig, PeerEntry};
pub use device::{
    Datagram, DeviceEvent, HandshakeStage, InitiationReason, PeerConfig, PeerId, PeerIdentity,
    RekeyPolicy, Role, SealOutput, TickAction, TunnelDevice,
};
pub use error::{ConfigError, TunnelError};
pub use noise::SessionKeys;
pub use suite::{CryptoSuite, Key, StandardSuite};
pub use tai64n::Tai64n;
