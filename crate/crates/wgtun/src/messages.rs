//! Datagram framing. All integers are big-endian.
//!
//! ```text
//! initiation (116 bytes)
//!   0  type = 1 | reserved (3, zero)
//!   4  sender index (4)
//!   8  ephemeral public key (32)
//!  40  encrypted static public key (32 + 16 tag)
//!  88  encrypted TAI64N timestamp (12 + 16 tag)
//!
//! response (60 bytes)
//!   0  type = 2 | reserved (3, zero)
//!   4  sender index (4)
//!   8  receiver index (4)
//!  12  ephemeral public key (32)
//!  44  encrypted empty payload (0 + 16 tag)
//!
//! transport (32 + n bytes)
//!   0  type = 4 | reserved (3, zero)
//!   4  receiver index (4)
//!   8  counter (8)
//!  16  encrypted packet (n + 16 tag); bytes 0..16 are the associated data
//! ```

use crate::suite::{KEY_LEN, TAG_LEN};
use crate::tai64n::TAI64N_LEN;

pub const TYPE_INITIATION: u8 = 1;
pub const TYPE_RESPONSE: u8 = 2;
pub const TYPE_TRANSPORT: u8 = 4;

pub const INITIATION_LEN: usize = 4 + 4 + KEY_LEN + (KEY_LEN + TAG_LEN) + (TAI64N_LEN + TAG_LEN);
pub const RESPONSE_LEN: usize = 4 + 4 + 4 + KEY_LEN + TAG_LEN;
pub const TRANSPORT_HEADER_LEN: usize = 16;
pub const TRANSPORT_MIN_LEN: usize = TRANSPORT_HEADER_LEN + TAG_LEN;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Initiation {
    pub sender_index: u32,
    pub ephemeral: [u8; KEY_LEN],
    pub encrypted_static: [u8; KEY_LEN + TAG_LEN],
    pub encrypted_timestamp: [u8; TAI64N_LEN + TAG_LEN],
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Response {
    pub sender_index: u32,
    pub receiver_index: u32,
    pub ephemeral: [u8; KEY_LEN],
    pub encrypted_nothing: [u8; TAG_LEN],
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Transport<'a> {
    pub receiver_index: u32,
    pub counter: u64,
    /// The 16 header bytes, authenticated as associated data.
    pub header: &'a [u8],
    pub ciphertext: &'a [u8],
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Message<'a> {
    Initiation(Initiation),
    Response(Response),
    Transport(Transport<'a>),
}

fn type_prefix(t: u8) -> [u8; 4] {
    [t, 0, 0, 0]
}

fn read_u32(b: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(b[at..at + 4].try_into().unwrap())
}

fn read_array<const N: usize>(b: &[u8], at: usize) -> [u8; N] {
    b[at..at + N].try_into().unwrap()
}

impl Initiation {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(INITIATION_LEN);
        out.extend_from_slice(&type_prefix(TYPE_INITIATION));
        out.extend_from_slice(&self.sender_index.to_be_bytes());
        out.extend_from_slice(&self.ephemeral);
        out.extend_from_slice(&self.encrypted_static);
        out.extend_from_slice(&self.encrypted_timestamp);
        out
    }
}

impl Response {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(RESPONSE_LEN);
        out.extend_from_slice(&type_prefix(TYPE_RESPONSE));
        out.extend_from_slice(&self.sender_index.to_be_bytes());
        out.extend_from_slice(&self.receiver_index.to_be_bytes());
        out.extend_from_slice(&self.ephemeral);
        out.extend_from_slice(&self.encrypted_nothing);
        out
    }
}

pub fn transport_header(receiver_index: u32, counter: u64) -> [u8; TRANSPORT_HEADER_LEN] {
    let mut h = [0u8; TRANSPORT_HEADER_LEN];
    h[..4].copy_from_slice(&type_prefix(TYPE_TRANSPORT));
    h[4..8].copy_from_slice(&receiver_index.to_be_bytes());
    h[8..].copy_from_slice(&counter.to_be_bytes());
    h
}

/// Parses a datagram; `None` for unknown types, bad lengths or nonzero reserved bytes.
pub fn parse(datagram: &[u8]) -> Option<Message<'_>> {
    if datagram.len() < 4 || datagram[1..4] != [0, 0, 0] {
        return None;
    }
    match datagram[0] {
        TYPE_INITIATION if datagram.len() == INITIATION_LEN => {
            Some(Message::Initiation(Initiation {
                sender_index: read_u32(datagram, 4),
                ephemeral: read_array(datagram, 8),
                encrypted_static: read_array(datagram, 40),
                encrypted_timestamp: read_array(datagram, 88),
            }))
        }
        TYPE_RESPONSE if datagram.len() == RESPONSE_LEN => Some(Message::Response(Response {
            sender_index: read_u32(datagram, 4),
            receiver_index: read_u32(datagram, 8),
            ephemeral: read_array(datagram, 12),
            encrypted_nothing: read_array(datagram, 44),
        })),
        TYPE_TRANSPORT if datagram.len() >= TRANSPORT_MIN_LEN => {
            Some(Message::Transport(Transport {
                receiver_index: read_u32(datagram, 4),
                counter: u64::from_be_bytes(read_array(datagram, 8)),
                header: &datagram[..TRANSPORT_HEADER_LEN],
                ciphertext: &datagram[TRANSPORT_HEADER_LEN..],
            }))
        }
        _ => None,
    }
}
