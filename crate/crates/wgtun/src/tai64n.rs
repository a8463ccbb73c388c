//! TAI64N timestamps used by handshake initiations for replay protection.
//!
//! The 12-byte encoding is an 8-byte big-endian TAI64 label followed by a
//! 4-byte big-endian nanosecond count, so byte-wise comparison orders the same
//! way as time does.

use std::fmt;
use std::time::Duration;

/// Label of the UNIX epoch in TAI64, including the 10 s TAI-UTC offset at 1970.
const TAI64_UNIX_EPOCH: u64 = (1 << 62) + 10;

pub const TAI64N_LEN: usize = 12;

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Tai64n {
    seconds: u64,
    nanoseconds: u32,
}

impl Tai64n {
    /// The zero timestamp; every real timestamp compares greater.
    pub const ZERO: Tai64n = Tai64n {
        seconds: 0,
        nanoseconds: 0,
    };

    pub fn new(seconds: u64, nanoseconds: u32) -> Option<Self> {
        (nanoseconds < 1_000_000_000).then_some(Tai64n {
            seconds,
            nanoseconds,
        })
    }

    /// Timestamp for a point `since_unix` after 1970-01-01T00:00:00Z.
    pub fn from_unix(since_unix: Duration) -> Self {
        Tai64n {
            seconds: TAI64_UNIX_EPOCH + since_unix.as_secs(),
            nanoseconds: since_unix.subsec_nanos(),
        }
    }

    pub fn seconds(&self) -> u64 {
        self.seconds
    }

    pub fn nanoseconds(&self) -> u32 {
        self.nanoseconds
    }

    pub fn to_bytes(self) -> [u8; TAI64N_LEN] {
        let mut out = [0u8; TAI64N_LEN];
        out[..8].copy_from_slice(&self.seconds.to_be_bytes());
        out[8..].copy_from_slice(&self.nanoseconds.to_be_bytes());
        out
    }

    /// Decodes a 12-byte timestamp; rejects nanosecond fields of 10^9 or more.
    pub fn from_bytes(bytes: &[u8]) -> Option<Self> {
        if bytes.len() != TAI64N_LEN {
            return None;
        }
        let seconds = u64::from_be_bytes(bytes[..8].try_into().ok()?);
        let nanoseconds = u32::from_be_bytes(bytes[8..].try_into().ok()?);
        Tai64n::new(seconds, nanoseconds)
    }
}

impl fmt::Debug for Tai64n {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "@{:016x}{:08x}", self.seconds, self.nanoseconds)
    }
}
