//! Pluggable cryptographic primitives used by the handshake and transport.
//!
//! The handshake only needs key agreement, a 32-byte hash, a keyed MAC and an
//! AEAD whose tag is [`TAG_LEN`] bytes. [`StandardSuite`] provides X25519,
//! BLAKE2s, HMAC-BLAKE2s and ChaCha20-Poly1305; tests may plug in anything
//! else that honours the same sizes.

use blake2::{Blake2s256, Digest};
use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::{ChaCha20Poly1305, Nonce};
use hmac::{Mac, SimpleHmac};
use x25519_dalek::{PublicKey, StaticSecret};

pub const KEY_LEN: usize = 32;
pub const TAG_LEN: usize = 16;

pub type Key = [u8; KEY_LEN];

pub trait CryptoSuite: Clone + Send + Sync + 'static {
    /// Turns 32 random bytes into a usable private key.
    fn clamp(&self, raw: Key) -> Key;

    fn public_key(&self, private: &Key) -> Key;

    /// Shared secret, or `None` when the peer key is degenerate.
    fn agree(&self, private: &Key, public: &Key) -> Option<Key>;

    fn hash(&self, parts: &[&[u8]]) -> Key;

    fn mac(&self, key: &Key, parts: &[&[u8]]) -> Key;

    /// Output is `plaintext.len() + TAG_LEN` bytes.
    fn seal(&self, key: &Key, counter: u64, aad: &[u8], plaintext: &[u8]) -> Vec<u8>;

    fn open(&self, key: &Key, counter: u64, aad: &[u8], ciphertext: &[u8]) -> Option<Vec<u8>>;
}

/// X25519 + ChaCha20-Poly1305 + BLAKE2s.
#[derive(Clone, Copy, Debug, Default)]
pub struct StandardSuite;

fn nonce(counter: u64) -> Nonce {
    let mut n = [0u8; 12];
    n[4..].copy_from_slice(&counter.to_le_bytes());
    Nonce::from(n)
}

impl CryptoSuite for StandardSuite {
    fn clamp(&self, mut raw: Key) -> Key {
        raw[0] &= 248;
        raw[31] &= 127;
        raw[31] |= 64;
        raw
    }

    fn public_key(&self, private: &Key) -> Key {
        PublicKey::from(&StaticSecret::from(*private)).to_bytes()
    }

    fn agree(&self, private: &Key, public: &Key) -> Option<Key> {
        let shared = StaticSecret::from(*private).diffie_hellman(&PublicKey::from(*public));
        shared.was_contributory().then(|| shared.to_bytes())
    }

    fn hash(&self, parts: &[&[u8]]) -> Key {
        let mut h = Blake2s256::new();
        for p in parts {
            h.update(p);
        }
        h.finalize().into()
    }

    fn mac(&self, key: &Key, parts: &[&[u8]]) -> Key {
        let mut m = <SimpleHmac<Blake2s256> as Mac>::new_from_slice(key)
            .expect("HMAC accepts any key length");
        for p in parts {
            m.update(p);
        }
        m.finalize().into_bytes().into()
    }

    fn seal(&self, key: &Key, counter: u64, aad: &[u8], plaintext: &[u8]) -> Vec<u8> {
        ChaCha20Poly1305::new(key.into())
            .encrypt(&nonce(counter), Payload { msg: plaintext, aad })
            .expect("in-memory encryption cannot fail")
    }

    fn open(&self, key: &Key, counter: u64, aad: &[u8], ciphertext: &[u8]) -> Option<Vec<u8>> {
        ChaCha20Poly1305::new(key.into())
            .decrypt(&nonce(counter), Payload { msg: ciphertext, aad })
            .ok()
    }
}
