//! The IK-pattern key exchange carried by initiation and response messages.
//!
//! Both sides keep a chaining key (mixed with every DH result) and a running
//! transcript hash (used as AEAD associated data). The initiator's static key
//! travels encrypted under a key only derivable by someone who knows the
//! responder's static public key, which is what lets the responder stay silent
//! towards strangers.

use crate::messages::{Initiation, Response};
use crate::suite::{CryptoSuite, Key, KEY_LEN, TAG_LEN};
use crate::tai64n::{Tai64n, TAI64N_LEN};

const CONSTRUCTION: &[u8] = b"Noise_IK_25519_ChaChaPoly_BLAKE2s";
const IDENTIFIER: &[u8] = b"wgtun simulated tunnel v1";

/// Transport keys from one side's point of view.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct SessionKeys {
    pub send: Key,
    pub receive: Key,
}

impl std::fmt::Debug for SessionKeys {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("SessionKeys { .. }")
    }
}

/// Handshake state the initiator holds between sending the initiation and
/// receiving the response.
#[derive(Clone)]
pub struct InitiatorState {
    pub local_index: u32,
    pub remote_static: Key,
    chaining: Key,
    hash: Key,
    ephemeral_private: Key,
}

/// What the responder learns from an authenticated initiation.
#[derive(Clone)]
pub struct ReceivedInitiation {
    pub initiator_static: Key,
    pub initiator_index: u32,
    pub timestamp: Tai64n,
    initiator_ephemeral: Key,
    chaining: Key,
    hash: Key,
}

struct Transcript<'s, S> {
    suite: &'s S,
    chaining: Key,
    hash: Key,
}

impl<'s, S: CryptoSuite> Transcript<'s, S> {
    fn start(suite: &'s S, responder_static: &Key) -> Self {
        let chaining = suite.hash(&[CONSTRUCTION]);
        let hash = suite.hash(&[&suite.hash(&[&chaining, IDENTIFIER]), responder_static]);
        Transcript {
            suite,
            chaining,
            hash,
        }
    }

    fn resume(suite: &'s S, chaining: Key, hash: Key) -> Self {
        Transcript {
            suite,
            chaining,
            hash,
        }
    }

    fn mix_hash(&mut self, data: &[u8]) {
        self.hash = self.suite.hash(&[&self.hash, data]);
    }

    fn mix_key(&mut self, input: &[u8]) {
        let temp = self.suite.mac(&self.chaining, &[input]);
        self.chaining = self.suite.mac(&temp, &[&[1]]);
    }

    fn mix_key_and_derive(&mut self, input: &[u8]) -> Key {
        let temp = self.suite.mac(&self.chaining, &[input]);
        self.chaining = self.suite.mac(&temp, &[&[1]]);
        self.suite.mac(&temp, &[&self.chaining, &[2]])
    }

    fn encrypt_and_hash(&mut self, key: &Key, plaintext: &[u8]) -> Vec<u8> {
        let ct = self.suite.seal(key, 0, &self.hash, plaintext);
        self.mix_hash(&ct);
        ct
    }

    fn decrypt_and_hash(&mut self, key: &Key, ciphertext: &[u8]) -> Option<Vec<u8>> {
        let pt = self.suite.open(key, 0, &self.hash, ciphertext)?;
        self.mix_hash(ciphertext);
        Some(pt)
    }

    /// Splits the final chaining key into (initiator→responder, responder→initiator).
    fn split(&self) -> (Key, Key) {
        let temp = self.suite.mac(&self.chaining, &[&[]]);
        let first = self.suite.mac(&temp, &[&[1]]);
        let second = self.suite.mac(&temp, &[&first, &[2]]);
        (first, second)
    }
}

pub struct InitiatorKeys<'a> {
    pub static_private: &'a Key,
    pub static_public: &'a Key,
    pub ephemeral_private: Key,
}

/// Builds an initiation towards `remote_static`. `None` only if a DH result is
/// degenerate.
pub fn create_initiation<S: CryptoSuite>(
    suite: &S,
    keys: InitiatorKeys<'_>,
    remote_static: &Key,
    local_index: u32,
    timestamp: Tai64n,
) -> Option<(Initiation, InitiatorState)> {
    let mut t = Transcript::start(suite, remote_static);
    let ephemeral = suite.public_key(&keys.ephemeral_private);
    t.mix_hash(&ephemeral);
    t.mix_key(&ephemeral);

    let k = t.mix_key_and_derive(&suite.agree(&keys.ephemeral_private, remote_static)?);
    let encrypted_static = t.encrypt_and_hash(&k, keys.static_public);

    let k = t.mix_key_and_derive(&suite.agree(keys.static_private, remote_static)?);
    let encrypted_timestamp = t.encrypt_and_hash(&k, &timestamp.to_bytes());

    let msg = Initiation {
        sender_index: local_index,
        ephemeral,
        encrypted_static: encrypted_static.try_into().ok()?,
        encrypted_timestamp: encrypted_timestamp.try_into().ok()?,
    };
    let state = InitiatorState {
        local_index,
        remote_static: *remote_static,
        chaining: t.chaining,
        hash: t.hash,
        ephemeral_private: keys.ephemeral_private,
    };
    Some((msg, state))
}

/// Authenticates an initiation addressed to the holder of `local_private`.
/// Returns `None` on any failure; the caller must then stay silent.
pub fn consume_initiation<S: CryptoSuite>(
    suite: &S,
    local_private: &Key,
    local_public: &Key,
    msg: &Initiation,
) -> Option<ReceivedInitiation> {
    let mut t = Transcript::start(suite, local_public);
    t.mix_hash(&msg.ephemeral);
    t.mix_key(&msg.ephemeral);

    let k = t.mix_key_and_derive(&suite.agree(local_private, &msg.ephemeral)?);
    let initiator_static: Key = t
        .decrypt_and_hash(&k, &msg.encrypted_static)?
        .try_into()
        .ok()?;

    let k = t.mix_key_and_derive(&suite.agree(local_private, &initiator_static)?);
    let ts = t.decrypt_and_hash(&k, &msg.encrypted_timestamp)?;
    debug_assert_eq!(ts.len(), TAI64N_LEN);
    let timestamp = Tai64n::from_bytes(&ts)?;

    Some(ReceivedInitiation {
        initiator_static,
        initiator_index: msg.sender_index,
        timestamp,
        initiator_ephemeral: msg.ephemeral,
        chaining: t.chaining,
        hash: t.hash,
    })
}

/// Builds the response and the responder's transport keys.
pub fn create_response<S: CryptoSuite>(
    suite: &S,
    received: &ReceivedInitiation,
    ephemeral_private: Key,
    local_index: u32,
) -> Option<(Response, SessionKeys)> {
    let mut t = Transcript::resume(suite, received.chaining, received.hash);
    let ephemeral = suite.public_key(&ephemeral_private);
    t.mix_hash(&ephemeral);
    t.mix_key(&ephemeral);
    t.mix_key(&suite.agree(&ephemeral_private, &received.initiator_ephemeral)?);
    t.mix_key(&suite.agree(&ephemeral_private, &received.initiator_static)?);
    let k = t.mix_key_and_derive(&[0u8; KEY_LEN]);
    let nothing = t.encrypt_and_hash(&k, &[]);

    let (i2r, r2i) = t.split();
    let msg = Response {
        sender_index: local_index,
        receiver_index: received.initiator_index,
        ephemeral,
        encrypted_nothing: nothing.try_into().ok()?,
    };
    Some((
        msg,
        SessionKeys {
            send: r2i,
            receive: i2r,
        },
    ))
}

/// Completes the handshake on the initiator side.
pub fn consume_response<S: CryptoSuite>(
    suite: &S,
    state: &InitiatorState,
    local_static_private: &Key,
    msg: &Response,
) -> Option<SessionKeys> {
    if msg.receiver_index != state.local_index {
        return None;
    }
    let mut t = Transcript::resume(suite, state.chaining, state.hash);
    t.mix_hash(&msg.ephemeral);
    t.mix_key(&msg.ephemeral);
    t.mix_key(&suite.agree(&state.ephemeral_private, &msg.ephemeral)?);
    t.mix_key(&suite.agree(local_static_private, &msg.ephemeral)?);
    let k = t.mix_key_and_derive(&[0u8; KEY_LEN]);
    let nothing = t.decrypt_and_hash(&k, &msg.encrypted_nothing)?;
    debug_assert!(nothing.is_empty() && msg.encrypted_nothing.len() == TAG_LEN);

    let (i2r, r2i) = t.split();
    Some(SessionKeys {
        send: i2r,
        receive: r2i,
    })
}
