use std::collections::VecDeque;
use std::net::{Ipv4Addr, SocketAddr};
use std::time::Duration;

use ipnet::Ipv4Net;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::TunnelError;
use crate::ip;
use crate::messages::{self, Message};
use crate::noise::{self, InitiatorKeys, InitiatorState, SessionKeys};
use crate::replay::ReplayWindow;
use crate::routing::AllowedIps;
use crate::suite::{CryptoSuite, Key, StandardSuite};
use crate::tai64n::Tai64n;

/// Counter values at or above this are never used; the session must be replaced.
const REJECT_AFTER_MESSAGES: u64 = u64::MAX - (1 << 13);
const MAX_QUEUED_PACKETS: usize = 128;
/// 2022-01-01T00:00:00Z; simulated time zero maps here for timestamps.
const DEFAULT_EPOCH_UNIX: Duration = Duration::from_secs(1_640_995_200);

/// Long-term Curve25519 key pair.
#[derive(Clone, PartialEq, Eq)]
pub struct PeerIdentity {
    private_key: Key,
    public_key: Key,
}

impl std::fmt::Debug for PeerIdentity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PeerIdentity")
            .field("public_key", &self.public_key)
            .finish_non_exhaustive()
    }
}

impl PeerIdentity {
    /// Deterministic key pair for `seed` using the standard suite.
    pub fn generate(seed: u64) -> Self {
        Self::generate_with(&StandardSuite, seed)
    }

    pub fn generate_with<S: CryptoSuite>(suite: &S, seed: u64) -> Self {
        let mut raw = [0u8; 32];
        ChaCha20Rng::seed_from_u64(seed).fill_bytes(&mut raw);
        Self::from_private_with(suite, raw)
    }

    pub fn from_private_with<S: CryptoSuite>(suite: &S, private_key: Key) -> Self {
        let private_key = suite.clamp(private_key);
        PeerIdentity {
            public_key: suite.public_key(&private_key),
            private_key,
        }
    }

    pub fn private_key(&self) -> &Key {
        &self.private_key
    }

    pub fn public_key(&self) -> &Key {
        &self.public_key
    }
}

/// Static configuration for one remote peer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PeerConfig {
    pub public_key: Key,
    pub allowed_ips: Vec<Ipv4Net>,
    pub endpoint: Option<SocketAddr>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RekeyPolicy {
    /// Messages (sent plus received) on a session before a new handshake.
    pub max_messages: u64,
    pub max_session_age: Duration,
    /// Retransmit an unanswered initiation after this long.
    pub rekey_timeout: Duration,
    /// Stop retrying a handshake after this long.
    pub rekey_attempt_time: Duration,
    /// Sessions older than this are unusable in either direction.
    pub reject_after: Duration,
}

impl Default for RekeyPolicy {
    fn default() -> Self {
        RekeyPolicy {
            max_messages: 1 << 16,
            max_session_age: Duration::from_secs(120),
            rekey_timeout: Duration::from_secs(5),
            rekey_attempt_time: Duration::from_secs(90),
            reject_after: Duration::from_secs(180),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PeerId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Initiator,
    Responder,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HandshakeStage {
    SentInitiation,
    SentResponse,
    Confirmed,
}

/// A UDP payload and where it goes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Datagram {
    pub peer: PeerId,
    pub to: SocketAddr,
    pub bytes: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SealOutput {
    /// Encrypted under the active session.
    Transport(Datagram),
    /// No session yet: the packet was queued and this initiation must be sent.
    HandshakeInitiated(Datagram),
    /// No session yet and a handshake is already in flight; the packet was queued.
    Queued,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DeviceEvent {
    Send(Datagram),
    Deliver { peer: PeerId, packet: Vec<u8> },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitiationReason {
    Rekey,
    Retry,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TickAction {
    Initiation {
        reason: InitiationReason,
        datagram: Datagram,
    },
    SessionExpired {
        peer: PeerId,
    },
    HandshakeAbandoned {
        peer: PeerId,
    },
}

struct Session {
    local_index: u32,
    remote_index: u32,
    keys: SessionKeys,
    send_counter: u64,
    replay: ReplayWindow,
    established_at: Duration,
    messages: u64,
    confirmed: bool,
    role: Role,
}

impl Session {
    fn age(&self, now: Duration) -> Duration {
        now.saturating_sub(self.established_at)
    }
}

struct PendingHandshake {
    state: InitiatorState,
    started_at: Duration,
    sent_at: Duration,
}

struct Peer {
    config: PeerConfig,
    endpoint: Option<SocketAddr>,
    last_timestamp: Tai64n,
    handshake: Option<PendingHandshake>,
    /// Session used for sending; always confirmed.
    current: Option<Session>,
    /// Responder session waiting for the initiator's first transport message.
    next: Option<Session>,
    /// Superseded session, still accepted for receiving.
    previous: Option<Session>,
    queue: VecDeque<Vec<u8>>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Slot {
    Current,
    Next,
    Previous,
}

impl Peer {
    fn slot(&mut self, slot: Slot) -> &mut Option<Session> {
        match slot {
            Slot::Current => &mut self.current,
            Slot::Next => &mut self.next,
            Slot::Previous => &mut self.previous,
        }
    }

    fn find_index(&self, index: u32) -> Option<Slot> {
        [
            (Slot::Current, &self.current),
            (Slot::Next, &self.next),
            (Slot::Previous, &self.previous),
        ]
        .into_iter()
        .find(|(_, s)| s.as_ref().is_some_and(|s| s.local_index == index))
        .map(|(slot, _)| slot)
    }

    fn uses_index(&self, index: u32) -> bool {
        self.find_index(index).is_some()
            || self
                .handshake
                .as_ref()
                .is_some_and(|h| h.state.local_index == index)
    }
}

/// One end of the tunnel: an identity, its peers and their sessions.
///
/// Events (packets to send, datagrams received, timer ticks) must be fed one
/// at a time; the device never blocks and never reads a clock of its own.
pub struct TunnelDevice<S: CryptoSuite = StandardSuite> {
    suite: S,
    identity: PeerIdentity,
    listen_port: u16,
    peers: Vec<Peer>,
    routes: AllowedIps<PeerId>,
    policy: RekeyPolicy,
    rng: ChaCha20Rng,
    epoch: Duration,
    last_sent_timestamp: Tai64n,
}

impl TunnelDevice<StandardSuite> {
    pub fn new(identity: PeerIdentity, listen_port: u16, seed: u64) -> Self {
        Self::with_suite(StandardSuite, identity, listen_port, seed)
    }
}

impl<S: CryptoSuite> TunnelDevice<S> {
    /// `seed` drives ephemeral keys and session indices.
    pub fn with_suite(suite: S, identity: PeerIdentity, listen_port: u16, seed: u64) -> Self {
        TunnelDevice {
            suite,
            identity,
            listen_port,
            peers: Vec::new(),
            routes: AllowedIps::default(),
            policy: RekeyPolicy::default(),
            rng: ChaCha20Rng::seed_from_u64(seed),
            epoch: DEFAULT_EPOCH_UNIX,
            last_sent_timestamp: Tai64n::ZERO,
        }
    }

    pub fn set_rekey_policy(&mut self, policy: RekeyPolicy) {
        self.policy = policy;
    }

    pub fn rekey_policy(&self) -> RekeyPolicy {
        self.policy
    }

    /// UNIX time corresponding to simulated time zero.
    pub fn set_epoch(&mut self, since_unix: Duration) {
        self.epoch = since_unix;
    }

    pub fn identity(&self) -> &PeerIdentity {
        &self.identity
    }

    pub fn public_key(&self) -> &Key {
        self.identity.public_key()
    }

    pub fn listen_port(&self) -> u16 {
        self.listen_port
    }

    pub fn add_peer(&mut self, config: PeerConfig) -> Result<PeerId, TunnelError> {
        if config.public_key == *self.identity.public_key()
            || self.peers.iter().any(|p| p.config.public_key == config.public_key)
        {
            return Err(TunnelError::DuplicatePeer);
        }
        let id = PeerId(self.peers.len());
        for net in &config.allowed_ips {
            if self.routes.overlaps_other(net, id) {
                return Err(TunnelError::OverlappingAllowedIps(*net));
            }
        }
        for net in &config.allowed_ips {
            self.routes.insert(*net, id);
        }
        self.peers.push(Peer {
            endpoint: config.endpoint,
            config,
            last_timestamp: Tai64n::ZERO,
            handshake: None,
            current: None,
            next: None,
            previous: None,
            queue: VecDeque::new(),
        });
        Ok(id)
    }

    pub fn peer_count(&self) -> usize {
        self.peers.len()
    }

    pub fn peer_config(&self, peer: PeerId) -> Option<&PeerConfig> {
        self.peers.get(peer.0).map(|p| &p.config)
    }

    pub fn peer_by_key(&self, key: &Key) -> Option<PeerId> {
        self.peers
            .iter()
            .position(|p| p.config.public_key == *key)
            .map(PeerId)
    }

    /// Latest known endpoint of `peer`.
    pub fn endpoint(&self, peer: PeerId) -> Option<SocketAddr> {
        self.peers.get(peer.0)?.endpoint
    }

    /// Greatest initiation timestamp accepted from `peer`.
    pub fn last_timestamp(&self, peer: PeerId) -> Tai64n {
        self.peers
            .get(peer.0)
            .map_or(Tai64n::ZERO, |p| p.last_timestamp)
    }

    pub fn route(&self, dst: Ipv4Addr) -> Option<PeerId> {
        self.routes.longest_match(dst)
    }

    /// Keys of the session used for sending to `peer`.
    pub fn session_keys(&self, peer: PeerId) -> Option<SessionKeys> {
        self.peers.get(peer.0)?.current.as_ref().map(|s| s.keys)
    }

    /// Keys of the responder session still waiting for confirmation.
    pub fn pending_session_keys(&self, peer: PeerId) -> Option<SessionKeys> {
        self.peers.get(peer.0)?.next.as_ref().map(|s| s.keys)
    }

    pub fn session_role(&self, peer: PeerId) -> Option<Role> {
        self.peers.get(peer.0)?.current.as_ref().map(|s| s.role)
    }

    pub fn handshake_stage(&self, peer: PeerId) -> Option<HandshakeStage> {
        let p = self.peers.get(peer.0)?;
        if p.handshake.is_some() {
            Some(HandshakeStage::SentInitiation)
        } else if p.next.is_some() {
            Some(HandshakeStage::SentResponse)
        } else if p.current.is_some() {
            Some(HandshakeStage::Confirmed)
        } else {
            None
        }
    }

    /// Sessions that can decrypt for `peer` (active, pending and previous).
    pub fn session_count(&self, peer: PeerId) -> usize {
        self.peers.get(peer.0).map_or(0, |p| {
            [&p.current, &p.next, &p.previous]
                .iter()
                .filter(|s| s.is_some())
                .count()
        })
    }

    pub fn queued_packets(&self, peer: PeerId) -> usize {
        self.peers.get(peer.0).map_or(0, |p| p.queue.len())
    }

    fn fresh_index(&mut self) -> u32 {
        loop {
            let idx = self.rng.next_u32();
            if !self.peers.iter().any(|p| p.uses_index(idx)) {
                return idx;
            }
        }
    }

    fn fresh_ephemeral(&mut self) -> Key {
        let mut raw = [0u8; 32];
        self.rng.fill_bytes(&mut raw);
        self.suite.clamp(raw)
    }

    fn timestamp(&mut self, now: Duration) -> Tai64n {
        let mut ts = Tai64n::from_unix(self.epoch + now);
        if ts <= self.last_sent_timestamp {
            let last = self.last_sent_timestamp;
            ts = if last.nanoseconds() == 999_999_999 {
                Tai64n::new(last.seconds() + 1, 0).expect("valid")
            } else {
                Tai64n::new(last.seconds(), last.nanoseconds() + 1).expect("valid")
            };
        }
        self.last_sent_timestamp = ts;
        ts
    }

    /// Starts a handshake with `peer`, replacing any handshake in flight.
    pub fn initiate(&mut self, peer: PeerId, now: Duration) -> Result<Datagram, TunnelError> {
        let p = self.peers.get(peer.0).ok_or(TunnelError::UnknownPeer)?;
        let to = p.endpoint.ok_or(TunnelError::NoEndpoint(peer))?;
        let remote = p.config.public_key;
        let started_at = p.handshake.as_ref().map_or(now, |h| h.started_at);

        let ephemeral_private = self.fresh_ephemeral();
        let index = self.fresh_index();
        let timestamp = self.timestamp(now);
        let (msg, state) = noise::create_initiation(
            &self.suite,
            InitiatorKeys {
                static_private: self.identity.private_key(),
                static_public: self.identity.public_key(),
                ephemeral_private,
            },
            &remote,
            index,
            timestamp,
        )
        .ok_or(TunnelError::DegenerateKey)?;

        self.peers[peer.0].handshake = Some(PendingHandshake {
            state,
            started_at,
            sent_at: now,
        });
        Ok(Datagram {
            peer,
            to,
            bytes: msg.encode(),
        })
    }

    /// Answers a handshake initiation, or returns `None` (stays silent) if it
    /// does not authenticate under a registered peer key or is not newer than
    /// the last accepted initiation from that peer.
    pub fn respond(&mut self, datagram: &[u8], from: SocketAddr, now: Duration) -> Option<Datagram> {
        let Some(Message::Initiation(msg)) = messages::parse(datagram) else {
            return None;
        };
        let received = noise::consume_initiation(
            &self.suite,
            self.identity.private_key(),
            self.identity.public_key(),
            &msg,
        )?;
        let peer = self.peer_by_key(&received.initiator_static)?;
        if received.timestamp <= self.peers[peer.0].last_timestamp {
            return None;
        }

        let ephemeral_private = self.fresh_ephemeral();
        let index = self.fresh_index();
        let (resp, keys) = noise::create_response(&self.suite, &received, ephemeral_private, index)?;

        let p = &mut self.peers[peer.0];
        p.last_timestamp = received.timestamp;
        p.endpoint = Some(from);
        p.next = Some(Session {
            local_index: index,
            remote_index: received.initiator_index,
            keys,
            send_counter: 0,
            replay: ReplayWindow::default(),
            established_at: now,
            messages: 0,
            confirmed: false,
            role: Role::Responder,
        });
        Some(Datagram {
            peer,
            to: from,
            bytes: resp.encode(),
        })
    }

    /// Consumes a handshake response; on success the initiator may send at once.
    pub fn finalize_initiator(
        &mut self,
        datagram: &[u8],
        from: SocketAddr,
        now: Duration,
    ) -> Result<PeerId, TunnelError> {
        let Some(Message::Response(msg)) = messages::parse(datagram) else {
            return Err(TunnelError::Malformed);
        };
        let peer = self
            .peers
            .iter()
            .position(|p| {
                p.handshake
                    .as_ref()
                    .is_some_and(|h| h.state.local_index == msg.receiver_index)
            })
            .map(PeerId)
            .ok_or(TunnelError::UnknownHandshakeIndex(msg.receiver_index))?;

        let p = &mut self.peers[peer.0];
        let pending = p.handshake.take().expect("matched above");
        let keys = noise::consume_response(
            &self.suite,
            &pending.state,
            self.identity.private_key(),
            &msg,
        )
        .ok_or(TunnelError::HandshakeAuthentication)?;

        p.previous = p.current.take();
        p.current = Some(Session {
            local_index: pending.state.local_index,
            remote_index: msg.sender_index,
            keys,
            send_counter: 0,
            replay: ReplayWindow::default(),
            established_at: now,
            messages: 0,
            confirmed: true,
            role: Role::Initiator,
        });
        p.endpoint = Some(from);
        Ok(peer)
    }

    fn encrypt(&mut self, peer: PeerId, packet: &[u8], now: Duration) -> Option<Datagram> {
        let reject_after = self.policy.reject_after;
        let p = &mut self.peers[peer.0];
        let to = p.endpoint?;
        let s = p.current.as_mut()?;
        if s.send_counter >= REJECT_AFTER_MESSAGES || s.age(now) >= reject_after {
            return None;
        }
        let counter = s.send_counter;
        let header = messages::transport_header(s.remote_index, counter);
        let ct = self.suite.seal(&s.keys.send, counter, &header, packet);
        s.send_counter += 1;
        s.messages += 1;
        let mut bytes = header.to_vec();
        bytes.extend_from_slice(&ct);
        Some(Datagram { peer, to, bytes })
    }

    /// Encrypts an inner IPv4 packet for the peer whose allowed IPs best match
    /// its destination.
    pub fn seal(&mut self, packet: &[u8], now: Duration) -> Result<SealOutput, TunnelError> {
        let header = ip::parse_ipv4(packet).ok_or(TunnelError::Malformed)?;
        let peer = self
            .routes
            .longest_match(header.dst)
            .ok_or(TunnelError::NoRoute(header.dst))?;

        if let Some(d) = self.encrypt(peer, packet, now) {
            return Ok(SealOutput::Transport(d));
        }
        let p = &mut self.peers[peer.0];
        if p.current.is_none() && p.next.is_some() {
            return Err(TunnelError::AwaitingConfirmation(peer));
        }
        if p.endpoint.is_none() {
            return Err(TunnelError::NoEndpoint(peer));
        }
        if p.queue.len() == MAX_QUEUED_PACKETS {
            p.queue.pop_front();
        }
        p.queue.push_back(packet.to_vec());
        if p.handshake.is_some() {
            return Ok(SealOutput::Queued);
        }
        self.initiate(peer, now).map(SealOutput::HandshakeInitiated)
    }

    /// Sends queued packets after a handshake, or a keepalive if none are
    /// waiting so the responder can confirm the session.
    fn flush(&mut self, peer: PeerId, now: Duration) -> Vec<Datagram> {
        let queued: Vec<_> = self.peers[peer.0].queue.drain(..).collect();
        if queued.is_empty() {
            return self.encrypt(peer, &[], now).into_iter().collect();
        }
        queued
            .iter()
            .filter_map(|pkt| self.encrypt(peer, pkt, now))
            .collect()
    }

    /// Decrypts a transport message. Any failure is a silent drop (`None`).
    /// Keepalives authenticate and update state but also yield `None`.
    pub fn open(&mut self, datagram: &[u8], from: SocketAddr, now: Duration) -> Option<Vec<u8>> {
        self.open_from(datagram, from, now).map(|(_, p)| p)
    }

    fn open_from(
        &mut self,
        datagram: &[u8],
        from: SocketAddr,
        now: Duration,
    ) -> Option<(PeerId, Vec<u8>)> {
        let Some(Message::Transport(msg)) = messages::parse(datagram) else {
            return None;
        };
        let reject_after = self.policy.reject_after;
        let (peer, slot) = self
            .peers
            .iter()
            .enumerate()
            .find_map(|(i, p)| p.find_index(msg.receiver_index).map(|s| (PeerId(i), s)))?;

        let p = &mut self.peers[peer.0];
        let s = p.slot(slot).as_mut()?;
        if msg.counter >= REJECT_AFTER_MESSAGES
            || s.age(now) >= reject_after
            || !s.replay.is_fresh(msg.counter)
        {
            return None;
        }
        let plain = self
            .suite
            .open(&s.keys.receive, msg.counter, msg.header, msg.ciphertext)?;
        s.replay.mark(msg.counter);
        s.messages += 1;

        if slot == Slot::Next {
            let mut s = p.next.take().expect("present");
            s.confirmed = true;
            p.previous = p.current.take();
            p.current = Some(s);
        }
        p.endpoint = Some(from);

        if plain.is_empty() {
            return None;
        }
        let inner = ip::parse_ipv4(&plain)?;
        if self.routes.longest_match(inner.src) != Some(peer) {
            return None;
        }
        Some((peer, plain))
    }

    /// Dispatches any received datagram by message type.
    pub fn receive(&mut self, datagram: &[u8], from: SocketAddr, now: Duration) -> Vec<DeviceEvent> {
        match datagram.first() {
            Some(&messages::TYPE_INITIATION) => self
                .respond(datagram, from, now)
                .map(DeviceEvent::Send)
                .into_iter()
                .collect(),
            Some(&messages::TYPE_RESPONSE) => match self.finalize_initiator(datagram, from, now) {
                Ok(peer) => self
                    .flush(peer, now)
                    .into_iter()
                    .map(DeviceEvent::Send)
                    .collect(),
                Err(_) => Vec::new(),
            },
            Some(&messages::TYPE_TRANSPORT) => self
                .open_from(datagram, from, now)
                .map(|(peer, packet)| DeviceEvent::Deliver { peer, packet })
                .into_iter()
                .collect(),
            _ => Vec::new(),
        }
    }

    /// Timer processing: rekeys, handshake retransmission and expiry.
    pub fn tick(&mut self, now: Duration) -> Vec<TickAction> {
        let policy = self.policy;
        let mut actions = Vec::new();
        for i in 0..self.peers.len() {
            let peer = PeerId(i);
            let p = &mut self.peers[i];

            if p.current.as_ref().is_some_and(|s| s.age(now) >= policy.reject_after) {
                p.current = None;
                actions.push(TickAction::SessionExpired { peer });
            }
            for slot in [Slot::Next, Slot::Previous] {
                if p.slot(slot).as_ref().is_some_and(|s| s.age(now) >= policy.reject_after) {
                    *p.slot(slot) = None;
                }
            }

            let reason = match &p.handshake {
                Some(h) if now.saturating_sub(h.started_at) >= policy.rekey_attempt_time => {
                    p.handshake = None;
                    p.queue.clear();
                    actions.push(TickAction::HandshakeAbandoned { peer });
                    None
                }
                Some(h) if now.saturating_sub(h.sent_at) >= policy.rekey_timeout => {
                    Some(InitiationReason::Retry)
                }
                Some(_) => None,
                None => p
                    .current
                    .as_ref()
                    .filter(|s| {
                        s.messages >= policy.max_messages
                            || (s.role == Role::Initiator && s.age(now) >= policy.max_session_age)
                    })
                    .map(|_| InitiationReason::Rekey),
            };
            if let Some(reason) = reason {
                if let Ok(datagram) = self.initiate(peer, now) {
                    actions.push(TickAction::Initiation { reason, datagram });
                }
            }
        }
        actions
    }
}
