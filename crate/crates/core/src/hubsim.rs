//! Emulated smart-light hub, vendor cloud relay and light-state monitor.

use std::collections::BTreeSet;
use std::fmt;
use std::io;
use std::str::FromStr;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::simnet::SimTime;

pub const DEFAULT_PROCESSING_MS: f64 = 28.0;
pub const DEFAULT_CLOUD_PROCESSING_MS: f64 = 20.0;
pub const DEFAULT_CRYPTO_COST_MS: f64 = 4.0;
pub const BUTTON_WINDOW: SimTime = SimTime::from_secs(30);
pub const DEFAULT_MONITOR_BOUND_MS: f64 = 10.0;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HubError {
    #[error("link button not pressed")]
    ButtonNotPressed,
    #[error("unauthorized user")]
    Unauthorized,
    #[error("hub unreachable")]
    Offline,
    #[error("cloud has no channel to the hub")]
    ChannelDown,
}

impl HubError {
    /// Numeric code carried in error replies.
    pub fn code(&self) -> u16 {
        match self {
            HubError::Unauthorized => 1,
            HubError::ButtonNotPressed => 101,
            HubError::Offline => 503,
            HubError::ChannelDown => 504,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Transport {
    LanHttp,
    WgHttp,
    WgHttps,
    CloudHttps,
}

impl Transport {
    pub fn is_https(self) -> bool {
        matches!(self, Transport::WgHttps | Transport::CloudHttps)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LightState {
    Off,
    On,
}

impl LightState {
    pub fn toggled(self) -> LightState {
        match self {
            LightState::Off => LightState::On,
            LightState::On => LightState::Off,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Transition {
    #[serde(rename = "off->on")]
    OffToOn,
    #[serde(rename = "on->off")]
    OnToOff,
}

impl Transition {
    pub fn to(target: LightState) -> Transition {
        match target {
            LightState::On => Transition::OffToOn,
            LightState::Off => Transition::OnToOff,
        }
    }

    pub fn target(self) -> LightState {
        match self {
            Transition::OffToOn => LightState::On,
            Transition::OnToOff => LightState::Off,
        }
    }
}

impl fmt::Display for Transition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Transition::OffToOn => "off->on",
            Transition::OnToOff => "on->off",
        })
    }
}

impl FromStr for Transition {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "off->on" => Ok(Transition::OffToOn),
            "on->off" => Ok(Transition::OnToOff),
            _ => Err(format!("unknown transition {s:?}")),
        }
    }
}

/// A light transition as timestamped by the separately clocked monitor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LightEvent {
    pub monitor_timestamp_ms: f64,
    pub transition: Transition,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Command {
    pub key: String,
    pub target: LightState,
    pub transport: Transport,
    pub sequence: u64,
}

/// Request body: `{"key": "...", "on": true}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommandPayload {
    pub key: String,
    pub on: bool,
}

/// Reply body: `{"success": true}` or `{"error": 1, "description": "..."}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ReplyPayload {
    Success { success: bool },
    Error { error: u16, description: String },
}

impl Command {
    pub fn payload(&self) -> CommandPayload {
        CommandPayload {
            key: self.key.clone(),
            on: self.target == LightState::On,
        }
    }
}

impl ReplyPayload {
    pub fn from_result<T>(r: &Result<T, HubError>) -> ReplyPayload {
        match r {
            Ok(_) => ReplyPayload::Success { success: true },
            Err(e) => ReplyPayload::Error {
                error: e.code(),
                description: e.to_string(),
            },
        }
    }

    pub fn is_success(&self) -> bool {
        matches!(self, ReplyPayload::Success { success: true })
    }
}

/// Draws a monitor clock offset uniformly in `[-bound, bound]` ms.
pub fn draw_monitor_offset<R: Rng + ?Sized>(rng: &mut R, bound_ms: f64) -> f64 {
    if bound_ms <= 0.0 {
        0.0
    } else {
        rng.gen_range(-bound_ms..=bound_ms)
    }
}

#[derive(Clone, Debug)]
pub struct Hub {
    api_keys: BTreeSet<String>,
    button_pressed_at: Option<SimTime>,
    light: LightState,
    processing: SimTime,
    tls_enabled: bool,
    monitor_offset_ms: f64,
    online: bool,
    events: Vec<LightEvent>,
}

impl Default for Hub {
    fn default() -> Self {
        Hub::new(SimTime::from_ms(DEFAULT_PROCESSING_MS), 0.0)
    }
}

impl Hub {
    /// Light starts off. `monitor_offset_ms` is added to hub time when the
    /// monitor timestamps a transition.
    pub fn new(processing: SimTime, monitor_offset_ms: f64) -> Self {
        assert!(processing > SimTime::ZERO, "processing time must be positive");
        Hub {
            api_keys: BTreeSet::new(),
            button_pressed_at: None,
            light: LightState::Off,
            processing,
            tls_enabled: false,
            monitor_offset_ms,
            online: true,
            events: Vec::new(),
        }
    }

    pub fn set_tls(&mut self, enabled: bool) {
        self.tls_enabled = enabled;
    }

    pub fn tls_enabled(&self) -> bool {
        self.tls_enabled
    }

    pub fn set_online(&mut self, online: bool) {
        self.online = online;
    }

    pub fn processing(&self) -> SimTime {
        self.processing
    }

    pub fn monitor_offset_ms(&self) -> f64 {
        self.monitor_offset_ms
    }

    pub fn light(&self) -> LightState {
        self.light
    }

    pub fn events(&self) -> &[LightEvent] {
        &self.events
    }

    pub fn press_link_button(&mut self, now: SimTime) {
        self.button_pressed_at = Some(now);
    }

    fn button_active(&self, now: SimTime) -> bool {
        self.button_pressed_at
            .is_some_and(|t| now >= t && now.saturating_sub(t) <= BUTTON_WINDOW)
    }

    /// Issues a fresh key if the link button was pressed within the window.
    pub fn create_api_key<R: RngCore + ?Sized>(
        &mut self,
        now: SimTime,
        rng: &mut R,
    ) -> Result<String, HubError> {
        if !self.button_active(now) {
            return Err(HubError::ButtonNotPressed);
        }
        loop {
            let key = format!("{:016x}{:016x}", rng.next_u64(), rng.next_u64());
            if self.api_keys.insert(key.clone()) {
                return Ok(key);
            }
        }
    }

    pub fn is_authorized(&self, key: &str) -> bool {
        self.api_keys.contains(key)
    }

    /// Executes a command that arrived at `now`. The reply and any light
    /// transition both happen at `now + processing`; the returned time is
    /// when the reply leaves the hub.
    pub fn set_light(&mut self, command: &Command, now: SimTime) -> Result<SimTime, HubError> {
        if !self.online {
            return Err(HubError::Offline);
        }
        if !self.is_authorized(&command.key) {
            return Err(HubError::Unauthorized);
        }
        let done = now + self.processing;
        if self.light != command.target {
            self.light = command.target;
            self.events.push(LightEvent {
                monitor_timestamp_ms: done.as_ms() + self.monitor_offset_ms,
                transition: Transition::to(command.target),
            });
        }
        Ok(done)
    }
}

/// Vendor cloud holding a hub-initiated channel into the home.
#[derive(Clone, Debug)]
pub struct CloudRelay {
    channel_up: bool,
    access_token: String,
    hub_key: String,
    processing: SimTime,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RelayPlan {
    /// When the cloud acknowledges to the client.
    pub ack_at: SimTime,
    /// When the command leaves on the channel towards the hub.
    pub forward_at: SimTime,
    /// The command re-keyed with the cloud's own hub key.
    pub forwarded: Command,
}

impl CloudRelay {
    /// `hub_key` is the key the hub issued to the cloud account at pairing.
    pub fn new(access_token: &str, hub_key: &str, processing: SimTime) -> Self {
        CloudRelay {
            channel_up: false,
            access_token: access_token.to_string(),
            hub_key: hub_key.to_string(),
            processing,
        }
    }

    /// Called when the hub opens (or loses) its outbound connection.
    pub fn set_channel(&mut self, up: bool) {
        self.channel_up = up;
    }

    pub fn channel_up(&self) -> bool {
        self.channel_up
    }

    pub fn processing(&self) -> SimTime {
        self.processing
    }

    /// Accepts a client command at `now`. The client is answered at
    /// `ack_at` regardless of when the hub actuates.
    pub fn relay_command(&self, command: &Command, now: SimTime) -> Result<RelayPlan, HubError> {
        if command.key != self.access_token {
            return Err(HubError::Unauthorized);
        }
        if !self.channel_up {
            return Err(HubError::ChannelDown);
        }
        let done = now + self.processing;
        Ok(RelayPlan {
            ack_at: done,
            forward_at: done,
            forwarded: Command {
                key: self.hub_key.clone(),
                ..command.clone()
            },
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HttpsSchedule {
    /// Round trips added before the request (TLS handshake).
    pub extra_round_trips: u32,
    /// Fixed per-request cost of the record-layer crypto on both ends.
    pub crypto_ms: f64,
}

impl HttpsSchedule {
    pub const NONE: HttpsSchedule = HttpsSchedule {
        extra_round_trips: 0,
        crypto_ms: 0.0,
    };
}

/// Added cost of request `request_index` (0-based) over `transport`.
/// Without a session cache every request opens a new TLS connection.
pub fn https_overhead(
    transport: Transport,
    session_cache: bool,
    request_index: u64,
    crypto_ms: f64,
) -> HttpsSchedule {
    if !transport.is_https() {
        return HttpsSchedule::NONE;
    }
    HttpsSchedule {
        extra_round_trips: if session_cache && request_index > 0 { 0 } else { 2 },
        crypto_ms,
    }
}

/// CSV with columns `monitor_timestamp_ms,transition`.
pub fn write_events_csv<W: io::Write>(events: &[LightEvent], w: W) -> csv::Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for e in events {
        wtr.serialize(e)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_events_csv<R: io::Read>(r: R) -> csv::Result<Vec<LightEvent>> {
    csv::Reader::from_reader(r).deserialize().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn paired() -> (Hub, String) {
        let mut hub = Hub::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        hub.press_link_button(SimTime::ZERO);
        let key = hub.create_api_key(SimTime::ZERO, &mut rng).unwrap();
        (hub, key)
    }

    fn cmd(key: &str, target: LightState, seq: u64) -> Command {
        Command {
            key: key.to_string(),
            target,
            transport: Transport::LanHttp,
            sequence: seq,
        }
    }

    #[test]
    fn keys_need_button() {
        let mut hub = Hub::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(
            hub.create_api_key(SimTime::ZERO, &mut rng),
            Err(HubError::ButtonNotPressed)
        );
        hub.press_link_button(SimTime::ZERO);
        let a = hub.create_api_key(SimTime::from_ms(1.0), &mut rng).unwrap();
        let b = hub.create_api_key(SimTime::from_ms(2.0), &mut rng).unwrap();
        assert_ne!(a, b);
        assert!(hub.is_authorized(&a) && hub.is_authorized(&b));
        assert_eq!(
            hub.create_api_key(SimTime::from_ms(30_001.0), &mut rng),
            Err(HubError::ButtonNotPressed)
        );
    }

    #[test]
    fn set_light_semantics() {
        let (mut hub, key) = paired();
        let done = hub.set_light(&cmd(&key, LightState::On, 0), SimTime::from_ms(100.0)).unwrap();
        assert_eq!(done, SimTime::from_ms(128.0));
        assert_eq!(hub.events().len(), 1);
        assert_eq!(hub.events()[0].monitor_timestamp_ms, 128.0);
        hub.set_light(&cmd(&key, LightState::On, 1), done).unwrap();
        assert_eq!(hub.events().len(), 1);
        assert_eq!(
            hub.set_light(&cmd("nope", LightState::Off, 2), done),
            Err(HubError::Unauthorized)
        );
        assert_eq!(hub.light(), LightState::On);
        hub.set_online(false);
        assert_eq!(
            hub.set_light(&cmd(&key, LightState::Off, 3), done),
            Err(HubError::Offline)
        );
    }

    #[test]
    fn relay_needs_channel() {
        let mut cloud = CloudRelay::new("token", "hubkey", SimTime::from_ms(20.0));
        let c = Command {
            transport: Transport::CloudHttps,
            ..cmd("token", LightState::On, 0)
        };
        assert_eq!(cloud.relay_command(&c, SimTime::ZERO), Err(HubError::ChannelDown));
        cloud.set_channel(true);
        let plan = cloud.relay_command(&c, SimTime::ZERO).unwrap();
        assert_eq!(plan.ack_at, SimTime::from_ms(20.0));
        assert_eq!(plan.forwarded.key, "hubkey");
        assert_eq!(
            cloud.relay_command(&cmd("bad", LightState::On, 1), SimTime::ZERO),
            Err(HubError::Unauthorized)
        );
    }

    #[test]
    fn https_schedule() {
        assert_eq!(https_overhead(Transport::WgHttp, false, 0, 4.0), HttpsSchedule::NONE);
        let first = https_overhead(Transport::WgHttps, true, 0, 4.0);
        assert_eq!(first.extra_round_trips, 2);
        let second = https_overhead(Transport::WgHttps, true, 1, 4.0);
        assert_eq!((second.extra_round_trips, second.crypto_ms), (0, 4.0));
        assert_eq!(https_overhead(Transport::CloudHttps, false, 7, 4.0).extra_round_trips, 2);
    }

    #[test]
    fn payload_json() {
        let c = cmd("k", LightState::On, 0);
        assert_eq!(serde_json::to_string(&c.payload()).unwrap(), r#"{"key":"k","on":true}"#);
        let ok = ReplyPayload::from_result::<()>(&Ok(()));
        assert_eq!(serde_json::to_string(&ok).unwrap(), r#"{"success":true}"#);
        let err = ReplyPayload::from_result::<()>(&Err(HubError::Unauthorized));
        let text = serde_json::to_string(&err).unwrap();
        assert_eq!(serde_json::from_str::<ReplyPayload>(&text).unwrap(), err);
        assert!(!err.is_success());
    }

    #[test]
    fn event_csv_round_trip() {
        let ev = vec![
            LightEvent {
                monitor_timestamp_ms: 128.5,
                transition: Transition::OffToOn,
            },
            LightEvent {
                monitor_timestamp_ms: 300.25,
                transition: Transition::OnToOff,
            },
        ];
        let mut buf = Vec::new();
        write_events_csv(&ev, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("monitor_timestamp_ms,transition\n128.5,off->on\n"));
        assert_eq!(read_events_csv(&buf[..]).unwrap(), ev);
    }
}
