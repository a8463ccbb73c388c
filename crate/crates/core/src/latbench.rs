//! End-to-end control-latency benchmark over the simulated network, tunnel and
//! hub, plus command/light-event matching and sample export.
//!
//! Delay model: each request costs `k` round trips over the access link (one
//! for the request itself, two more for a TLS handshake when one is needed),
//! plus the LAN hop for paths that end at the hub, plus fixed server time.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io;
use std::net::{Ipv4Addr, SocketAddr};
use std::path::Path;
use std::str::FromStr;

use ipnet::Ipv4Net;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use wgtun::ip::{build_ipv4, parse_ipv4, payload, PROTO_TCP};
use wgtun::messages::TYPE_RESPONSE;
use wgtun::{
    DeviceEvent, PeerConfig, PeerId, PeerIdentity, SealOutput, TickAction, TunnelDevice,
    TunnelError,
};

use crate::hubsim::{
    draw_monitor_offset, https_overhead, CloudRelay, Command, CommandPayload, Hub, LightEvent,
    LightState, ReplyPayload, Transition, Transport, DEFAULT_CLOUD_PROCESSING_MS,
    DEFAULT_CRYPTO_COST_MS, DEFAULT_MONITOR_BOUND_MS, DEFAULT_PROCESSING_MS,
};
use crate::netplan::{default_plan, tunnel_scope};
use crate::published::published;
use crate::simnet::{
    fit_link_model, substream, Excess, LinkModel, LinkSpec, Node, SimError, SimTime,
    Simulator,
};

pub const DEFAULT_COMMAND_COUNT: usize = 1000;
pub const DEFAULT_TIMEOUT_MS: f64 = 10_000.0;
pub const DEFAULT_MATCH_WINDOW_MS: f64 = 5_000.0;
/// One-way delay of the wired hop between router and hub.
pub const LAN_HOP_MS: f64 = 0.125;
/// Nominal hub-to-cloud channel (min, mean, sd); only shifts actuation times.
pub const CLOUD_CHANNEL_MS: (f64, f64, f64) = (10.0, 20.0, 5.0);

pub const HUB_ADDR: Ipv4Addr = Ipv4Addr::new(192, 168, 33, 10);
pub const LAN_CLIENT_ADDR: Ipv4Addr = Ipv4Addr::new(192, 168, 33, 20);
pub const TUNNEL_CLIENT_ADDR: Ipv4Addr = Ipv4Addr::new(10, 99, 0, 2);
const CLIENT_ENDPOINT: &str = "100.64.0.2:51820";
const ROUTER_ENDPOINT: &str = "203.0.113.1:51820";

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Tunnel(#[from] TunnelError),
    #[error("unknown scenario {0:?}")]
    UnknownScenario(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("match window must be positive, got {0} ms")]
    NonPositiveWindow(f64),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioId {
    LanLocal,
    CloudGuestwifi,
    WgHttp4g,
    WgHttps4g,
    Cloud4g,
    WgHttpOffice,
    WgHttpsOffice,
    CloudOffice,
    WgHttpPublic,
    WgHttpsPublic,
    CloudPublic,
}

impl ScenarioId {
    pub const ALL: [ScenarioId; 11] = [
        ScenarioId::LanLocal,
        ScenarioId::CloudGuestwifi,
        ScenarioId::WgHttp4g,
        ScenarioId::WgHttps4g,
        ScenarioId::Cloud4g,
        ScenarioId::WgHttpOffice,
        ScenarioId::WgHttpsOffice,
        ScenarioId::CloudOffice,
        ScenarioId::WgHttpPublic,
        ScenarioId::WgHttpsPublic,
        ScenarioId::CloudPublic,
    ];

    pub fn slug(self) -> &'static str {
        match self {
            ScenarioId::LanLocal => "lan-local",
            ScenarioId::CloudGuestwifi => "cloud-guestwifi",
            ScenarioId::WgHttp4g => "wg-http-4g",
            ScenarioId::WgHttps4g => "wg-https-4g",
            ScenarioId::Cloud4g => "cloud-4g",
            ScenarioId::WgHttpOffice => "wg-http-office",
            ScenarioId::WgHttpsOffice => "wg-https-office",
            ScenarioId::CloudOffice => "cloud-office",
            ScenarioId::WgHttpPublic => "wg-http-public",
            ScenarioId::WgHttpsPublic => "wg-https-public",
            ScenarioId::CloudPublic => "cloud-public",
        }
    }

    pub fn transport(self) -> Transport {
        use ScenarioId::*;
        match self {
            LanLocal => Transport::LanHttp,
            WgHttp4g | WgHttpOffice | WgHttpPublic => Transport::WgHttp,
            WgHttps4g | WgHttpsOffice | WgHttpsPublic => Transport::WgHttps,
            CloudGuestwifi | Cloud4g | CloudOffice | CloudPublic => Transport::CloudHttps,
        }
    }

    /// Access network the client sits on.
    pub fn access(self) -> &'static str {
        use ScenarioId::*;
        match self {
            LanLocal => "home-lan",
            CloudGuestwifi => "guest-wifi",
            WgHttp4g | WgHttps4g | Cloud4g => "4g",
            WgHttpOffice | WgHttpsOffice | CloudOffice => "office",
            WgHttpPublic | WgHttpsPublic | CloudPublic => "public-wifi",
        }
    }

    pub fn uses_tunnel(self) -> bool {
        matches!(self.transport(), Transport::WgHttp | Transport::WgHttps)
    }

    pub fn uses_cloud(self) -> bool {
        self.transport() == Transport::CloudHttps
    }
}

impl fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.slug())
    }
}

impl FromStr for ScenarioId {
    type Err = BenchError;
    fn from_str(s: &str) -> Result<Self, BenchError> {
        let wanted = s.trim().to_ascii_lowercase().replace('_', "-");
        ScenarioId::ALL
            .into_iter()
            .find(|id| id.slug() == wanted)
            .ok_or_else(|| BenchError::UnknownScenario(s.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HttpsConfig {
    /// Reuse one TLS session for the whole run.
    pub session_cache: bool,
    pub crypto_ms: f64,
}

impl Default for HttpsConfig {
    fn default() -> Self {
        HttpsConfig {
            session_cache: false,
            crypto_ms: DEFAULT_CRYPTO_COST_MS,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioConfig {
    pub id: ScenarioId,
    /// Client to its first server: the home router, or the cloud.
    pub access_link: LinkModel,
    /// Router to hub.
    pub lan_link: LinkModel,
    /// Hub's outbound channel to the cloud; cloud scenarios only.
    pub cloud_link: Option<LinkModel>,
    pub command_count: usize,
    pub https: HttpsConfig,
    pub seed: u64,
    pub processing_ms: f64,
    pub cloud_processing_ms: f64,
    pub timeout_ms: f64,
    pub monitor_bound_ms: f64,
    /// Whether the hub holds its channel to the cloud open.
    pub hub_channel: bool,
}

impl ScenarioConfig {
    pub fn transport(&self) -> Transport {
        self.id.transport()
    }

    /// Round trips over the access link for request `index`.
    pub fn round_trips(&self, index: u64) -> u32 {
        1 + https_overhead(self.transport(), self.https.session_cache, index, 0.0).extra_round_trips
    }

    /// Delay that does not depend on the access link, for a request costing
    /// `k` round trips.
    pub fn fixed_ms(&self, k: u32) -> f64 {
        let crypto = if self.transport().is_https() {
            self.https.crypto_ms
        } else {
            0.0
        };
        if self.id.uses_cloud() {
            self.cloud_processing_ms + crypto
        } else {
            self.processing_ms + crypto + 2.0 * f64::from(k) * self.lan_link.min_delay_ms
        }
    }

    /// Smallest delay any successful command can show.
    pub fn floor_ms(&self) -> f64 {
        let k = self.round_trips(0).min(self.round_trips(1));
        self.fixed_ms(k) + 2.0 * f64::from(k) * self.access_link.min_delay_ms
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        if self.command_count == 0 {
            return Err(BenchError::Config("command count must be positive".into()));
        }
        self.access_link.validate()?;
        self.lan_link.validate()?;
        if let Some(l) = &self.cloud_link {
            l.validate()?;
        }
        if self.id.uses_cloud() && self.cloud_link.is_none() {
            return Err(BenchError::Config(format!(
                "{} needs a hub-to-cloud link",
                self.id
            )));
        }
        let positive = [
            ("processing_ms", self.processing_ms),
            ("cloud_processing_ms", self.cloud_processing_ms),
            ("timeout_ms", self.timeout_ms),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(BenchError::Config(format!("{name} must be positive")));
            }
        }
        for (name, v) in [("crypto_ms", self.https.crypto_ms), ("monitor_bound_ms", self.monitor_bound_ms)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(BenchError::Config(format!("{name} must be non-negative")));
            }
        }
        Ok(())
    }

    pub fn to_file(&self) -> ScenarioFile {
        let mut links = BTreeMap::new();
        links.insert("access".to_string(), spec_of(&self.access_link));
        links.insert("lan".to_string(), spec_of(&self.lan_link));
        if let Some(l) = &self.cloud_link {
            links.insert("cloud".to_string(), spec_of(l));
        }
        ScenarioFile {
            scenario: self.id,
            seed: Some(self.seed),
            command_count: Some(self.command_count),
            links,
            https: Some(self.https),
            processing_ms: Some(self.processing_ms),
            cloud_processing_ms: Some(self.cloud_processing_ms),
            timeout_ms: Some(self.timeout_ms),
            monitor_bound_ms: Some(self.monitor_bound_ms),
            hub_channel: Some(self.hub_channel),
        }
    }
}

fn spec_of(model: &LinkModel) -> LinkSpec {
    match model.excess {
        Some(Excess { mu_log, sigma_log }) => LinkSpec::Raw {
            min: model.min_delay_ms,
            mu_log,
            sigma_log,
            loss: model.loss_rate,
        },
        None => LinkSpec::Constant {
            delay: model.min_delay_ms,
            loss: model.loss_rate,
        },
    }
}

/// Scenario configuration as stored on disk. Only `scenario` is required;
/// everything else falls back to the default calibration. Links are keyed
/// `access`, `lan` and `cloud`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub scenario: ScenarioId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command_count: Option<usize>,
    #[serde(default)]
    pub links: BTreeMap<String, LinkSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub https: Option<HttpsConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub processing_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cloud_processing_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeout_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub monitor_bound_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hub_channel: Option<bool>,
}

impl ScenarioFile {
    pub fn from_json(text: &str) -> Result<ScenarioFile, BenchError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String, BenchError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn resolve(&self) -> Result<ScenarioConfig, BenchError> {
        let mut cfg = default_calibration(self.scenario);
        for (key, spec) in &self.links {
            let model = spec.to_model(key)?;
            match key.as_str() {
                "access" => cfg.access_link = model,
                "lan" => cfg.lan_link = model,
                "cloud" => cfg.cloud_link = Some(model),
                other => return Err(BenchError::Config(format!("unknown link {other:?}"))),
            }
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.command_count {
            cfg.command_count = v;
        }
        if let Some(v) = self.https {
            cfg.https = v;
        }
        if let Some(v) = self.processing_ms {
            cfg.processing_ms = v;
        }
        if let Some(v) = self.cloud_processing_ms {
            cfg.cloud_processing_ms = v;
        }
        if let Some(v) = self.timeout_ms {
            cfg.timeout_ms = v;
        }
        if let Some(v) = self.monitor_bound_ms {
            cfg.monitor_bound_ms = v;
        }
        if let Some(v) = self.hub_channel {
            cfg.hub_channel = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// (minimum, mean, standard deviation) of the end-to-end delay, in ms.
pub fn calibration_target(id: ScenarioId) -> (f64, f64, f64) {
    let s = &published(id.slug())
        .expect("every scenario has a published column")
        .summary;
    (s.minimum, s.mean, s.standard_deviation)
}

/// Fits the access link so the composed delay hits the published
/// (min, mean, sd). A request costing `k` round trips draws the access link
/// `2k` times independently, so the per-draw law is
/// `((m - F) / 2k, (mu - F) / 2k, sd / sqrt(2k))` where `F` is the fixed part.
pub fn default_calibration(id: ScenarioId) -> ScenarioConfig {
    let mut cfg = ScenarioConfig {
        id,
        access_link: LinkModel::constant("access", 0.0),
        lan_link: LinkModel::constant("lan", LAN_HOP_MS),
        cloud_link: id.uses_cloud().then(|| {
            let (min, mean, sd) = CLOUD_CHANNEL_MS;
            fit_link_model("cloud", min, mean, sd).expect("valid channel moments")
        }),
        command_count: DEFAULT_COMMAND_COUNT,
        https: HttpsConfig::default(),
        seed: 42,
        processing_ms: DEFAULT_PROCESSING_MS,
        cloud_processing_ms: DEFAULT_CLOUD_PROCESSING_MS,
        timeout_ms: DEFAULT_TIMEOUT_MS,
        monitor_bound_ms: DEFAULT_MONITOR_BOUND_MS,
        hub_channel: true,
    };
    let k = cfg.round_trips(0);
    let draws = 2.0 * f64::from(k);
    let fixed = cfg.fixed_ms(k);
    let (min, mean, sd) = calibration_target(id);
    cfg.access_link = fit_link_model(
        "access",
        (min - fixed) / draws,
        (mean - fixed) / draws,
        sd / draws.sqrt(),
    )
    .expect("published targets have mean above minimum");
    cfg
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleStatus {
    Ok,
    Failed,
}

/// One command's outcome. Failed samples carry no reply time and no delay.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DelaySample {
    pub scenario: ScenarioId,
    pub seq: u64,
    pub issued_ms: f64,
    pub replied_ms: Option<f64>,
    pub delay_ms: Option<f64>,
    pub status: SampleStatus,
}

impl DelaySample {
    fn ok(scenario: ScenarioId, seq: u64, issued_ms: f64, replied_ms: f64) -> Self {
        DelaySample {
            scenario,
            seq,
            issued_ms,
            replied_ms: Some(replied_ms),
            delay_ms: Some(replied_ms - issued_ms),
            status: SampleStatus::Ok,
        }
    }

    fn failed(scenario: ScenarioId, seq: u64, issued_ms: f64) -> Self {
        DelaySample {
            scenario,
            seq,
            issued_ms,
            replied_ms: None,
            delay_ms: None,
            status: SampleStatus::Failed,
        }
    }
}

/// Delays of successful samples only; failures never reach statistics.
pub fn ok_delays(samples: &[DelaySample]) -> Vec<f64> {
    samples
        .iter()
        .filter(|s| s.status == SampleStatus::Ok)
        .filter_map(|s| s.delay_ms)
        .collect()
}

/// What the control side knows about a command it issued.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IssuedCommand {
    pub seq: u64,
    pub issued_ms: f64,
    pub target: LightState,
    pub status: SampleStatus,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutput {
    pub config: ScenarioConfig,
    pub samples: Vec<DelaySample>,
    pub commands: Vec<IssuedCommand>,
    pub events: Vec<LightEvent>,
    /// Completion times (ms) of tunnel handshakes seen by the client.
    pub handshakes: Vec<f64>,
}

impl RunOutput {
    pub fn ok_delays(&self) -> Vec<f64> {
        ok_delays(&self.samples)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
enum Body {
    Hello,
    HelloAck,
    Request(CommandPayload),
    Reply(ReplyPayload),
    Forward(Command),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Http {
    seq: u64,
    body: Body,
}

#[derive(Clone, Debug, PartialEq)]
enum Msg {
    /// Tunnel datagram between client and router.
    Wg(Vec<u8>),
    /// Application message on a plain (or TLS-protected) hop.
    Http(Http),
    Timeout(u64),
    HandshakeDeadline,
    /// Server-side work finished; `to` is where the result goes.
    Execute(Http),
    Respond { to: Node, http: Http },
}

struct Pending {
    seq: u64,
    issued: SimTime,
    target: LightState,
    hellos_left: u32,
}

/// Client and router tunnel endpoints, with the client routing only the
/// tunnel scope into the tunnel.
pub fn tunnel_pair(seed: u64, scope: &[Ipv4Net]) -> Result<(TunnelDevice, TunnelDevice, PeerId, PeerId), BenchError> {
    let client_id = PeerIdentity::generate(seed ^ 0xc11e_47);
    let router_id = PeerIdentity::generate(seed ^ 0x2047_e2);
    let mut client = TunnelDevice::new(client_id.clone(), 51820, seed.wrapping_add(1));
    let mut router = TunnelDevice::new(router_id.clone(), 51820, seed.wrapping_add(2));
    let router_peer = client.add_peer(PeerConfig {
        public_key: *router_id.public_key(),
        allowed_ips: scope.to_vec(),
        endpoint: Some(ROUTER_ENDPOINT.parse().expect("valid address")),
    })?;
    let client_peer = router.add_peer(PeerConfig {
        public_key: *client_id.public_key(),
        allowed_ips: vec![Ipv4Net::new(TUNNEL_CLIENT_ADDR, 32).expect("valid prefix")],
        endpoint: None,
    })?;
    Ok((client, router, router_peer, client_peer))
}

struct Run {
    cfg: ScenarioConfig,
    sim: Simulator<Msg>,
    hub: Hub,
    cloud: Option<CloudRelay>,
    tunnel: Option<(TunnelDevice, TunnelDevice, PeerId)>,
    scope: Vec<Ipv4Net>,
    key: String,
    client_addr: Ipv4Addr,
    pending: Option<Pending>,
    next_seq: u64,
    samples: Vec<DelaySample>,
    commands: Vec<IssuedCommand>,
    handshakes: Vec<f64>,
    started: bool,
}

/// Runs `command_count` alternating on/off commands, one at a time: the next
/// command leaves when the previous reply arrives or its timeout fires.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunOutput, BenchError> {
    cfg.validate()?;
    let mut sim = Simulator::new(cfg.seed);
    let id = cfg.id;
    let first_hop = if id.uses_cloud() { Node::Cloud } else { Node::Router };
    sim.add_duplex(Node::Client, first_hop, cfg.access_link.clone())?;
    if !id.uses_cloud() {
        sim.add_duplex(Node::Router, Node::Hub, cfg.lan_link.clone())?;
    }
    if let Some(l) = &cfg.cloud_link {
        sim.add_duplex(Node::Hub, Node::Cloud, l.clone())?;
    }

    let mut rng = substream(cfg.seed, "hub");
    let offset = draw_monitor_offset(&mut substream(cfg.seed, "monitor"), cfg.monitor_bound_ms);
    let mut hub = Hub::new(SimTime::from_ms(cfg.processing_ms), offset);
    hub.set_tls(cfg.transport() == Transport::WgHttps);
    hub.press_link_button(SimTime::ZERO);
    let client_key = hub.create_api_key(SimTime::ZERO, &mut rng).expect("button pressed");
    let (cloud, key) = if id.uses_cloud() {
        let hub_key = hub.create_api_key(SimTime::ZERO, &mut rng).expect("button pressed");
        let token = format!("token-{}", client_key);
        let mut relay = CloudRelay::new(&token, &hub_key, SimTime::from_ms(cfg.cloud_processing_ms));
        relay.set_channel(cfg.hub_channel);
        (Some(relay), token)
    } else {
        (None, client_key)
    };

    let scope = tunnel_scope(&default_plan());
    let tunnel = if id.uses_tunnel() {
        let (client, router, router_peer, _) = tunnel_pair(cfg.seed, &scope)?;
        Some((client, router, router_peer))
    } else {
        None
    };

    let mut run = Run {
        cfg: cfg.clone(),
        sim,
        hub,
        cloud,
        tunnel,
        scope,
        key,
        client_addr: if id.uses_tunnel() {
            TUNNEL_CLIENT_ADDR
        } else {
            LAN_CLIENT_ADDR
        },
        pending: None,
        next_seq: 0,
        samples: Vec::with_capacity(cfg.command_count),
        commands: Vec::with_capacity(cfg.command_count),
        handshakes: Vec::new(),
        started: false,
    };
    run.start()?;
    while let Some(ev) = run.sim.step() {
        run.handle(ev.from, ev.to, ev.payload)?;
        if run.samples.len() == run.cfg.command_count {
            break;
        }
    }
    let events = run.hub.events().to_vec();
    Ok(RunOutput {
        config: run.cfg,
        samples: run.samples,
        commands: run.commands,
        events,
        handshakes: run.handshakes,
    })
}

fn wall(t: SimTime) -> std::time::Duration {
    t.as_duration()
}

impl Run {
    fn start(&mut self) -> Result<(), BenchError> {
        let now = self.sim.now();
        if let Some((client, _, peer)) = &mut self.tunnel {
            let dg = client.initiate(*peer, wall(now))?;
            self.sim.send(Node::Client, Node::Router, Msg::Wg(dg.bytes))?;
            self.sim
                .schedule(Node::Client, SimTime::from_ms(self.cfg.timeout_ms), Msg::HandshakeDeadline);
            Ok(())
        } else {
            self.issue_next()
        }
    }

    fn issue_next(&mut self) -> Result<(), BenchError> {
        self.started = true;
        if self.next_seq as usize >= self.cfg.command_count {
            return Ok(());
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        let now = self.sim.now();
        let target = if seq % 2 == 0 { LightState::On } else { LightState::Off };
        let hellos = https_overhead(self.cfg.transport(), self.cfg.https.session_cache, seq, 0.0)
            .extra_round_trips;
        self.pending = Some(Pending {
            seq,
            issued: now,
            target,
            hellos_left: hellos,
        });
        self.sim
            .schedule(Node::Client, SimTime::from_ms(self.cfg.timeout_ms), Msg::Timeout(seq));
        if let Some((client, router, _)) = &mut self.tunnel {
            let n = wall(now);
            for action in client.tick(n) {
                if let TickAction::Initiation { datagram, .. } = action {
                    self.sim.send(Node::Client, Node::Router, Msg::Wg(datagram.bytes))?;
                }
            }
            router.tick(n);
        }
        let body = if hellos > 0 { Body::Hello } else { self.request_body(target) };
        self.client_send(Http { seq, body })
    }

    fn request_body(&self, target: LightState) -> Body {
        Body::Request(CommandPayload {
            key: self.key.clone(),
            on: target == LightState::On,
        })
    }

    fn finish(&mut self, seq: u64, ok: bool) -> Result<(), BenchError> {
        let Some(p) = self.pending.take_if(|p| p.seq == seq) else {
            return Ok(());
        };
        let issued_ms = p.issued.as_ms();
        let sample = if ok {
            DelaySample::ok(self.cfg.id, seq, issued_ms, self.sim.now().as_ms())
        } else {
            DelaySample::failed(self.cfg.id, seq, issued_ms)
        };
        self.commands.push(IssuedCommand {
            seq,
            issued_ms,
            target: p.target,
            status: sample.status,
        });
        self.samples.push(sample);
        self.issue_next()
    }

    fn client_send(&mut self, http: Http) -> Result<(), BenchError> {
        let now = self.sim.now();
        match &mut self.tunnel {
            Some((client, _, _)) => {
                let bytes = serde_json::to_vec(&http)?;
                let packet = build_ipv4(self.client_addr, HUB_ADDR, PROTO_TCP, &bytes);
                match client.seal(&packet, wall(now)) {
                    Ok(SealOutput::Transport(dg)) | Ok(SealOutput::HandshakeInitiated(dg)) => {
                        self.sim.send(Node::Client, Node::Router, Msg::Wg(dg.bytes))?;
                    }
                    Ok(SealOutput::Queued) => {}
                    Err(TunnelError::NoRoute(dst)) => {
                        log::debug!("{dst} is outside the tunnel scope");
                    }
                    Err(e) => return Err(e.into()),
                }
            }
            None => {
                let first_hop = if self.cfg.id.uses_cloud() { Node::Cloud } else { Node::Router };
                self.sim.send(Node::Client, first_hop, Msg::Http(http))?;
            }
        }
        Ok(())
    }

    fn handle(&mut self, from: Node, to: Node, msg: Msg) -> Result<(), BenchError> {
        match (to, msg) {
            (Node::Client, Msg::Timeout(seq)) => self.finish(seq, false),
            (Node::Client, Msg::HandshakeDeadline) => {
                if !self.started {
                    self.issue_next()?;
                }
                Ok(())
            }
            (Node::Client, Msg::Wg(bytes)) => self.client_wg(&bytes),
            (Node::Client, Msg::Http(http)) => self.client_http(http),
            (Node::Router, Msg::Wg(bytes)) => self.router_wg(&bytes),
            (Node::Router, Msg::Http(http)) => {
                if from == Node::Hub {
                    self.router_to_client(http)
                } else {
                    // Plain LAN client: the router only switches the frame.
                    self.sim.send(Node::Router, Node::Hub, Msg::Http(http))?;
                    Ok(())
                }
            }
            (Node::Hub, Msg::Http(http)) => self.hub_receive(from, http),
            (Node::Hub, Msg::Execute(http)) => self.hub_execute(http),
            (Node::Cloud, Msg::Http(http)) => self.cloud_receive(from, http),
            (Node::Cloud, Msg::Execute(http)) => self.cloud_execute(http),
            (node, Msg::Respond { to, http }) => {
                self.sim.send(node, to, Msg::Http(http))?;
                Ok(())
            }
            (node, msg) => Err(BenchError::Config(format!(
                "unexpected {msg:?} at {node}"
            ))),
        }
    }

    fn client_http(&mut self, http: Http) -> Result<(), BenchError> {
        let Some(p) = &mut self.pending else {
            return Ok(());
        };
        if p.seq != http.seq {
            return Ok(());
        }
        match http.body {
            Body::HelloAck => {
                p.hellos_left = p.hellos_left.saturating_sub(1);
                let (left, target) = (p.hellos_left, p.target);
                let body = if left > 0 {
                    Body::Hello
                } else {
                    self.request_body(target)
                };
                self.client_send(Http { seq: http.seq, body })
            }
            Body::Reply(reply) => self.finish(http.seq, reply.is_success()),
            _ => Ok(()),
        }
    }

    fn client_wg(&mut self, bytes: &[u8]) -> Result<(), BenchError> {
        let now = self.sim.now();
        let from: SocketAddr = ROUTER_ENDPOINT.parse().expect("valid address");
        let Some((client, _, _)) = &mut self.tunnel else {
            return Ok(());
        };
        let events = client.receive(bytes, from, wall(now));
        if bytes.first() == Some(&TYPE_RESPONSE) && !events.is_empty() {
            self.handshakes.push(now.as_ms());
        }
        let mut inbound = Vec::new();
        for ev in events {
            match ev {
                DeviceEvent::Send(dg) => {
                    self.sim.send(Node::Client, Node::Router, Msg::Wg(dg.bytes))?;
                }
                DeviceEvent::Deliver { packet, .. } => inbound.push(packet),
            }
        }
        if !self.started && !self.handshakes.is_empty() {
            self.issue_next()?;
        }
        for packet in inbound {
            if let Some(http) = payload(&packet).and_then(|b| serde_json::from_slice(b).ok()) {
                self.client_http(http)?;
            }
        }
        Ok(())
    }

    fn router_wg(&mut self, bytes: &[u8]) -> Result<(), BenchError> {
        let now = self.sim.now();
        let from: SocketAddr = CLIENT_ENDPOINT.parse().expect("valid address");
        let Some((_, router, _)) = &mut self.tunnel else {
            return Ok(());
        };
        for ev in router.receive(bytes, from, wall(now)) {
            match ev {
                DeviceEvent::Send(dg) => {
                    self.sim.send(Node::Router, Node::Client, Msg::Wg(dg.bytes))?;
                }
                DeviceEvent::Deliver { packet, .. } => {
                    let Some(header) = parse_ipv4(&packet) else { continue };
                    if !self.scope.iter().any(|n| n.contains(&header.dst)) {
                        log::debug!("dropping tunnel packet to {}", header.dst);
                        continue;
                    }
                    if header.dst != HUB_ADDR {
                        continue;
                    }
                    if let Some(http) = payload(&packet).and_then(|b| serde_json::from_slice(b).ok())
                    {
                        self.sim.send(Node::Router, Node::Hub, Msg::Http(http))?;
                    }
                }
            }
        }
        Ok(())
    }

    fn router_to_client(&mut self, http: Http) -> Result<(), BenchError> {
        let now = self.sim.now();
        match &mut self.tunnel {
            Some((_, router, _)) => {
                let bytes = serde_json::to_vec(&http)?;
                let packet = build_ipv4(HUB_ADDR, self.client_addr, PROTO_TCP, &bytes);
                match router.seal(&packet, wall(now))? {
                    SealOutput::Transport(dg) | SealOutput::HandshakeInitiated(dg) => {
                        self.sim.send(Node::Router, Node::Client, Msg::Wg(dg.bytes))?;
                    }
                    SealOutput::Queued => {}
                }
            }
            None => {
                self.sim.send(Node::Router, Node::Client, Msg::Http(http))?;
            }
        }
        Ok(())
    }

    fn crypto_delay(&self) -> SimTime {
        let cost = https_overhead(self.cfg.transport(), self.cfg.https.session_cache, 0, self.cfg.https.crypto_ms);
        SimTime::from_ms(cost.crypto_ms)
    }

    fn hub_receive(&mut self, from: Node, http: Http) -> Result<(), BenchError> {
        match http.body {
            Body::Hello => {
                self.sim.send(
                    Node::Hub,
                    from,
                    Msg::Http(Http {
                        seq: http.seq,
                        body: Body::HelloAck,
                    }),
                )?;
            }
            Body::Request(_) => {
                let delay = if self.hub.tls_enabled() {
                    self.crypto_delay()
                } else {
                    SimTime::ZERO
                };
                self.sim.schedule(Node::Hub, delay, Msg::Execute(http));
            }
            Body::Forward(_) => {
                self.sim.schedule(Node::Hub, SimTime::ZERO, Msg::Execute(http));
            }
            _ => {}
        }
        Ok(())
    }

    fn hub_execute(&mut self, http: Http) -> Result<(), BenchError> {
        let now = self.sim.now();
        let (command, reply_to) = match http.body {
            Body::Request(p) => (
                Command {
                    key: p.key,
                    target: if p.on { LightState::On } else { LightState::Off },
                    transport: self.cfg.transport(),
                    sequence: http.seq,
                },
                Node::Router,
            ),
            Body::Forward(c) => (c, Node::Cloud),
            _ => return Ok(()),
        };
        let result = self.hub.set_light(&command, now);
        let done = *result.as_ref().unwrap_or(&now);
        let reply = Http {
            seq: http.seq,
            body: Body::Reply(ReplyPayload::from_result(&result)),
        };
        self.sim.schedule(
            Node::Hub,
            done.saturating_sub(now),
            Msg::Respond {
                to: reply_to,
                http: reply,
            },
        );
        Ok(())
    }

    fn cloud_receive(&mut self, from: Node, http: Http) -> Result<(), BenchError> {
        if from != Node::Client {
            // Hub acknowledgements on the channel need no action.
            return Ok(());
        }
        match http.body {
            Body::Hello => {
                self.sim.send(
                    Node::Cloud,
                    Node::Client,
                    Msg::Http(Http {
                        seq: http.seq,
                        body: Body::HelloAck,
                    }),
                )?;
            }
            Body::Request(_) => {
                let delay = self.crypto_delay();
                self.sim.schedule(Node::Cloud, delay, Msg::Execute(http));
            }
            _ => {}
        }
        Ok(())
    }

    fn cloud_execute(&mut self, http: Http) -> Result<(), BenchError> {
        let now = self.sim.now();
        let Body::Request(p) = http.body else {
            return Ok(());
        };
        let Some(cloud) = &self.cloud else {
            return Ok(());
        };
        let command = Command {
            key: p.key,
            target: if p.on { LightState::On } else { LightState::Off },
            transport: Transport::CloudHttps,
            sequence: http.seq,
        };
        match cloud.relay_command(&command, now) {
            Ok(plan) => {
                self.sim.schedule(
                    Node::Cloud,
                    plan.forward_at.saturating_sub(now),
                    Msg::Respond {
                        to: Node::Hub,
                        http: Http {
                            seq: http.seq,
                            body: Body::Forward(plan.forwarded),
                        },
                    },
                );
                self.sim.schedule(
                    Node::Cloud,
                    plan.ack_at.saturating_sub(now),
                    Msg::Respond {
                        to: Node::Client,
                        http: Http {
                            seq: http.seq,
                            body: Body::Reply(ReplyPayload::Success { success: true }),
                        },
                    },
                );
            }
            Err(e) => {
                let body = Body::Reply(ReplyPayload::from_result::<()>(&Err(e)));
                self.sim.send(Node::Cloud, Node::Client, Msg::Http(Http { seq: http.seq, body }))?;
            }
        }
        Ok(())
    }
}

/// A matched command: its sequence number and the actuation delay (ms).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub seq: u64,
    pub actuation_delay_ms: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    pub matched: Vec<Match>,
    pub unmatched_commands: Vec<u64>,
    pub orphan_events: Vec<LightEvent>,
}

impl MatchReport {
    pub fn to_json(&self) -> Result<String, BenchError> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Greedy matching in issue order. A successful command that should change
/// the light takes the earliest unused event with the same transition whose
/// monitor time lies in `[issue - bound, end + bound]`, where `end` is
/// `issue + window` or the next issue of the same target, whichever is first.
/// The delay is reported at the zero-offset midpoint (`event - issue`).
pub fn match_events(
    commands: &[IssuedCommand],
    events: &[LightEvent],
    offset_bound_ms: f64,
    window_ms: f64,
) -> Result<MatchReport, BenchError> {
    if !(window_ms > 0.0) {
        return Err(BenchError::NonPositiveWindow(window_ms));
    }
    let bound = offset_bound_ms.abs();
    let mut used = vec![false; events.len()];
    let mut report = MatchReport::default();
    let mut light = LightState::Off;
    let mut ordered: Vec<&IssuedCommand> = commands.iter().collect();
    ordered.sort_by(|a, b| a.issued_ms.total_cmp(&b.issued_ms).then(a.seq.cmp(&b.seq)));
    for (i, c) in ordered.iter().enumerate() {
        if c.status != SampleStatus::Ok || c.target == light {
            continue;
        }
        light = c.target;
        let transition = Transition::to(c.target);
        // A later command asking for the same transition owns events from
        // its own issue time on.
        let until = ordered[i + 1..]
            .iter()
            .find(|n| n.target == c.target)
            .map_or(f64::INFINITY, |n| n.issued_ms);
        let lo = c.issued_ms - bound;
        let hi = (c.issued_ms + window_ms).min(until) + bound;
        let hit = events
            .iter()
            .enumerate()
            .filter(|(i, e)| {
                !used[*i]
                    && e.transition == transition
                    && e.monitor_timestamp_ms >= lo
                    && e.monitor_timestamp_ms <= hi
            })
            .min_by(|a, b| a.1.monitor_timestamp_ms.total_cmp(&b.1.monitor_timestamp_ms));
        match hit {
            Some((i, e)) => {
                used[i] = true;
                report.matched.push(Match {
                    seq: c.seq,
                    actuation_delay_ms: e.monitor_timestamp_ms - c.issued_ms,
                });
            }
            None => report.unmatched_commands.push(c.seq),
        }
    }
    report.orphan_events = events
        .iter()
        .zip(&used)
        .filter(|(_, u)| !**u)
        .map(|(e, _)| *e)
        .collect();
    Ok(report)
}

/// CSV with header `scenario,seq,issued_ms,replied_ms,delay_ms,status`;
/// failed rows leave the reply and delay fields empty.
pub fn write_samples_csv<W: io::Write>(samples: &[DelaySample], w: W) -> Result<(), BenchError> {
    let mut wtr = csv::Writer::from_writer(w);
    if samples.is_empty() {
        wtr.write_record(["scenario", "seq", "issued_ms", "replied_ms", "delay_ms", "status"])?;
    }
    for s in samples {
        wtr.serialize(s)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_samples_csv<R: io::Read>(r: R) -> Result<Vec<DelaySample>, BenchError> {
    let mut out = Vec::new();
    for row in csv::Reader::from_reader(r).deserialize() {
        let s: DelaySample = row?;
        out.push(s);
    }
    Ok(out)
}

pub fn export_samples(samples: &[DelaySample], path: &Path) -> Result<(), BenchError> {
    write_samples_csv(samples, File::create(path)?)
}

pub fn import_samples(path: &Path) -> Result<Vec<DelaySample>, BenchError> {
    read_samples_csv(File::open(path)?)
}
