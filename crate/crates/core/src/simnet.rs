//! Deterministic discrete-event network with shifted-lognormal link delays.
//!
//! Every directed link draws from its own ChaCha8 stream, selected by a hash of
//! the link's endpoints, so adding or removing one link never changes the
//! delays drawn on another.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("mean {mean} ms must exceed minimum {min} ms")]
    MeanNotAboveMin { min: f64, mean: f64 },
    #[error("standard deviation {0} must be finite and non-negative")]
    BadDeviation(f64),
    #[error("invalid link {name}: {reason}")]
    InvalidLink { name: String, reason: String },
    #[error("no link from {from} to {to}")]
    NoLink { from: Node, to: Node },
    #[error("unknown node {0:?}")]
    UnknownNode(String),
}

/// Simulated time in whole nanoseconds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SimTime(u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub const fn from_nanos(ns: u64) -> Self {
        SimTime(ns)
    }

    pub const fn from_secs(s: u64) -> Self {
        SimTime(s * 1_000_000_000)
    }

    /// Rounds up, so a delay never shrinks below its real-valued floor.
    pub fn from_ms(ms: f64) -> Self {
        SimTime((ms * 1e6).ceil().max(0.0) as u64)
    }

    pub fn as_nanos(self) -> u64 {
        self.0
    }

    pub fn as_ms(self) -> f64 {
        self.0 as f64 / 1e6
    }

    pub fn as_duration(self) -> Duration {
        Duration::from_nanos(self.0)
    }

    pub fn saturating_sub(self, other: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(other.0))
    }
}

impl std::ops::Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.6} ms", self.as_ms())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Node {
    Client,
    Router,
    Hub,
    Cloud,
}

impl Node {
    pub fn as_str(self) -> &'static str {
        match self {
            Node::Client => "client",
            Node::Router => "router",
            Node::Hub => "hub",
            Node::Cloud => "cloud",
        }
    }
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Node {
    type Err = SimError;
    fn from_str(s: &str) -> Result<Self, SimError> {
        match s {
            "client" => Ok(Node::Client),
            "router" => Ok(Node::Router),
            "hub" => Ok(Node::Hub),
            "cloud" => Ok(Node::Cloud),
            _ => Err(SimError::UnknownNode(s.to_string())),
        }
    }
}

/// Lognormal excess over the minimum: `exp(N(mu_log, sigma_log^2))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Excess {
    pub mu_log: f64,
    pub sigma_log: f64,
}

/// One-way delay law: `min_delay_ms` plus an optional lognormal excess;
/// datagrams are lost with probability `loss_rate`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkModel {
    pub name: String,
    pub min_delay_ms: f64,
    pub excess: Option<Excess>,
    pub loss_rate: f64,
}

impl LinkModel {
    pub fn constant(name: &str, delay_ms: f64) -> Self {
        LinkModel {
            name: name.to_string(),
            min_delay_ms: delay_ms,
            excess: None,
            loss_rate: 0.0,
        }
    }

    pub fn with_loss(mut self, loss_rate: f64) -> Self {
        self.loss_rate = loss_rate;
        self
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |reason: &str| SimError::InvalidLink {
            name: self.name.clone(),
            reason: reason.to_string(),
        };
        if !(self.min_delay_ms >= 0.0 && self.min_delay_ms.is_finite()) {
            return Err(bad("minimum delay must be finite and >= 0"));
        }
        if let Some(e) = self.excess {
            if !e.mu_log.is_finite() || !(e.sigma_log >= 0.0 && e.sigma_log.is_finite()) {
                return Err(bad("lognormal parameters must be finite with sigma >= 0"));
            }
        }
        // A rate of exactly 1 models a link that is down.
        if !(0.0..=1.0).contains(&self.loss_rate) {
            return Err(bad("loss rate must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn mean_ms(&self) -> f64 {
        self.min_delay_ms
            + self
                .excess
                .map_or(0.0, |e| (e.mu_log + e.sigma_log * e.sigma_log / 2.0).exp())
    }

    pub fn sd_ms(&self) -> f64 {
        self.excess.map_or(0.0, |e| {
            let s2 = e.sigma_log * e.sigma_log;
            ((s2.exp() - 1.0) * (2.0 * e.mu_log + s2).exp()).sqrt()
        })
    }
}

/// Method-of-moments fit of a shifted lognormal with the given minimum,
/// mean and standard deviation.
pub fn fit_link_model(name: &str, min: f64, mean: f64, sd: f64) -> Result<LinkModel, SimError> {
    if !(mean > min) || !min.is_finite() || !mean.is_finite() {
        return Err(SimError::MeanNotAboveMin { min, mean });
    }
    if !(sd >= 0.0 && sd.is_finite()) {
        return Err(SimError::BadDeviation(sd));
    }
    let excess = mean - min;
    let s2 = (1.0 + (sd / excess).powi(2)).ln();
    let link = LinkModel {
        name: name.to_string(),
        min_delay_ms: min,
        excess: Some(Excess {
            mu_log: excess.ln() - s2 / 2.0,
            sigma_log: s2.sqrt(),
        }),
        loss_rate: 0.0,
    };
    link.validate()?;
    Ok(link)
}

/// One draw of the one-way delay in ms.
pub fn sample_delay<R: Rng + ?Sized>(link: &LinkModel, rng: &mut R) -> f64 {
    link.min_delay_ms
        + link.excess.map_or(0.0, |e| {
            LogNormal::new(e.mu_log, e.sigma_log)
                .expect("validated parameters")
                .sample(rng)
        })
}

/// Link description as written in configuration files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LinkSpec {
    Raw {
        #[serde(default)]
        min: f64,
        #[serde(alias = "mu-log")]
        mu_log: f64,
        #[serde(alias = "sigma-log")]
        sigma_log: f64,
        #[serde(default)]
        loss: f64,
    },
    Moments {
        min: f64,
        mean: f64,
        sd: f64,
        #[serde(default)]
        loss: f64,
    },
    Constant {
        delay: f64,
        #[serde(default)]
        loss: f64,
    },
}

impl LinkSpec {
    pub fn to_model(&self, name: &str) -> Result<LinkModel, SimError> {
        let model = match *self {
            LinkSpec::Raw {
                min,
                mu_log,
                sigma_log,
                loss,
            } => LinkModel {
                name: name.to_string(),
                min_delay_ms: min,
                excess: Some(Excess { mu_log, sigma_log }),
                loss_rate: loss,
            },
            LinkSpec::Moments { min, mean, sd, loss } => {
                fit_link_model(name, min, mean, sd)?.with_loss(loss)
            }
            LinkSpec::Constant { delay, loss } => LinkModel::constant(name, delay).with_loss(loss),
        };
        model.validate()?;
        Ok(model)
    }
}

/// Stream selector for a directed link: FNV-1a of `"from->to"`.
fn stream_id(from: Node, to: Node) -> u64 {
    let key = format!("{from}->{to}");
    key.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Named auxiliary random stream derived from a run seed.
pub fn substream(seed: u64, name: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let id = name.bytes().fold(0x8422_2325_cbf2_9ce4u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    });
    rng.set_stream(id | 1 << 63);
    rng
}

#[derive(Clone, Debug, PartialEq)]
pub struct Event<M> {
    pub time: SimTime,
    pub from: Node,
    pub to: Node,
    pub payload: M,
}

struct Scheduled<M> {
    seq: u64,
    event: Event<M>,
}

impl<M> PartialEq for Scheduled<M> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl<M> Eq for Scheduled<M> {}
impl<M> PartialOrd for Scheduled<M> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<M> Ord for Scheduled<M> {
    /// Reversed so the max-heap pops the earliest, then first-inserted, event.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.event.time, other.seq).cmp(&(self.event.time, self.seq))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DropRecord {
    pub time: SimTime,
    pub from: Node,
    pub to: Node,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SendOutcome {
    Scheduled(SimTime),
    Dropped,
}

struct LinkState {
    model: LinkModel,
    rng: ChaCha8Rng,
}

/// Event queue plus the directed links between nodes.
pub struct Simulator<M> {
    now: SimTime,
    seq: u64,
    seed: u64,
    queue: BinaryHeap<Scheduled<M>>,
    links: BTreeMap<(Node, Node), LinkState>,
    drops: Vec<DropRecord>,
}

impl<M> Simulator<M> {
    pub fn new(seed: u64) -> Self {
        Simulator {
            now: SimTime::ZERO,
            seq: 0,
            seed,
            queue: BinaryHeap::new(),
            links: BTreeMap::new(),
            drops: Vec::new(),
        }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn add_link(&mut self, from: Node, to: Node, model: LinkModel) -> Result<(), SimError> {
        model.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream_id(from, to));
        self.links.insert((from, to), LinkState { model, rng });
        Ok(())
    }

    /// Adds the same delay law in both directions (independent draws).
    pub fn add_duplex(&mut self, a: Node, b: Node, model: LinkModel) -> Result<(), SimError> {
        self.add_link(a, b, model.clone())?;
        self.add_link(b, a, model)
    }

    pub fn has_link(&self, from: Node, to: Node) -> bool {
        self.links.contains_key(&(from, to))
    }

    pub fn link(&self, from: Node, to: Node) -> Option<&LinkModel> {
        self.links.get(&(from, to)).map(|l| &l.model)
    }

    /// Transmits over the `from -> to` link: lost with the link's loss rate,
    /// otherwise delivered after one delay draw.
    pub fn send(&mut self, from: Node, to: Node, payload: M) -> Result<SendOutcome, SimError> {
        let now = self.now;
        let link = self
            .links
            .get_mut(&(from, to))
            .ok_or(SimError::NoLink { from, to })?;
        let lost = link.rng.gen::<f64>() < link.model.loss_rate;
        let delay = sample_delay(&link.model, &mut link.rng);
        if lost {
            self.drops.push(DropRecord { time: now, from, to });
            return Ok(SendOutcome::Dropped);
        }
        let at = now + SimTime::from_ms(delay);
        self.push(at, from, to, payload);
        Ok(SendOutcome::Scheduled(at))
    }

    /// Local event at `node` after `delay` (timers, processing).
    pub fn schedule(&mut self, node: Node, delay: SimTime, payload: M) -> SimTime {
        let at = self.now + delay;
        self.push(at, node, node, payload);
        at
    }

    fn push(&mut self, time: SimTime, from: Node, to: Node, payload: M) {
        self.seq += 1;
        self.queue.push(Scheduled {
            seq: self.seq,
            event: Event {
                time,
                from,
                to,
                payload,
            },
        });
    }

    /// Pops the earliest event and advances the clock to it.
    pub fn step(&mut self) -> Option<Event<M>> {
        let s = self.queue.pop()?;
        self.now = s.event.time;
        Some(s.event)
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn drops(&self) -> &[DropRecord] {
        &self.drops
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_closed_form() {
        let l = fit_link_model("lan", 28.33, 72.92, 17.22).unwrap();
        let e = l.excess.unwrap();
        assert!((e.mu_log - 3.728_003_117).abs() < 1e-6);
        assert!((e.sigma_log - 0.372_844_476).abs() < 1e-6);
        assert!((l.mean_ms() - 72.92).abs() < 1e-9);
        assert!((l.sd_ms() - 17.22).abs() < 1e-9);
        assert_eq!(
            fit_link_model("x", 10.0, 5.0, 1.0),
            Err(SimError::MeanNotAboveMin { min: 10.0, mean: 5.0 })
        );
    }

    #[test]
    fn zero_sd_is_constant() {
        let l = fit_link_model("c", 0.0, 40.0, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            assert!((sample_delay(&l, &mut rng) - 40.0).abs() < 1e-9);
        }
    }

    #[test]
    fn pops_in_time_then_insertion_order() {
        let mut sim: Simulator<&str> = Simulator::new(0);
        sim.schedule(Node::Hub, SimTime::from_ms(5.0), "late");
        sim.schedule(Node::Hub, SimTime::from_ms(3.0), "early");
        sim.schedule(Node::Hub, SimTime::from_ms(5.0), "late2");
        let order: Vec<_> = std::iter::from_fn(|| sim.step()).map(|e| e.payload).collect();
        assert_eq!(order, ["early", "late", "late2"]);
        assert!(sim.step().is_none());
        assert_eq!(sim.now(), SimTime::from_ms(5.0));
    }

    #[test]
    fn missing_link_is_an_error() {
        let mut sim: Simulator<()> = Simulator::new(0);
        assert_eq!(
            sim.send(Node::Client, Node::Hub, ()),
            Err(SimError::NoLink {
                from: Node::Client,
                to: Node::Hub
            })
        );
    }

    #[test]
    fn link_streams_are_independent() {
        let model = fit_link_model("m", 1.0, 5.0, 2.0).unwrap();
        let draws = |extra: bool| {
            let mut sim: Simulator<()> = Simulator::new(9);
            if extra {
                sim.add_duplex(Node::Router, Node::Hub, model.clone()).unwrap();
            }
            sim.add_link(Node::Client, Node::Router, model.clone()).unwrap();
            if extra {
                sim.send(Node::Router, Node::Hub, ()).unwrap();
            }
            (0..5)
                .map(|_| sim.send(Node::Client, Node::Router, ()).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(draws(false), draws(true));
    }

    #[test]
    fn link_spec_variants() {
        let raw: LinkSpec = serde_json::from_str(r#"{"mu_log": 1.0, "sigma_log": 0.5}"#).unwrap();
        assert!(matches!(raw, LinkSpec::Raw { min, .. } if min == 0.0));
        let m: LinkSpec = serde_json::from_str(r#"{"min": 1, "mean": 3, "sd": 1, "loss": 0.1}"#).unwrap();
        let model = m.to_model("x").unwrap();
        assert_eq!(model.loss_rate, 0.1);
        let c: LinkSpec = serde_json::from_str(r#"{"delay": 0.125}"#).unwrap();
        assert_eq!(c.to_model("lan").unwrap(), LinkModel::constant("lan", 0.125));
        let bad: LinkSpec = serde_json::from_str(r#"{"delay": 1, "loss": 1.5}"#).unwrap();
        assert!(bad.to_model("x").is_err());
    }
}
