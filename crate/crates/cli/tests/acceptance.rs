//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Runs without the default test harness so the lines always print.

use std::collections::BTreeMap;
use std::net::{Ipv4Addr, SocketAddr};
use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use iotbench_core::hubsim::{LightEvent, LightState, Transition};
use iotbench_core::latbench::{
    calibration_target, default_calibration, match_events, run_scenario, IssuedCommand,
    SampleStatus, ScenarioId,
};
use iotbench_core::netplan::{default_plan, ConnState, Direction, FlowEndpoint, Protocol, Verdict};
use iotbench_core::statkit::{consistency_check, describe, t_quantile};
use iotbench_core::published::PUBLISHED;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use wgtun::ip::{build_ipv4, PROTO_TCP};
use wgtun::messages::{INITIATION_LEN, RESPONSE_LEN};
use wgtun::{
    CryptoSuite, DeviceEvent, HandshakeStage, PeerConfig, PeerId, PeerIdentity, SealOutput,
    StandardSuite, TunnelDevice, TunnelError,
};

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_iotbench"))
}

fn exec(cmd: &mut Command) -> Result<Output, String> {
    cmd.output().map_err(|e| format!("cannot start iotbench: {e}"))
}

fn criterion(id: u8, name: &str, budget: Option<Duration>, f: impl FnOnce() -> Check) -> bool {
    let start = Instant::now();
    let mut result = f();
    let elapsed = start.elapsed();
    if let (Ok(_), Some(b)) = (&result, budget) {
        if elapsed > b {
            result = Err(format!("took {elapsed:.2?}, budget {b:.0?}"));
        }
    }
    match &result {
        Ok(detail) => println!("criterion {id}: PASS  {name} ({detail}; {elapsed:.2?})"),
        Err(why) => println!("criterion {id}: FAIL  {name} ({why}; {elapsed:.2?})"),
    }
    result.is_ok()
}

// ---------------------------------------------------------------- 1: plan

/// (name, base, hex, prefix, note, parent)
const SUBNET_TABLE: [(&str, &str, &str, u8, &str, Option<&str>); 11] = [
    ("Home", "192.168.0.0", "C0.A8.00.00", 16, "", None),
    ("Main", "192.168.0.0", "C0.A8.00.00", 20, "", Some("Home")),
    ("Fixed", "192.168.0.0", "C0.A8.00.00", 24, "e.g. Computers", Some("Main")),
    ("Mobile", "192.168.1.0", "C0.A8.01.00", 24, "e.g. Smart phones/tablets", Some("Main")),
    ("Gaming", "192.168.2.0", "C0.A8.02.00", 24, "e.g. Gaming and other consoles", Some("Main")),
    ("Services", "192.168.16.0", "C0.A8.10.00", 20, "Network attached services (e.g. NAS/Printer/...)", Some("Home")),
    ("IoT", "192.168.32.0", "C0.A8.20.00", 20, "All IoT (no device-2-device comms by default)", Some("Home")),
    ("restricted", "192.168.32.0", "C0.A8.20.00", 24, "No incoming/outgoing (except limited DHCP, NTP, TFTP,...)", Some("IoT")),
    ("Outgoing", "192.168.33.0", "C0.A8.21.00", 24, "Enables outgoing connection, and related incoming.", Some("IoT")),
    ("Media", "192.168.48.0", "C0.A8.30.00", 20, "E.g. smart TVs, home theaters", Some("Home")),
    ("Guest", "192.168.64.0", "C0.A8.40.00", 20, "Internet only, no access to other parts of the network. (e.g. guests' phone)", Some("Home")),
];

fn plan_matches_table(dir: &Path) -> Check {
    let out = dir.join("plan.json");
    let o = exec(bin().args(["plan", "--out"]).arg(&out))?;
    ensure!(o.status.success(), "plan exited with {}", o.status);
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(&out).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let rows = doc["subnets"].as_array().ok_or("no subnets array")?;
    ensure!(rows.len() == SUBNET_TABLE.len(), "{} rows, want 11", rows.len());
    let by_name: BTreeMap<&str, &Value> =
        rows.iter().filter_map(|r| Some((r["name"].as_str()?, r))).collect();
    for (name, base, hex, prefix, note, parent) in SUBNET_TABLE {
        let r = by_name.get(name).ok_or(format!("missing {name}"))?;
        ensure!(r["ipv4"] == base, "{name}: ipv4 {}", r["ipv4"]);
        ensure!(r["hex"] == hex, "{name}: hex {}", r["hex"]);
        ensure!(r["prefix"] == prefix, "{name}: prefix {}", r["prefix"]);
        ensure!(r["note"] == note, "{name}: note {}", r["note"]);
        ensure!(r["parent"].as_str() == parent, "{name}: parent {}", r["parent"]);
        let octets: Vec<String> = base
            .parse::<Ipv4Addr>()
            .unwrap()
            .octets()
            .iter()
            .map(|b| format!("{b:02X}"))
            .collect();
        ensure!(octets.join(".") == hex, "{name}: table hex disagrees with address");
    }
    let parents: Vec<&str> = SUBNET_TABLE.iter().filter_map(|r| r.5).collect();
    let leaves = SUBNET_TABLE.iter().filter(|r| !parents.contains(&r.0)).count();
    let parent_count = SUBNET_TABLE.len() - leaves;
    ensure!(leaves == 8 && parent_count == 3, "{leaves} leaves, {parent_count} parents");
    ensure!(
        doc["tunnel_scope"] == serde_json::json!(["192.168.32.0/20"]),
        "tunnel scope {}",
        doc["tunnel_scope"]
    );
    Ok("11 rows, 8 leaves + 3 parents, bit-exact".into())
}

// ---------------------------------------------------------------- 2: check

fn published_tables_consistent() -> Check {
    let o = exec(bin().arg("check"))?;
    let text = String::from_utf8_lossy(&o.stdout);
    ensure!(o.status.success(), "check exited with {}: {text}", o.status);
    let passes = text.lines().filter(|l| l.contains(" PASS ")).count();
    ensure!(passes == 11, "{passes} of 11 columns pass");
    let spot = [("cloud-guestwifi", 1005, 4.945), ("wg-http-4g", 1002, 6.672), ("cloud-public", 1012, 5.828)];
    for (slug, n, ci) in spot {
        let col = PUBLISHED.iter().find(|c| c.scenario == slug).unwrap();
        let r = consistency_check(&col.summary, 0.02).map_err(|e| e.to_string())?;
        ensure!(r.implied_n == n, "{slug}: implied n {}", r.implied_n);
        let got = r.relations[0].predicted;
        ensure!((got - ci).abs() < 5e-4, "{slug}: predicted ci {got:.4}");
    }
    let tight = exec(bin().args(["check", "--tolerance", "0.0001"]))?;
    ensure!(!tight.status.success(), "check at 1e-4 should fail on rounded columns");
    Ok("11/11 at 2%; spot CIs 4.945, 6.672, 5.828".into())
}

// ---------------------------------------------------------------- 3: describe

/// Student-t CDF by Simpson integration of the density.
fn t_cdf_oracle(t: f64, df: f64) -> f64 {
    let ln_c = ln_gamma((df + 1.0) / 2.0) - ln_gamma(df / 2.0) - 0.5 * (df * std::f64::consts::PI).ln();
    let f = |x: f64| (ln_c - (df + 1.0) / 2.0 * (1.0 + x * x / df).ln()).exp();
    let n = 100_000;
    let h = t / n as f64;
    let mut s = f(0.0) + f(t);
    for i in 1..n {
        s += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    0.5 + s * h / 3.0
}

/// Lanczos log-gamma (g = 7, n = 9).
fn ln_gamma(x: f64) -> f64 {
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let t = x + 7.5;
    let a = C[1..].iter().enumerate().fold(C[0], |a, (i, c)| a + c / (x + i as f64 + 1.0));
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

fn t_oracle(p: f64, df: f64) -> f64 {
    let (mut lo, mut hi) = (0.0, 64.0);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if t_cdf_oracle(mid, df) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn describe_matches_oracle(dir: &Path) -> Check {
    let x = [1.0, 2.0, 3.0, 4.0, 5.0];
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let m = |k: i32| x.iter().map(|v| (v - mean).powi(k)).sum::<f64>() / n;
    let sd = (m(2) * n / (n - 1.0)).sqrt();
    let se = sd / n.sqrt();
    let skew = (n * (n - 1.0)).sqrt() / (n - 2.0) * m(3) / m(2).powf(1.5);
    let kurt = (n - 1.0) / ((n - 2.0) * (n - 3.0)) * ((n + 1.0) * (m(4) / m(2).powi(2) - 3.0) + 6.0);
    let ci = t_oracle(0.975, n - 1.0) * se;

    let s = describe(&x).map_err(|e| e.to_string())?;
    let r4 = |v: f64| (v * 1e4).round() / 1e4;
    let pairs = [
        ("mean", s.mean, mean, 3.0),
        ("sd", s.standard_deviation, sd, 1.5811),
        ("se", s.standard_error, se, 0.7071),
        ("skew", s.skewness, skew, 0.0),
        ("kurtosis", s.kurtosis, kurt, -1.2),
        ("ci95", s.confidence_level_95, ci, 1.9633),
    ];
    for (name, got, oracle, literal) in pairs {
        ensure!(r4(got) == r4(oracle), "{name}: {got} vs oracle {oracle}");
        // Reference literals are themselves rounded to 4 places.
        ensure!((got - literal).abs() <= 1e-4, "{name}: {got} vs {literal}");
    }

    let csv = dir.join("five.csv");
    let mut text = String::from("scenario,seq,issued_ms,replied_ms,delay_ms,status\n");
    for (i, v) in x.iter().enumerate() {
        text.push_str(&format!("lan-local,{i},0.0,{v},{v},ok\n"));
    }
    text.push_str("lan-local,5,0.0,,,failed\n");
    std::fs::write(&csv, text).map_err(|e| e.to_string())?;
    let o = exec(bin().args(["stats", "--json", "--in"]).arg(&csv))?;
    ensure!(o.status.success(), "stats exited with {}", o.status);
    let v: Value = serde_json::from_slice(&o.stdout).map_err(|e| e.to_string())?;
    ensure!(v["Mean"] == 3.0 && v["Count"] == 5, "cli summary {v}");
    Ok(format!("mean 3, sd 1.5811, se 0.7071, skew 0, kurt -1.2, ci {:.4}", s.confidence_level_95))
}

// ---------------------------------------------------------------- 4: t

fn t_quantiles_accurate() -> Check {
    let reference = [
        (1, 12.706204736432095),
        (4, 2.7764451051977987),
        (10, 2.2281388519649385),
        (30, 2.0422724563012373),
        (100, 1.9839715184496334),
        (1004, 1.9623296070709257),
    ];
    let mut worst: f64 = 0.0;
    for (df, want) in reference {
        let got = t_quantile(0.975, df).map_err(|e| e.to_string())?;
        let err = (got - want).abs();
        worst = worst.max(err);
        ensure!(err < 1e-6, "df {df}: {got} vs {want}");
        let oracle = t_oracle(0.975, df as f64);
        ensure!((oracle - want).abs() < 1e-6, "df {df}: integrated oracle {oracle}");
    }
    Ok(format!("max error {worst:.1e}"))
}

// ---------------------------------------------------------------- 5: protocol

const CLIENT: &str = "100.64.7.2:40000";
const ROUTER: &str = "203.0.113.1:51820";

fn addr(s: &str) -> SocketAddr {
    s.parse().unwrap()
}

struct Pair {
    client: TunnelDevice,
    router: TunnelDevice,
    to_router: PeerId,
    to_client: PeerId,
    client_id: PeerIdentity,
    router_id: PeerIdentity,
}

fn pair(seed: u64) -> Pair {
    let client_id = PeerIdentity::generate(seed.wrapping_mul(2));
    let router_id = PeerIdentity::generate(seed.wrapping_mul(2).wrapping_add(1));
    let mut client = TunnelDevice::new(client_id.clone(), 40000, seed ^ 0xaaaa);
    let mut router = TunnelDevice::new(router_id.clone(), 51820, seed ^ 0x5555);
    let to_router = client
        .add_peer(PeerConfig {
            public_key: *router_id.public_key(),
            allowed_ips: vec!["192.168.32.0/20".parse().unwrap()],
            endpoint: Some(addr(ROUTER)),
        })
        .unwrap();
    let to_client = router
        .add_peer(PeerConfig {
            public_key: *client_id.public_key(),
            allowed_ips: vec!["10.9.0.2/32".parse().unwrap()],
            endpoint: None,
        })
        .unwrap();
    Pair {
        client,
        router,
        to_router,
        to_client,
        client_id,
        router_id,
    }
}

fn request() -> Vec<u8> {
    build_ipv4("10.9.0.2".parse().unwrap(), "192.168.33.10".parse().unwrap(), PROTO_TCP, b"{\"on\":true}")
}

fn reply() -> Vec<u8> {
    build_ipv4("192.168.33.10".parse().unwrap(), "10.9.0.2".parse().unwrap(), PROTO_TCP, b"ok")
}

fn sends(events: Vec<DeviceEvent>) -> Vec<Vec<u8>> {
    events
        .into_iter()
        .filter_map(|e| match e {
            DeviceEvent::Send(d) => Some(d.bytes),
            DeviceEvent::Deliver { .. } => None,
        })
        .collect()
}

/// (a) exactly three messages before the responder may send transport data.
fn handshake_is_three_messages(seed: u64) -> Check {
    let mut p = pair(seed);
    let now = Duration::from_millis(seed);
    let SealOutput::HandshakeInitiated(init) = p.client.seal(&request(), now).map_err(|e| e.to_string())? else {
        return Err(format!("seed {seed}: first seal did not start a handshake"));
    };
    ensure!(init.bytes.len() == INITIATION_LEN, "seed {seed}: initiation length");
    let resp = p.router.respond(&init.bytes, addr(CLIENT), now).ok_or(format!("seed {seed}: no response"))?;
    ensure!(resp.bytes.len() == RESPONSE_LEN, "seed {seed}: response length");
    ensure!(
        p.router.seal(&reply(), now) == Err(TunnelError::AwaitingConfirmation(p.to_client)),
        "seed {seed}: responder sent before confirmation"
    );
    let third = sends(p.client.receive(&resp.bytes, addr(ROUTER), now));
    ensure!(third.len() == 1, "seed {seed}: {} messages after response", third.len());
    let got = p.router.receive(&third[0], addr(CLIENT), now);
    ensure!(
        got == vec![DeviceEvent::Deliver { peer: p.to_client, packet: request() }],
        "seed {seed}: queued packet not delivered"
    );
    ensure!(
        p.router.handshake_stage(p.to_client) == Some(HandshakeStage::Confirmed),
        "seed {seed}: responder not confirmed"
    );
    ensure!(
        matches!(p.router.seal(&reply(), now), Ok(SealOutput::Transport(_))),
        "seed {seed}: responder cannot send after confirmation"
    );
    Ok(String::new())
}

/// (b) initiations with a timestamp at or below the stored maximum are ignored.
fn replays_ignored(seed: u64) -> Check {
    let mut p = pair(seed);
    let t = Duration::from_millis(seed % 5000);
    let older = p.client.initiate(p.to_router, t).map_err(|e| e.to_string())?;
    let newer = p.client.initiate(p.to_router, t + Duration::from_millis(1)).map_err(|e| e.to_string())?;
    ensure!(p.router.respond(&newer.bytes, addr(CLIENT), t).is_some(), "seed {seed}: fresh initiation refused");
    ensure!(p.router.respond(&older.bytes, addr(CLIENT), t).is_none(), "seed {seed}: older timestamp answered");
    ensure!(p.router.respond(&newer.bytes, addr(CLIENT), t).is_none(), "seed {seed}: replay answered");
    ensure!(p.router.receive(&older.bytes, addr("192.0.2.1:1"), t).is_empty(), "seed {seed}: replay via receive");
    Ok(String::new())
}

/// (c) unauthenticated datagrams elicit nothing.
fn garbage_silent(seed: u64) -> Check {
    let mut p = pair(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for kind in 0..5 {
        let len = match kind {
            0 => INITIATION_LEN,
            1 => RESPONSE_LEN,
            2 => rng.gen_range(32..200),
            _ => rng.gen_range(0..200),
        };
        let mut d = vec![0u8; len];
        rng.fill_bytes(&mut d);
        if kind < 3 && len >= 4 {
            d[..4].copy_from_slice(&[[1u8, 2, 4][kind], 0, 0, 0]);
        }
        ensure!(
            p.router.receive(&d, addr(CLIENT), Duration::ZERO).is_empty(),
            "seed {seed}: answered garbage of kind {kind}"
        );
        ensure!(p.client.receive(&d, addr(ROUTER), Duration::ZERO).is_empty(), "seed {seed}: client answered garbage");
    }
    ensure!(p.router.endpoint(p.to_client).is_none(), "seed {seed}: garbage set an endpoint");
    Ok(String::new())
}

fn establish(p: &mut Pair, now: Duration) -> Result<(), String> {
    let init = p.client.initiate(p.to_router, now).map_err(|e| e.to_string())?;
    let resp = p.router.respond(&init.bytes, addr(CLIENT), now).ok_or("no response")?;
    for d in sends(p.client.receive(&resp.bytes, addr(ROUTER), now)) {
        p.router.receive(&d, addr(CLIENT), now);
    }
    Ok(())
}

/// (d) both sides derive the same secret and mirrored session keys.
fn agreement_symmetric(seed: u64) -> Check {
    let mut p = pair(seed);
    let suite = StandardSuite;
    let ab = suite.agree(p.client_id.private_key(), p.router_id.public_key());
    let ba = suite.agree(p.router_id.private_key(), p.client_id.public_key());
    ensure!(ab.is_some() && ab == ba, "seed {seed}: static agreement differs");
    establish(&mut p, Duration::ZERO)?;
    let c = p.client.session_keys(p.to_router).ok_or("client has no session")?;
    let r = p.router.session_keys(p.to_client).ok_or("router has no session")?;
    ensure!(c.send == r.receive && c.receive == r.send, "seed {seed}: session keys not mirrored");
    ensure!(c.send != c.receive, "seed {seed}: send and receive keys coincide");
    Ok(String::new())
}

/// (e) the next authenticated packet from a new address moves all replies.
fn roaming_redirects(seed: u64) -> Check {
    let mut p = pair(seed);
    let now = Duration::ZERO;
    establish(&mut p, now)?;
    let port = 1024 + (seed % 60000) as u16;
    let moved = SocketAddr::new("198.51.100.20".parse().unwrap(), port);
    let SealOutput::Transport(d) = p.client.seal(&request(), now).map_err(|e| e.to_string())? else {
        return Err(format!("seed {seed}: no transport"));
    };
    let mut forged = d.bytes.clone();
    let last = forged.len() - 1;
    forged[last] ^= 0x80;
    p.router.receive(&forged, "192.0.2.66:9".parse().unwrap(), now);
    ensure!(p.router.endpoint(p.to_client) == Some(addr(CLIENT)), "seed {seed}: forged packet moved endpoint");
    ensure!(!p.router.receive(&d.bytes, moved, now).is_empty(), "seed {seed}: packet dropped");
    for _ in 0..3 {
        let SealOutput::Transport(out) = p.router.seal(&reply(), now).map_err(|e| e.to_string())? else {
            return Err(format!("seed {seed}: reply not sealed"));
        };
        ensure!(out.to == moved, "seed {seed}: reply went to {}", out.to);
    }
    Ok(String::new())
}

fn protocol_suite() -> Check {
    let props: [(&str, fn(u64) -> Check); 5] = [
        ("a", handshake_is_three_messages),
        ("b", replays_ignored),
        ("c", garbage_silent),
        ("d", agreement_symmetric),
        ("e", roaming_redirects),
    ];
    for (tag, prop) in props {
        for seed in 0..1000u64 {
            prop(seed).map_err(|e| format!("({tag}) {e}"))?;
        }
    }
    Ok("(a)-(e) each hold for 1000 seeds".into())
}

// ---------------------------------------------------------------- 6: policy

fn policy_isolation() -> Check {
    let plan = default_plan();
    let leaves: Vec<_> = plan.leaves().cloned().collect();
    let host = |name: &str, n: u8| {
        let s = leaves.iter().find(|l| l.name == name).unwrap();
        let mut o = s.base.octets();
        o[3] = n;
        FlowEndpoint::Host(Ipv4Addr::from(o))
    };
    let internet = FlowEndpoint::Internet;
    let mut srcs: Vec<(String, FlowEndpoint)> = leaves.iter().map(|l| (l.name.clone(), host(&l.name, 10))).collect();
    srcs.push(("internet".into(), internet));
    let mut dsts: Vec<(String, FlowEndpoint)> = leaves.iter().map(|l| (l.name.clone(), host(&l.name, 20))).collect();
    dsts.push(("internet".into(), internet));
    let egress = [Protocol::Dhcp, Protocol::Ntp, Protocol::Tftp];

    let mut triples = 0;
    for (sname, src) in &srcs {
        for (dname, dst) in &dsts {
            for proto in Protocol::CONCRETE {
                for state in [ConnState::New, ConnState::Established] {
                    triples += 1;
                    let v = plan.evaluate(*src, *dst, proto, Direction::of(*dst), state).verdict;
                    let allowed = v == Verdict::Allow;
                    let flow = format!("{sname} -> {dname} {} {state:?}", proto.as_str());
                    if sname == "Guest" {
                        ensure!(allowed == (dname == "internet"), "{flow}: {v:?}");
                    }
                    if dname == "Guest" && sname != "internet" {
                        ensure!(!allowed, "{flow} reaches Guest");
                    }
                    if sname == "restricted" {
                        ensure!(!allowed || egress.contains(&proto), "{flow}: restricted egress {v:?}");
                        ensure!(!allowed || dname == "internet", "{flow}: restricted reaches a subnet");
                    }
                    if dname == "Outgoing" && sname != "Outgoing" {
                        if state == ConnState::New {
                            ensure!(!allowed, "{flow}: new inbound allowed");
                        } else if sname == "internet" {
                            ensure!(allowed, "{flow}: established reply refused");
                        }
                    }
                }
            }
        }
    }
    for proto in Protocol::CONCRETE {
        let v = plan.evaluate(host("restricted", 10), FlowEndpoint::Router, proto, Direction::Inbound, ConnState::New);
        ensure!(
            (v.verdict == Verdict::Allow) == egress.contains(&proto),
            "restricted -> router {}: {:?}",
            proto.as_str(),
            v.verdict
        );
    }
    Ok(format!("{triples} flows"))
}

// ---------------------------------------------------------------- 7: calibration

fn calibrated_reproduction() -> Check {
    let mut means = BTreeMap::new();
    let mut worst: (f64, &str) = (0.0, "");
    for id in ScenarioId::ALL {
        let cfg = default_calibration(id);
        ensure!(cfg.seed == 42 && cfg.command_count == 1000, "{id}: default seed/count changed");
        let d = run_scenario(&cfg).map_err(|e| e.to_string())?.ok_delays();
        ensure!(d.len() == 1000, "{id}: {} ok samples", d.len());
        let s = describe(&d).map_err(|e| e.to_string())?;
        let target = calibration_target(id).1;
        let err = (s.mean - target) / target;
        ensure!(err.abs() <= 0.05, "{id}: mean {:.2} vs {target} ({:+.2}%)", s.mean, 100.0 * err);
        ensure!(s.minimum >= cfg.floor_ms() - 1e-6, "{id}: min {} below floor {}", s.minimum, cfg.floor_ms());
        if err.abs() > worst.0 {
            worst = (err.abs(), id.slug());
        }
        means.insert(id, s.mean);
    }
    use ScenarioId::*;
    for (http, https, cloud) in [
        (WgHttp4g, WgHttps4g, Cloud4g),
        (WgHttpOffice, WgHttpsOffice, CloudOffice),
        (WgHttpPublic, WgHttpsPublic, CloudPublic),
    ] {
        ensure!(means[&http] < means[&https], "{http} not faster than {https}");
        ensure!(means[&http] < means[&cloud], "{http} not faster than {cloud}");
    }
    Ok(format!("11/11 within 5%, worst {} at {:.2}%", worst.1, 100.0 * worst.0))
}

// ---------------------------------------------------------------- 8: determinism

fn deterministic_csv(dir: &Path) -> Check {
    for id in ScenarioId::ALL {
        let mut outputs = Vec::new();
        for run in 0..2 {
            let out = dir.join(format!("{}-{run}.csv", id.slug()));
            let events = dir.join(format!("{}-{run}.events.csv", id.slug()));
            let o = exec(
                bin()
                    .args(["run", "--scenario", id.slug(), "--seed", "42", "--count", "1000", "--out"])
                    .arg(&out)
                    .arg("--events")
                    .arg(&events),
            )?;
            ensure!(o.status.success(), "{id}: run exited with {}", o.status);
            let bytes = |p: &Path| std::fs::read(p).map_err(|e| e.to_string());
            outputs.push((bytes(&out)?, bytes(&events)?));
        }
        ensure!(outputs[0] == outputs[1], "{id}: outputs differ between runs");
        ensure!(outputs[0].0.iter().filter(|b| **b == b'\n').count() == 1001, "{id}: expected 1001 lines");
    }
    Ok("11 scenarios, samples and events byte-identical".into())
}

// ---------------------------------------------------------------- 9: matching

fn synthetic_trace(rng: &mut ChaCha8Rng, n: usize, offset: f64) -> (Vec<IssuedCommand>, Vec<LightEvent>, Vec<f64>) {
    let mut cmds = Vec::new();
    let mut events = Vec::new();
    let mut truth = Vec::new();
    let mut t = rng.gen_range(0.0..1000.0);
    for i in 0..n {
        let target = if i % 2 == 0 { LightState::On } else { LightState::Off };
        let act = rng.gen_range(28.0..900.0);
        cmds.push(IssuedCommand { seq: i as u64, issued_ms: t, target, status: SampleStatus::Ok });
        events.push(LightEvent { monitor_timestamp_ms: t + act + offset, transition: Transition::to(target) });
        truth.push(act);
        t += act + rng.gen_range(20.0..1500.0);
    }
    (cmds, events, truth)
}

fn event_matching() -> Check {
    let bound = 10.0;
    let window = 5000.0;
    let mut traces = 0;
    for seed in 0..300u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let offset = rng.gen_range(-bound..=bound);
        let (cmds, mut events, truth) = synthetic_trace(&mut rng, 100, offset);
        let r = match_events(&cmds, &events, bound, window).map_err(|e| e.to_string())?;
        ensure!(r.matched.len() == 100, "seed {seed}: {} of 100 matched", r.matched.len());
        ensure!(r.orphan_events.is_empty() && r.unmatched_commands.is_empty(), "seed {seed}: leftovers");
        for m in &r.matched {
            let err = m.actuation_delay_ms - truth[m.seq as usize];
            ensure!(err.abs() <= bound + 1e-9, "seed {seed}: delay error {err}");
            ensure!((err - offset).abs() < 1e-6, "seed {seed}: shift {err} not the injected {offset}");
        }

        let mut dropped: Vec<u64> = (0..100).filter(|_| rng.gen_bool(0.1)).collect();
        for &d in dropped.iter().rev() {
            events.remove(d as usize);
        }
        let stray = LightEvent { monitor_timestamp_ms: cmds[0].issued_ms - 5.0 * bound, transition: Transition::OffToOn };
        events.insert(0, stray);
        let r = match_events(&cmds, &events, bound, window).map_err(|e| e.to_string())?;
        dropped.sort_unstable();
        ensure!(r.unmatched_commands == dropped, "seed {seed}: unmatched {:?} vs dropped {dropped:?}", r.unmatched_commands);
        ensure!(r.orphan_events == vec![stray], "seed {seed}: orphans {:?}", r.orphan_events);
        traces += 2;
    }
    for id in [ScenarioId::LanLocal, ScenarioId::WgHttpOffice, ScenarioId::CloudPublic] {
        let mut cfg = default_calibration(id);
        cfg.command_count = 300;
        let out = run_scenario(&cfg).map_err(|e| e.to_string())?;
        let r = match_events(&out.commands, &out.events, cfg.monitor_bound_ms, window).map_err(|e| e.to_string())?;
        ensure!(r.matched.len() == 300 && r.orphan_events.is_empty(), "{id}: {} of 300 matched", r.matched.len());
    }
    Ok(format!("{traces} synthetic traces and 3 simulated runs"))
}

fn main() {
    let dir = tempfile::tempdir().expect("temporary directory");
    let results = [
        criterion(1, "subnet plan table", Some(Duration::from_secs(1)), || plan_matches_table(dir.path())),
        criterion(2, "published-table consistency", Some(Duration::from_secs(1)), published_tables_consistent),
        criterion(3, "statistics oracle", None, || describe_matches_oracle(dir.path())),
        criterion(4, "t-distribution accuracy", None, t_quantiles_accurate),
        criterion(5, "protocol property suite", Some(Duration::from_secs(30)), protocol_suite),
        criterion(6, "policy isolation", Some(Duration::from_secs(5)), policy_isolation),
        criterion(7, "calibrated reproduction", Some(Duration::from_secs(60)), calibrated_reproduction),
        criterion(8, "determinism", None, || deterministic_csv(dir.path())),
        criterion(9, "event matching", None, event_matching),
    ];
    let passed = results.iter().filter(|ok| **ok).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
