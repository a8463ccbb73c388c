//! The segmented home-network address plan, its firewall policy and
//! derived views (IPv6 ULA plan, tunnel scope).

use std::fmt;
use std::net::{Ipv4Addr, Ipv6Addr};
use std::str::FromStr;

use ipnet::{Ipv4Net, Ipv6Net};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PlanError {
    #[error("{name}: base {base} has host bits set under /{prefix}")]
    HostBitsSet { name: String, base: Ipv4Addr, prefix: u8 },
    #[error("{name}: prefix /{prefix} is out of range")]
    BadPrefix { name: String, prefix: u8 },
    #[error("subnet {0} lies outside the root block")]
    OutsideRoot(String),
    #[error("leaf subnets {0} and {1} overlap")]
    LeavesOverlap(String, String),
    #[error("subnet {0} is not contained in any parent")]
    Orphan(String),
    #[error("duplicate subnet name {0}")]
    DuplicateName(String),
    #[error("unknown protocol {0:?}")]
    UnknownProtocol(String),
    #[error("unknown subnet {0:?} in rule")]
    UnknownSubnet(String),
    #[error("duplicate rule id {0}")]
    DuplicateRuleId(u32),
    #[error("policy must end with a catch-all rule")]
    MissingCatchAll,
    #[error("cannot parse rule line {line}: {reason}")]
    BadRule { line: usize, reason: String },
    #[error("global id {0:#x} does not fit in 40 bits")]
    GlobalIdRange(u64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Category {
    MainFixed,
    MainMobile,
    MainGaming,
    Services,
    IotRestricted,
    IotOutgoing,
    Media,
    Guest,
    Parent,
}

impl Category {
    pub fn is_iot(self) -> bool {
        matches!(self, Category::IotRestricted | Category::IotOutgoing)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubnetSpec {
    pub name: String,
    pub base: Ipv4Addr,
    pub prefix: u8,
    pub note: String,
    pub category: Category,
}

impl SubnetSpec {
    fn new(name: &str, base: [u8; 4], prefix: u8, category: Category, note: &str) -> Self {
        SubnetSpec {
            name: name.to_string(),
            base: Ipv4Addr::from(base),
            prefix,
            note: note.to_string(),
            category,
        }
    }

    pub fn net(&self) -> Ipv4Net {
        Ipv4Net::new(self.base, self.prefix).expect("prefix validated")
    }

    pub fn is_parent(&self) -> bool {
        self.category == Category::Parent
    }

    /// Dotted upper-case hex of the base address, e.g. `C0.A8.20.00`.
    pub fn hex(&self) -> String {
        let o = self.base.octets();
        format!("{:02X}.{:02X}.{:02X}.{:02X}", o[0], o[1], o[2], o[3])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VpnConfigMode {
    Standard,
    OnDemand,
    PerApp,
    AlwaysOn,
}

/// Which end of a flow. Hosts outside the plan's root block are the Internet.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FlowEndpoint {
    Internet,
    /// The home router itself (DHCP/NTP/TFTP server, tunnel endpoint).
    Router,
    /// A remote device arriving through the VPN tunnel.
    Tunnel,
    Host(Ipv4Addr),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    Any,
    Dhcp,
    Ntp,
    Tftp,
    Http,
    Https,
    TunnelUdp,
}

impl Protocol {
    pub const CONCRETE: [Protocol; 6] = [
        Protocol::Dhcp,
        Protocol::Ntp,
        Protocol::Tftp,
        Protocol::Http,
        Protocol::Https,
        Protocol::TunnelUdp,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::Any => "any",
            Protocol::Dhcp => "dhcp",
            Protocol::Ntp => "ntp",
            Protocol::Tftp => "tftp",
            Protocol::Http => "http",
            Protocol::Https => "https",
            Protocol::TunnelUdp => "tunnel-udp",
        }
    }
}

impl FromStr for Protocol {
    type Err = PlanError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "any" => Ok(Protocol::Any),
            "dhcp" => Ok(Protocol::Dhcp),
            "ntp" => Ok(Protocol::Ntp),
            "tftp" => Ok(Protocol::Tftp),
            "http" => Ok(Protocol::Http),
            "https" => Ok(Protocol::Https),
            "tunnel-udp" => Ok(Protocol::TunnelUdp),
            _ => Err(PlanError::UnknownProtocol(s.to_string())),
        }
    }
}

/// Direction of a flow as seen from the home network: `Outbound` when it
/// heads for the Internet, `Inbound` otherwise.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    Inbound,
    Outbound,
}

impl Direction {
    pub fn of(dst: FlowEndpoint) -> Direction {
        if dst == FlowEndpoint::Internet {
            Direction::Outbound
        } else {
            Direction::Inbound
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConnState {
    New,
    Established,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Allow,
    Deny,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum EndpointPattern {
    Any,
    Internet,
    Router,
    Tunnel,
    /// A subnet and everything nested inside it.
    Subnet(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DirectionMatch {
    Any,
    Is(Direction),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum StateMatch {
    Any,
    Is(ConnState),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PolicyRule {
    pub id: u32,
    pub verdict: Verdict,
    pub direction: DirectionMatch,
    pub protocol: Protocol,
    pub state: StateMatch,
    pub src: EndpointPattern,
    pub dst: EndpointPattern,
}

impl PolicyRule {
    fn is_catch_all(&self) -> bool {
        self.src == EndpointPattern::Any
            && self.dst == EndpointPattern::Any
            && self.protocol == Protocol::Any
            && self.direction == DirectionMatch::Any
            && self.state == StateMatch::Any
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct FlowDecision {
    pub verdict: Verdict,
    pub matched_rule: u32,
}

pub const CATCH_ALL_ID: u32 = 9999;

/// Rules in evaluation order (ascending id), ending in a catch-all.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PolicyMatrix {
    rules: Vec<PolicyRule>,
}

impl PolicyMatrix {
    pub fn new(mut rules: Vec<PolicyRule>) -> Result<Self, PlanError> {
        rules.sort_by_key(|r| r.id);
        if let Some(w) = rules.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(PlanError::DuplicateRuleId(w[0].id));
        }
        if !rules.last().is_some_and(PolicyRule::is_catch_all) {
            return Err(PlanError::MissingCatchAll);
        }
        Ok(PolicyMatrix { rules })
    }

    /// Only the final deny.
    pub fn deny_all() -> Self {
        PolicyMatrix {
            rules: vec![rule(CATCH_ALL_ID, Verdict::Deny, "any", "any", Protocol::Any, None)],
        }
    }

    pub fn rules(&self) -> &[PolicyRule] {
        &self.rules
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubnetPlan {
    root: SubnetSpec,
    children: Vec<SubnetSpec>,
    policy: PolicyMatrix,
}

/// Path from the root down to the deepest containing subnet.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Classification {
    Path(Vec<String>),
    Unassigned,
}

impl SubnetPlan {
    pub fn new(
        root: SubnetSpec,
        children: Vec<SubnetSpec>,
        policy: PolicyMatrix,
    ) -> Result<Self, PlanError> {
        let all: Vec<&SubnetSpec> = std::iter::once(&root).chain(&children).collect();
        for s in &all {
            if s.prefix > 32 {
                return Err(PlanError::BadPrefix {
                    name: s.name.clone(),
                    prefix: s.prefix,
                });
            }
            if s.net().network() != s.base {
                return Err(PlanError::HostBitsSet {
                    name: s.name.clone(),
                    base: s.base,
                    prefix: s.prefix,
                });
            }
        }
        for (i, a) in all.iter().enumerate() {
            if all[..i].iter().any(|b| b.name == a.name) {
                return Err(PlanError::DuplicateName(a.name.clone()));
            }
        }
        let root_net = root.net();
        for c in &children {
            if !root_net.contains(&c.net()) {
                return Err(PlanError::OutsideRoot(c.name.clone()));
            }
            let has_parent = all
                .iter()
                .any(|p| p.is_parent() && p.name != c.name && p.net().contains(&c.net()));
            if !has_parent {
                return Err(PlanError::Orphan(c.name.clone()));
            }
        }
        let leaves: Vec<&SubnetSpec> = children.iter().filter(|c| !c.is_parent()).collect();
        for (i, a) in leaves.iter().enumerate() {
            for b in &leaves[i + 1..] {
                if a.net().contains(&b.net()) || b.net().contains(&a.net()) {
                    return Err(PlanError::LeavesOverlap(a.name.clone(), b.name.clone()));
                }
            }
        }
        let plan = SubnetPlan {
            root,
            children,
            policy,
        };
        for r in plan.policy.rules() {
            for p in [&r.src, &r.dst] {
                if let EndpointPattern::Subnet(name) = p {
                    plan.subnet(name)
                        .ok_or_else(|| PlanError::UnknownSubnet(name.clone()))?;
                }
            }
        }
        Ok(plan)
    }

    pub fn root(&self) -> &SubnetSpec {
        &self.root
    }

    pub fn children(&self) -> &[SubnetSpec] {
        &self.children
    }

    /// Root followed by children, in plan order.
    pub fn subnets(&self) -> impl Iterator<Item = &SubnetSpec> {
        std::iter::once(&self.root).chain(&self.children)
    }

    pub fn leaves(&self) -> impl Iterator<Item = &SubnetSpec> {
        self.children.iter().filter(|c| !c.is_parent())
    }

    pub fn parents(&self) -> impl Iterator<Item = &SubnetSpec> {
        self.subnets().filter(|c| c.is_parent())
    }

    pub fn policy(&self) -> &PolicyMatrix {
        &self.policy
    }

    pub fn with_policy(&self, policy: PolicyMatrix) -> Result<Self, PlanError> {
        SubnetPlan::new(self.root.clone(), self.children.clone(), policy)
    }

    pub fn subnet(&self, name: &str) -> Option<&SubnetSpec> {
        self.subnets().find(|s| s.name == name)
    }

    /// Smallest parent strictly containing `name`.
    pub fn parent_of(&self, name: &str) -> Option<&SubnetSpec> {
        let s = self.subnet(name)?;
        self.parents()
            .filter(|p| p.name != s.name && p.net().contains(&s.net()))
            .max_by_key(|p| p.prefix)
    }

    /// All subnets containing `addr`, root first.
    fn containing(&self, addr: Ipv4Addr) -> Vec<&SubnetSpec> {
        let mut v: Vec<&SubnetSpec> = self.subnets().filter(|s| s.net().contains(&addr)).collect();
        v.sort_by_key(|s| (s.prefix, !s.is_parent()));
        v
    }

    pub fn classify(&self, addr: Ipv4Addr) -> Classification {
        let path = self.containing(addr);
        // Only the root covers it: an unallocated gap.
        if path.len() < 2 {
            return Classification::Unassigned;
        }
        Classification::Path(path.into_iter().map(|s| s.name.clone()).collect())
    }

    /// The leaf holding `addr`, if any.
    pub fn leaf_of(&self, addr: Ipv4Addr) -> Option<&SubnetSpec> {
        self.leaves().find(|s| s.net().contains(&addr))
    }

    pub fn endpoint(&self, addr: Ipv4Addr) -> FlowEndpoint {
        if self.root.net().contains(&addr) {
            FlowEndpoint::Host(addr)
        } else {
            FlowEndpoint::Internet
        }
    }

    fn pattern_matches(&self, p: &EndpointPattern, e: FlowEndpoint) -> bool {
        match (p, e) {
            (EndpointPattern::Any, _) => true,
            (EndpointPattern::Internet, FlowEndpoint::Internet) => true,
            (EndpointPattern::Router, FlowEndpoint::Router) => true,
            (EndpointPattern::Tunnel, FlowEndpoint::Tunnel) => true,
            (EndpointPattern::Subnet(name), FlowEndpoint::Host(a)) => self
                .subnet(name)
                .is_some_and(|s| s.net().contains(&a)),
            _ => false,
        }
    }

    /// First matching rule wins.
    pub fn evaluate(
        &self,
        src: FlowEndpoint,
        dst: FlowEndpoint,
        protocol: Protocol,
        direction: Direction,
        state: ConnState,
    ) -> FlowDecision {
        let r = self
            .policy
            .rules()
            .iter()
            .find(|r| {
                self.pattern_matches(&r.src, src)
                    && self.pattern_matches(&r.dst, dst)
                    && (r.protocol == Protocol::Any || r.protocol == protocol)
                    && (r.direction == DirectionMatch::Any || r.direction == DirectionMatch::Is(direction))
                    && (r.state == StateMatch::Any || r.state == StateMatch::Is(state))
            })
            .expect("policy ends with a catch-all");
        FlowDecision {
            verdict: r.verdict,
            matched_rule: r.id,
        }
    }
}

/// [`SubnetPlan::evaluate`] with the protocol given by name.
pub fn evaluate_policy(
    plan: &SubnetPlan,
    src: FlowEndpoint,
    dst: FlowEndpoint,
    protocol: &str,
    direction: Direction,
    state: ConnState,
) -> Result<FlowDecision, PlanError> {
    Ok(plan.evaluate(src, dst, protocol.parse()?, direction, state))
}

fn pattern(s: &str) -> EndpointPattern {
    match s {
        "any" => EndpointPattern::Any,
        "internet" => EndpointPattern::Internet,
        "router" => EndpointPattern::Router,
        "tunnel" => EndpointPattern::Tunnel,
        name => EndpointPattern::Subnet(name.to_string()),
    }
}

fn rule(
    id: u32,
    verdict: Verdict,
    src: &str,
    dst: &str,
    protocol: Protocol,
    state: Option<ConnState>,
) -> PolicyRule {
    PolicyRule {
        id,
        verdict,
        direction: DirectionMatch::Any,
        protocol,
        state: state.map_or(StateMatch::Any, StateMatch::Is),
        src: pattern(src),
        dst: pattern(dst),
    }
}

fn default_policy() -> PolicyMatrix {
    use ConnState::Established as Est;
    use Protocol::*;
    use Verdict::{Allow, Deny};
    let rules = vec![
        rule(10, Allow, "internet", "router", TunnelUdp, None),
        // Guest: Internet only.
        rule(100, Allow, "Guest", "internet", Any, None),
        rule(110, Allow, "Guest", "router", Dhcp, None),
        rule(120, Deny, "Guest", "any", Any, None),
        rule(130, Allow, "internet", "Guest", Any, Some(Est)),
        rule(140, Allow, "router", "Guest", Dhcp, Some(Est)),
        rule(150, Deny, "any", "Guest", Any, None),
        // restricted IoT: nothing but limited DHCP, NTP, TFTP.
        rule(200, Allow, "restricted", "router", Dhcp, None),
        rule(210, Allow, "restricted", "router", Tftp, None),
        rule(220, Allow, "restricted", "router", Ntp, None),
        rule(230, Allow, "restricted", "internet", Ntp, None),
        rule(240, Deny, "restricted", "any", Any, None),
        rule(250, Allow, "router", "restricted", Dhcp, Some(Est)),
        rule(260, Allow, "router", "restricted", Tftp, Some(Est)),
        rule(270, Allow, "router", "restricted", Ntp, Some(Est)),
        rule(280, Allow, "internet", "restricted", Ntp, Some(Est)),
        rule(290, Deny, "any", "restricted", Any, None),
        // Remote control through the tunnel reaches the IoT block only.
        rule(300, Allow, "tunnel", "IoT", Http, None),
        rule(310, Allow, "tunnel", "IoT", Https, None),
        rule(320, Allow, "IoT", "tunnel", Any, Some(Est)),
        rule(330, Deny, "tunnel", "any", Any, None),
        rule(340, Deny, "any", "tunnel", Any, None),
        // Outgoing IoT: outbound plus related inbound.
        rule(400, Allow, "Outgoing", "internet", Any, None),
        rule(410, Allow, "Outgoing", "router", Dhcp, None),
        rule(420, Allow, "Outgoing", "router", Ntp, None),
        rule(430, Allow, "any", "Outgoing", Any, Some(Est)),
        rule(440, Deny, "any", "Outgoing", Any, None),
        // No device-to-device traffic inside IoT.
        rule(500, Deny, "IoT", "any", Any, None),
        // Main, Services and Media.
        rule(600, Allow, "Main", "Main", Any, None),
        rule(610, Allow, "Main", "Services", Any, None),
        rule(620, Allow, "Main", "Media", Any, None),
        rule(630, Allow, "Services", "Main", Any, Some(Est)),
        rule(640, Allow, "Media", "Main", Any, Some(Est)),
        rule(700, Allow, "Main", "internet", Any, None),
        rule(710, Allow, "Services", "internet", Any, None),
        rule(720, Allow, "Media", "internet", Any, None),
        rule(730, Allow, "internet", "Main", Any, Some(Est)),
        rule(740, Allow, "internet", "Services", Any, Some(Est)),
        rule(750, Allow, "internet", "Media", Any, Some(Est)),
        rule(800, Allow, "Home", "router", Dhcp, None),
        rule(810, Allow, "Home", "router", Ntp, None),
        rule(CATCH_ALL_ID, Deny, "any", "any", Any, None),
    ];
    PolicyMatrix::new(rules).expect("default policy is well formed")
}

/// The segmented plan: Main (fixed, mobile, gaming), Services, IoT
/// (restricted, outgoing), Media and Guest under 192.168.0.0/16.
pub fn default_plan() -> SubnetPlan {
    use Category::*;
    let root = SubnetSpec::new("Home", [192, 168, 0, 0], 16, Parent, "");
    let children = vec![
        SubnetSpec::new("Main", [192, 168, 0, 0], 20, Parent, ""),
        SubnetSpec::new("Fixed", [192, 168, 0, 0], 24, MainFixed, "e.g. Computers"),
        SubnetSpec::new("Mobile", [192, 168, 1, 0], 24, MainMobile, "e.g. Smart phones/tablets"),
        SubnetSpec::new("Gaming", [192, 168, 2, 0], 24, MainGaming, "e.g. Gaming and other consoles"),
        SubnetSpec::new(
            "Services",
            [192, 168, 16, 0],
            20,
            Services,
            "Network attached services (e.g. NAS/Printer/...)",
        ),
        SubnetSpec::new(
            "IoT",
            [192, 168, 32, 0],
            20,
            Parent,
            "All IoT (no device-2-device comms by default)",
        ),
        SubnetSpec::new(
            "restricted",
            [192, 168, 32, 0],
            24,
            IotRestricted,
            "No incoming/outgoing (except limited DHCP, NTP, TFTP,...)",
        ),
        SubnetSpec::new(
            "Outgoing",
            [192, 168, 33, 0],
            24,
            IotOutgoing,
            "Enables outgoing connection, and related incoming.",
        ),
        SubnetSpec::new("Media", [192, 168, 48, 0], 20, Media, "E.g. smart TVs, home theaters"),
        SubnetSpec::new(
            "Guest",
            [192, 168, 64, 0],
            20,
            Guest,
            "Internet only, no access to other parts of the network. (e.g. guests' phone)",
        ),
    ];
    SubnetPlan::new(root, children, default_policy()).expect("default plan is well formed")
}

impl fmt::Display for EndpointPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EndpointPattern::Any => f.write_str("any"),
            EndpointPattern::Internet => f.write_str("internet"),
            EndpointPattern::Router => f.write_str("router"),
            EndpointPattern::Tunnel => f.write_str("tunnel"),
            EndpointPattern::Subnet(n) => f.write_str(n),
        }
    }
}

impl fmt::Display for PolicyRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = match self.verdict {
            Verdict::Allow => "allow",
            Verdict::Deny => "deny",
        };
        let direction = match self.direction {
            DirectionMatch::Any => "any",
            DirectionMatch::Is(Direction::Inbound) => "inbound",
            DirectionMatch::Is(Direction::Outbound) => "outbound",
        };
        let state = match self.state {
            StateMatch::Any => "any",
            StateMatch::Is(ConnState::New) => "new",
            StateMatch::Is(ConnState::Established) => "established",
        };
        write!(
            f,
            "{} {verdict} {direction} {} {state} from {} to {}",
            self.id,
            self.protocol.as_str(),
            self.src,
            self.dst
        )
    }
}

/// One rule per line in evaluation order:
/// `<id> <allow|deny> <any|inbound|outbound> <protocol> <any|new|established> from <src> to <dst>`.
pub fn render_firewall(plan: &SubnetPlan) -> String {
    plan.policy()
        .rules()
        .iter()
        .map(|r| format!("{r}\n"))
        .collect()
}

/// Inverse of [`render_firewall`]. Blank lines and `#` comments are skipped.
pub fn parse_firewall(text: &str) -> Result<PolicyMatrix, PlanError> {
    let mut rules = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |reason: &str| PlanError::BadRule {
            line: i + 1,
            reason: reason.to_string(),
        };
        let t: Vec<&str> = line.split_whitespace().collect();
        if t.len() != 9 || t[5] != "from" || t[7] != "to" {
            return Err(bad("expected 9 fields with 'from' and 'to'"));
        }
        let id = t[0].parse().map_err(|_| bad("rule id is not a number"))?;
        let verdict = match t[1] {
            "allow" => Verdict::Allow,
            "deny" => Verdict::Deny,
            _ => return Err(bad("verdict must be allow or deny")),
        };
        let direction = match t[2] {
            "any" => DirectionMatch::Any,
            "inbound" => DirectionMatch::Is(Direction::Inbound),
            "outbound" => DirectionMatch::Is(Direction::Outbound),
            _ => return Err(bad("bad direction")),
        };
        let protocol = t[3].parse()?;
        let state = match t[4] {
            "any" => StateMatch::Any,
            "new" => StateMatch::Is(ConnState::New),
            "established" => StateMatch::Is(ConnState::Established),
            _ => return Err(bad("bad connection state")),
        };
        rules.push(PolicyRule {
            id,
            verdict,
            direction,
            protocol,
            state,
            src: pattern(t[6]),
            dst: pattern(t[8]),
        });
    }
    PolicyMatrix::new(rules)
}

/// Blocks a remote tunnel peer may reach: the parents of all IoT leaves.
pub fn tunnel_scope(plan: &SubnetPlan) -> Vec<Ipv4Net> {
    let mut scope: Vec<Ipv4Net> = plan
        .leaves()
        .filter(|l| l.category.is_iot())
        .map(|l| {
            plan.parent_of(&l.name)
                .filter(|p| p.name != plan.root().name)
                .map_or(l.net(), SubnetSpec::net)
        })
        .collect();
    scope.sort();
    scope.dedup();
    if scope.is_empty() {
        log::warn!("plan has no IoT subnets; tunnel scope is empty");
    }
    scope
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Ipv6Subnet {
    pub name: String,
    pub ipv4: Ipv4Net,
    pub ipv6: Ipv6Net,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Ipv6Plan {
    /// The `fd00::/8` + global id site prefix.
    pub site: Ipv6Net,
    pub subnets: Vec<Ipv6Subnet>,
}

pub const GLOBAL_ID_BITS: u32 = 40;

/// Unique-local plan: site `fd<global id>::/48`, subnet id = third octet of
/// the IPv4 base. A `/24` leaf becomes a `/64`; shorter IPv4 prefixes keep the
/// same nesting (`/20` to `/60`, `/16` to `/56`).
pub fn derive_ipv6_plan(plan: &SubnetPlan, global_id: u64) -> Result<Ipv6Plan, PlanError> {
    if global_id >> GLOBAL_ID_BITS != 0 {
        return Err(PlanError::GlobalIdRange(global_id));
    }
    let site_bits: u128 = (0xfd_u128 << 120) | (u128::from(global_id) << 80);
    let site = Ipv6Net::new(Ipv6Addr::from(site_bits), 48).expect("valid prefix");
    let subnets = plan
        .subnets()
        .map(|s| {
            let subnet_id = u128::from(s.base.octets()[2]);
            let len = 64 - 24u8.saturating_sub(s.prefix).min(16);
            let addr = Ipv6Addr::from(site_bits | (subnet_id << 64));
            Ipv6Subnet {
                name: s.name.clone(),
                ipv4: s.net(),
                ipv6: Ipv6Net::new(addr, len).expect("valid prefix").trunc(),
            }
        })
        .collect();
    Ok(Ipv6Plan { site, subnets })
}

/// JSON row of the plan table.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanRow {
    pub name: String,
    pub ipv4: Ipv4Addr,
    pub hex: String,
    pub prefix: u8,
    pub note: String,
    pub category: Category,
    pub parent: Option<String>,
}

pub fn plan_rows(plan: &SubnetPlan) -> Vec<PlanRow> {
    plan.subnets()
        .map(|s| PlanRow {
            name: s.name.clone(),
            ipv4: s.base,
            hex: s.hex(),
            prefix: s.prefix,
            note: s.note.clone(),
            category: s.category,
            parent: plan.parent_of(&s.name).map(|p| p.name.clone()),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn host(s: &str) -> FlowEndpoint {
        FlowEndpoint::Host(s.parse().unwrap())
    }

    fn path(p: &[&str]) -> Classification {
        Classification::Path(p.iter().map(|s| s.to_string()).collect())
    }

    #[test]
    fn plan_shape() {
        let p = default_plan();
        assert_eq!(p.leaves().count(), 8);
        assert_eq!(
            p.parents().map(|s| s.name.as_str()).collect::<Vec<_>>(),
            ["Home", "Main", "IoT"]
        );
        assert_eq!(p.subnet("IoT").unwrap().hex(), "C0.A8.20.00");
        assert_eq!(p.subnet("Outgoing").unwrap().hex(), "C0.A8.21.00");
        assert_eq!(p.parent_of("Outgoing").unwrap().name, "IoT");
        assert_eq!(p.parent_of("Guest").unwrap().name, "Home");
        assert!(p.parent_of("Home").is_none());
    }

    #[test]
    fn classification() {
        let p = default_plan();
        let c = |a: &str| p.classify(a.parse().unwrap());
        assert_eq!(c("192.168.33.7"), path(&["Home", "IoT", "Outgoing"]));
        assert_eq!(c("192.168.2.40"), path(&["Home", "Main", "Gaming"]));
        assert_eq!(c("192.168.34.9"), path(&["Home", "IoT"]));
        assert_eq!(c("192.168.16.5"), path(&["Home", "Services"]));
        assert_eq!(c("10.0.0.1"), Classification::Unassigned);
        assert_eq!(c("192.168.200.1"), Classification::Unassigned);
    }

    #[test]
    fn policy_examples() {
        let p = default_plan();
        let ev = |s, d, proto: &str, st| {
            evaluate_policy(&p, s, d, proto, Direction::of(d), st)
                .unwrap()
                .verdict
        };
        use ConnState::*;
        assert_eq!(ev(host("192.168.64.2"), host("192.168.16.5"), "http", New), Verdict::Deny);
        assert_eq!(ev(host("192.168.32.9"), FlowEndpoint::Internet, "ntp", New), Verdict::Allow);
        assert_eq!(ev(host("192.168.32.9"), FlowEndpoint::Internet, "https", New), Verdict::Deny);
        assert_eq!(ev(FlowEndpoint::Internet, host("192.168.33.4"), "https", Established), Verdict::Allow);
        assert_eq!(ev(FlowEndpoint::Internet, host("192.168.33.4"), "https", New), Verdict::Deny);
        assert_eq!(ev(FlowEndpoint::Internet, FlowEndpoint::Router, "tunnel-udp", New), Verdict::Allow);
        assert_eq!(ev(FlowEndpoint::Tunnel, host("192.168.33.10"), "http", New), Verdict::Allow);
        assert_eq!(ev(FlowEndpoint::Tunnel, host("192.168.0.10"), "http", New), Verdict::Deny);
        assert_eq!(ev(host("192.168.32.5"), host("192.168.33.5"), "http", New), Verdict::Deny);
        assert!(matches!(
            evaluate_policy(&p, FlowEndpoint::Internet, FlowEndpoint::Router, "smtp", Direction::Inbound, New),
            Err(PlanError::UnknownProtocol(_))
        ));
    }

    #[test]
    fn firewall_round_trip() {
        let p = default_plan();
        let text = render_firewall(&p);
        assert!(text.lines().any(|l| l.contains("deny any any any from Guest to any")));
        assert_eq!(&parse_firewall(&text).unwrap(), p.policy());
        let empty = p.with_policy(PolicyMatrix::deny_all()).unwrap();
        assert_eq!(render_firewall(&empty), "9999 deny any any any from any to any\n");
        assert!(matches!(
            parse_firewall("1 allow any http any from any to Main\n"),
            Err(PlanError::MissingCatchAll)
        ));
    }

    #[test]
    fn ipv6_examples() {
        let p = default_plan();
        let v6 = derive_ipv6_plan(&p, 0x01_2345_6789).unwrap();
        assert_eq!(v6.site.to_string(), "fd01:2345:6789::/48");
        let out = v6.subnets.iter().find(|s| s.name == "Outgoing").unwrap();
        assert_eq!(out.ipv6.to_string(), "fd01:2345:6789:21::/64");
        let iot = v6.subnets.iter().find(|s| s.name == "IoT").unwrap();
        assert_eq!(iot.ipv6.to_string(), "fd01:2345:6789:20::/60");
        assert!(iot.ipv6.contains(&out.ipv6));
        let zero = derive_ipv6_plan(&p, 0).unwrap();
        let fixed = zero.subnets.iter().find(|s| s.name == "Fixed").unwrap();
        assert_eq!(fixed.ipv6.to_string(), "fd00::/64");
        assert_eq!(derive_ipv6_plan(&p, 1 << 40), Err(PlanError::GlobalIdRange(1 << 40)));
    }

    #[test]
    fn scope() {
        let p = default_plan();
        assert_eq!(tunnel_scope(&p), vec!["192.168.32.0/20".parse::<Ipv4Net>().unwrap()]);
        let no_iot = SubnetPlan::new(
            p.root().clone(),
            p.children().iter().filter(|c| !c.category.is_iot() && c.name != "IoT").cloned().collect(),
            PolicyMatrix::deny_all(),
        )
        .unwrap();
        assert!(tunnel_scope(&no_iot).is_empty());
    }

    #[test]
    fn invalid_plans_rejected() {
        let p = default_plan();
        let mut kids = p.children().to_vec();
        kids[1].base = "192.168.0.1".parse().unwrap();
        assert!(matches!(
            SubnetPlan::new(p.root().clone(), kids, PolicyMatrix::deny_all()),
            Err(PlanError::HostBitsSet { .. })
        ));
        let mut kids = p.children().to_vec();
        kids.push(SubnetSpec::new("Dup", [192, 168, 33, 128], 25, Category::Media, ""));
        assert!(matches!(
            SubnetPlan::new(p.root().clone(), kids, PolicyMatrix::deny_all()),
            Err(PlanError::LeavesOverlap(..))
        ));
    }
}
