//! Scenario configuration, read from TOML.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversary::{AttackAction, AttackSpec, AttackTarget};
use crate::nodes::{NodeIdentity, Role};
use crate::watermark::{NodeId, MAX_PAYLOAD};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot parse scenario: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid scenario:\n{0}")]
    Invalid(ValidationErrors),
}

/// Every problem found in a config, one `field: message` per entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationErrors(pub Vec<String>);

impl fmt::Display for ValidationErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "  - {e}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Singlehop,
    #[default]
    Multihop,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Area {
    pub length_m: f64,
    pub width_m: f64,
}

impl Default for Area {
    fn default() -> Self {
        Self {
            length_m: 100.0,
            width_m: 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeConfig {
    pub id: NodeId,
    pub ip: Ipv4Addr,
    pub role: Role,
    #[serde(default)]
    pub x: f64,
    #[serde(default)]
    pub y: f64,
    #[serde(default = "yes")]
    pub registered: bool,
}

impl NodeConfig {
    pub fn identity(&self) -> NodeIdentity {
        NodeIdentity {
            id: self.id,
            ip: self.ip,
            role: self.role,
            registered: self.registered,
        }
    }
}

/// Fixed path of one source: source, intermediates, gateway.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RouteConfig {
    pub path: Vec<NodeId>,
    /// Per-link delays; defaults to `hop_delay_ms` for every link.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delays_ms: Option<Vec<u64>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrafficConfig {
    pub source: NodeId,
    pub count: u32,
    #[serde(default = "default_interval")]
    pub interval_ms: u64,
    #[serde(default)]
    pub start_ms: u64,
    #[serde(default = "default_payload_len")]
    pub payload_len: usize,
    /// The source stamps readings this many seconds in the past.
    #[serde(default)]
    pub timestamp_lag_s: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyRotation {
    pub min: u64,
    pub max: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub seed: u64,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default = "default_freshness")]
    pub freshness_s: u32,
    #[serde(default = "default_time_base")]
    pub time_base_s: u32,
    #[serde(default)]
    pub area: Area,
    #[serde(default = "default_hop_delay")]
    pub hop_delay_ms: u64,
    #[serde(default = "yes")]
    pub purge_on_delivery: bool,
    /// Age after which an unfinished provenance set counts as dropped;
    /// defaults to five hop delays.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drop_timeout_ms: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_time_ms: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key_rotation: Option<KeyRotation>,
    pub nodes: Vec<NodeConfig>,
    pub routes: Vec<RouteConfig>,
    #[serde(default)]
    pub traffic: Vec<TrafficConfig>,
    #[serde(default)]
    pub attacks: Vec<AttackSpec>,
}

fn yes() -> bool {
    true
}
fn default_interval() -> u64 {
    1000
}
fn default_payload_len() -> usize {
    16
}
fn default_freshness() -> u32 {
    60
}
fn default_time_base() -> u32 {
    1_700_000_000
}
fn default_hop_delay() -> u64 {
    300
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate().map_err(ConfigError::Invalid)?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario config always serializes")
    }

    pub fn drop_timeout(&self) -> u64 {
        self.drop_timeout_ms.unwrap_or(5 * self.hop_delay_ms)
    }

    pub fn validate(&self) -> Result<(), ValidationErrors> {
        let mut errs = Vec::new();
        let mut by_id: BTreeMap<NodeId, &NodeConfig> = BTreeMap::new();
        let mut ips = BTreeSet::new();

        if !(self.area.length_m >= 0.0 && self.area.width_m >= 0.0) {
            errs.push("area: dimensions must be nonnegative".to_string());
        }
        if self.nodes.is_empty() {
            errs.push("nodes: at least one node is required".to_string());
        }
        for (i, n) in self.nodes.iter().enumerate() {
            if by_id.insert(n.id, n).is_some() {
                errs.push(format!("nodes[{i}].id: duplicate id {}", n.id));
            }
            if !ips.insert(n.ip) {
                errs.push(format!("nodes[{i}].ip: duplicate ip {}", n.ip));
            }
            if !(0.0..=self.area.length_m).contains(&n.x) || !(0.0..=self.area.width_m).contains(&n.y) {
                errs.push(format!("nodes[{i}]: position ({}, {}) outside the area", n.x, n.y));
            }
        }

        let mut routed = BTreeSet::new();
        for (i, r) in self.routes.iter().enumerate() {
            let f = format!("routes[{i}]");
            if r.path.len() < 2 {
                errs.push(format!("{f}.path: needs a source and a gateway"));
                continue;
            }
            if self.mode == Mode::Singlehop && r.path.len() != 2 {
                errs.push(format!(
                    "{f}.path: single-hop routes go straight from source to gateway"
                ));
            }
            let mut seen = BTreeSet::new();
            let last = r.path.len() - 1;
            for (j, id) in r.path.iter().enumerate() {
                if !seen.insert(id) {
                    errs.push(format!("{f}.path[{j}]: node {id} appears twice"));
                }
                let Some(n) = by_id.get(id) else {
                    errs.push(format!("{f}.path[{j}]: unknown node {id}"));
                    continue;
                };
                let want = match j {
                    0 => Role::Source,
                    j if j == last => Role::Gateway,
                    _ => Role::Intermediate,
                };
                if n.role != want {
                    errs.push(format!("{f}.path[{j}]: node {id} is a {} but must be a {want}", n.role));
                }
            }
            if !routed.insert(r.path[0]) {
                errs.push(format!("{f}.path[0]: source {} already has a route", r.path[0]));
            }
            if let Some(d) = &r.delays_ms {
                if d.len() != last {
                    errs.push(format!("{f}.delays_ms: expected {last} entries, got {}", d.len()));
                }
            }
        }

        for (i, t) in self.traffic.iter().enumerate() {
            let f = format!("traffic[{i}]");
            if !routed.contains(&t.source) {
                errs.push(format!("{f}.source: node {} has no route", t.source));
            }
            if t.count > 1 && t.interval_ms == 0 {
                errs.push(format!("{f}.interval_ms: must be positive"));
            }
            if t.payload_len > MAX_PAYLOAD {
                errs.push(format!("{f}.payload_len: at most {MAX_PAYLOAD}"));
            }
        }
        let sources: Vec<_> = self.traffic.iter().map(|t| t.source).collect();
        if sources.iter().collect::<BTreeSet<_>>().len() != sources.len() {
            errs.push("traffic: one entry per source".to_string());
        }

        if let Some(k) = self.key_rotation {
            if k.min == 0 || k.min > k.max {
                errs.push(format!(
                    "key_rotation: need 1 <= min <= max, got [{}, {}]",
                    k.min, k.max
                ));
            }
        }

        for (i, a) in self.attacks.iter().enumerate() {
            let f = format!("attacks[{i}]");
            if let Err(e) = a.validate() {
                errs.push(format!("{f}: {e}"));
            }
            if let AttackTarget::Link([from, to]) = a.target {
                for id in [from, to] {
                    if !by_id.contains_key(&id) {
                        errs.push(format!("{f}.target: unknown node {id}"));
                    }
                }
            }
            if let AttackAction::FakeInject { as_node, .. } = a.action {
                if !by_id.contains_key(&as_node) {
                    errs.push(format!("{f}.action.as_node: unknown node {as_node}"));
                }
            }
        }

        if errs.is_empty() {
            Ok(())
        } else {
            Err(ValidationErrors(errs))
        }
    }
}

/// A commented example scenario; parses and validates as is.
pub const EXAMPLE_CONFIG: &str = r#"# Example scenario: one source, three relays, one gateway.

# Every random choice (keys, payloads, rotation thresholds) derives from this.
seed = 7
# "multihop" embeds the watermark in each frame; "singlehop" stores it and
# sends the bare reading.
mode = "multihop"
# Maximum accepted age of a source timestamp at the gateway, seconds.
freshness_s = 60
# Wall-clock seconds at simulated time 0.
time_base_s = 1700000000
# Default per-link delay, milliseconds.
hop_delay_ms = 300
# Delete a provenance set right after the gateway retrieved it.
purge_on_delivery = true
# Unfinished sets older than this are reported as drop suspects.
drop_timeout_ms = 1500
# Optional hard stop for the simulation clock.
# max_time_ms = 60000

[area]
length_m = 100.0
width_m = 50.0

# Rotate the shared key after a random number of watermark generations.
[key_rotation]
min = 5
max = 10

[[nodes]]
id = 1
ip = "10.0.0.1"
role = "source"
x = 5.0
y = 25.0

[[nodes]]
id = 2
ip = "10.0.0.2"
role = "intermediate"
x = 25.0
y = 25.0

[[nodes]]
id = 3
ip = "10.0.0.3"
role = "intermediate"
x = 50.0
y = 25.0

[[nodes]]
id = 4
ip = "10.0.0.4"
role = "intermediate"
x = 75.0
y = 25.0

[[nodes]]
id = 5
ip = "10.0.0.254"
role = "gateway"
x = 95.0
y = 25.0
# Unregistered nodes get no network key and cannot write to the store.
registered = true

[[routes]]
path = [1, 2, 3, 4, 5]
# Optional per-link delays; one entry per link.
# delays_ms = [300, 300, 300, 300]

[[traffic]]
source = 1
count = 10
interval_ms = 1000
start_ms = 0
payload_len = 16
# timestamp_lag_s = 0

# Attacks. Targets are a directed link or the store; triggers are a packet,
# a time window, an instant or "always".
[[attacks]]
target = { link = [2, 3] }
trigger = { packet = { src = 1, seq = 5 } }
action = { kind = "modify_payload", edits = [{ offset = 0, xor = 1 }] }

# [[attacks]]
# target = { link = [3, 4] }
# trigger = "always"
# action = { kind = "eavesdrop" }

# [[attacks]]
# target = "store"
# trigger = { at = { time_ms = 2000 } }
# action = { kind = "store_probe", caller = 65535, source = 1, sequence = 1 }
"#;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn example_validates() {
        let cfg = ScenarioConfig::from_toml(EXAMPLE_CONFIG).unwrap();
        assert_eq!(cfg.nodes.len(), 5);
        assert_eq!(cfg.drop_timeout(), 1500);
        assert_eq!(cfg.attacks.len(), 1);
        let again = ScenarioConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn errors_name_the_fields() {
        let mut cfg = ScenarioConfig::from_toml(EXAMPLE_CONFIG).unwrap();
        cfg.routes[0].path = vec![1, 2, 9, 5, 4];
        cfg.traffic[0].source = 3;
        cfg.key_rotation = Some(KeyRotation { min: 4, max: 2 });
        cfg.nodes[1].x = 1000.0;
        let errs = cfg.validate().unwrap_err().0;
        let joined = errs.join("\n");
        for needle in [
            "routes[0].path[2]: unknown node 9",
            "routes[0].path[3]",
            "traffic[0].source",
            "key_rotation",
            "nodes[1]",
        ] {
            assert!(joined.contains(needle), "{needle} missing from\n{joined}");
        }
    }

    #[test]
    fn seed_is_required() {
        let text = EXAMPLE_CONFIG.replace("seed = 7", "");
        assert!(matches!(ScenarioConfig::from_toml(&text), Err(ConfigError::Parse(_))));
    }

    #[test]
    fn singlehop_routes_are_direct() {
        let mut cfg = ScenarioConfig::from_toml(EXAMPLE_CONFIG).unwrap();
        cfg.mode = Mode::Singlehop;
        assert!(cfg.validate().is_err());
        cfg.routes[0].path = vec![1, 5];
        cfg.validate().unwrap();
    }
}
