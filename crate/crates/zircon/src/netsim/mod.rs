//! Deterministic discrete-event simulation of a watermarking sensor network.
//!
//! Everything random is drawn from ChaCha streams derived from the scenario
//! seed, and all maps are ordered, so a run is a pure function of its config.

mod config;
pub mod suite;

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap};
use std::net::Ipv4Addr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use config::{
    Area, ConfigError, KeyRotation, Mode, NodeConfig, RouteConfig, ScenarioConfig, TrafficConfig, ValidationErrors,
    EXAMPLE_CONFIG,
};

use crate::adversary::{self, AttackAction, AttackEffect, AttackTarget, FrameLayout, ProbeOutcome};
use crate::crypto::SymmetricKey;
use crate::nodes::{
    self, GatewayPolicy, HopContext, KeyRing, NodeError, NodeIdentity, Outcome, Registry, Role, RotationPolicy,
    SourceNode,
};
use crate::provstore::{ProvenanceStore, StoreError};
use crate::watermark::{self, NodeId, PacketId};

/// Which copy of a packet a delivery carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CopyKind {
    Original,
    Replay,
    Injected,
}

impl CopyKind {
    fn as_str(self) -> &'static str {
        match self {
            CopyKind::Original => "original",
            CopyKind::Replay => "replay",
            CopyKind::Injected => "injected",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EventKind {
    Emit {
        source: NodeId,
        remaining: u32,
    },
    Deliver {
        from: NodeId,
        to: NodeId,
        bytes: Vec<u8>,
        copy: CopyKind,
        /// The packet the sender meant to send.
        packet: Option<PacketId>,
        /// Bytes were altered, replayed or forged by the attacker.
        tainted: bool,
    },
    Rotate,
    Scheduled {
        attack: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimEvent {
    pub time: u64,
    /// Lower runs first among equal times.
    pub priority: u8,
    pub seq: u64,
    pub kind: EventKind,
}

impl Ord for SimEvent {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.time, self.priority, self.seq).cmp(&(other.time, other.priority, other.seq))
    }
}

impl PartialOrd for SimEvent {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

const PRIORITY_ROTATE: u8 = 0;
const PRIORITY_NORMAL: u8 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum PacketStatus {
    Accepted {
        path: Vec<Ipv4Addr>,
        times: Vec<u32>,
        /// Records the store held for the packet just before retrieval.
        records_at_gateway: usize,
    },
    Rejected {
        node: NodeId,
        hop: u8,
        outcome: Outcome,
    },
    Dropped {
        from: NodeId,
        to: NodeId,
    },
    InFlight,
}

impl PacketStatus {
    pub fn name(&self) -> &'static str {
        match self {
            PacketStatus::Accepted { .. } => "accepted",
            PacketStatus::Rejected { .. } => "rejected",
            PacketStatus::Dropped { .. } => "dropped",
            PacketStatus::InFlight => "in_flight",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PacketReport {
    pub source: NodeId,
    pub sequence: u32,
    pub origin: CopyKind,
    pub emitted_at_ms: u64,
    #[serde(flatten)]
    pub status: PacketStatus,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeReport {
    pub id: NodeId,
    pub role: String,
    pub ip: Ipv4Addr,
    pub registered: bool,
    /// Packets this node emitted or verified.
    pub packets: u64,
    pub encrypts: u64,
    pub decrypts: u64,
    pub digests: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropSuspectReport {
    pub source: NodeId,
    pub sequence: u32,
    pub last_hop: u8,
    pub last_node: NodeId,
    pub last_time_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub caller: NodeId,
    pub source: NodeId,
    pub sequence: u32,
    pub granted: bool,
    pub time_ms: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Summary {
    pub emitted: usize,
    pub injected: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub dropped: usize,
    pub in_flight: usize,
    /// Accepted gateway verdicts on attacker-touched bytes.
    pub false_accepts: usize,
    pub verdicts: BTreeMap<Outcome, usize>,
    pub replay_verdicts: BTreeMap<Outcome, usize>,
    pub rotations: u32,
    pub captured_frames: usize,
    pub store_records_remaining: usize,
    pub end_time_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Report {
    pub seed: u64,
    pub mode: Mode,
    pub summary: Summary,
    pub packets: Vec<PacketReport>,
    pub nodes: Vec<NodeReport>,
    pub drop_suspects: Vec<DropSuspectReport>,
    pub probes: Vec<ProbeReport>,
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report always serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn packet(&self, id: PacketId) -> Option<&PacketReport> {
        self.packets
            .iter()
            .find(|p| p.source == id.source && p.sequence == id.sequence)
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    /// Line-oriented event log.
    pub log: String,
    pub report: Report,
    /// Store journal.
    pub journal: String,
    /// Frames copied by eavesdroppers.
    pub captures: Vec<Vec<u8>>,
}

/// Signal from [`Simulation::step`] that nothing is left to process.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EndOfSimulation;

struct Route {
    path: Vec<NodeId>,
    delays: Vec<u64>,
}

pub struct Simulation {
    config: ScenarioConfig,
    registry: Registry,
    identities: BTreeMap<NodeId, NodeIdentity>,
    keyrings: BTreeMap<NodeId, KeyRing>,
    epoch: u32,
    rotation: Option<RotationPolicy>,
    key_rng: ChaCha8Rng,
    payload_rngs: BTreeMap<NodeId, ChaCha8Rng>,
    sources: BTreeMap<NodeId, SourceNode>,
    traffic: BTreeMap<NodeId, config::TrafficConfig>,
    routes: BTreeMap<NodeId, Route>,
    store: ProvenanceStore,
    journal_cursor: usize,
    queue: BinaryHeap<Reverse<SimEvent>>,
    next_seq: u64,
    now_ms: u64,
    log: Vec<String>,
    packets: BTreeMap<PacketId, PacketReport>,
    node_stats: BTreeMap<NodeId, NodeReport>,
    summary: Summary,
    probes: Vec<ProbeReport>,
    captures: Vec<Vec<u8>>,
    finished: bool,
    drop_suspects: Vec<DropSuspectReport>,
}

fn outcome_of_error(e: &NodeError) -> Outcome {
    match e {
        NodeError::Store(StoreError::MissingRecord(_) | StoreError::AlreadyRetrieved(_)) => Outcome::MissingRecord,
        NodeError::Frame(_) => Outcome::FrameFail,
        _ => Outcome::ProvenanceFail,
    }
}

impl Simulation {
    pub fn new(config: ScenarioConfig) -> Result<Self, ConfigError> {
        config.validate().map_err(ConfigError::Invalid)?;
        let mut key_rng = ChaCha8Rng::seed_from_u64(config.seed);
        let network_key = nodes::fresh_key(0, &mut key_rng);

        let identities: BTreeMap<_, _> = config.nodes.iter().map(|n| (n.id, n.identity())).collect();
        let registry = Registry::new(identities.values().cloned());
        let mut store = ProvenanceStore::new();
        let mut keyrings = BTreeMap::new();
        for n in identities.values() {
            let key = if n.registered {
                match n.role {
                    Role::Gateway => store.register_gateway(n.id),
                    _ => store.register_node(n.id),
                }
                network_key.clone()
            } else {
                // Outsiders hold a key of their own, never the network's.
                nodes::fresh_key(0, &mut key_rng)
            };
            keyrings.insert(n.id, KeyRing::new(key));
        }
        let rotation = config
            .key_rotation
            .map(|k| RotationPolicy::new(k.min, k.max, &mut key_rng));

        let routes = config
            .routes
            .iter()
            .map(|r| {
                let delays = r
                    .delays_ms
                    .clone()
                    .unwrap_or_else(|| vec![config.hop_delay_ms; r.path.len() - 1]);
                (
                    r.path[0],
                    Route {
                        path: r.path.clone(),
                        delays,
                    },
                )
            })
            .collect();

        let mut sim = Self {
            registry,
            keyrings,
            epoch: 0,
            rotation,
            key_rng,
            payload_rngs: BTreeMap::new(),
            sources: BTreeMap::new(),
            traffic: BTreeMap::new(),
            routes,
            store,
            journal_cursor: 0,
            queue: BinaryHeap::new(),
            next_seq: 0,
            now_ms: 0,
            log: Vec::new(),
            packets: BTreeMap::new(),
            node_stats: BTreeMap::new(),
            summary: Summary::default(),
            probes: Vec::new(),
            captures: Vec::new(),
            finished: false,
            drop_suspects: Vec::new(),
            identities,
            config,
        };

        for n in sim.identities.values() {
            sim.log
                .push(format!("node|{}|{}|{}|{}", n.id, n.role, n.ip, n.registered));
            sim.node_stats.insert(
                n.id,
                NodeReport {
                    id: n.id,
                    role: n.role.to_string(),
                    ip: n.ip,
                    registered: n.registered,
                    packets: 0,
                    encrypts: 0,
                    decrypts: 0,
                    digests: 0,
                },
            );
        }
        for t in sim.config.traffic.clone() {
            let mut rng = ChaCha8Rng::seed_from_u64(sim.config.seed);
            rng.set_stream(1 + u64::from(t.source));
            sim.payload_rngs.insert(t.source, rng);
            sim.sources
                .insert(t.source, SourceNode::new(sim.identities[&t.source].clone()));
            if t.count > 0 {
                sim.schedule(
                    t.start_ms,
                    PRIORITY_NORMAL,
                    EventKind::Emit {
                        source: t.source,
                        remaining: t.count,
                    },
                );
            }
            sim.traffic.insert(t.source, t);
        }
        for (i, a) in sim.config.attacks.iter().enumerate() {
            if a.action.is_scheduled() {
                let at = a.trigger.fire_time().expect("validated");
                sim.queue.push(Reverse(SimEvent {
                    time: at,
                    priority: PRIORITY_NORMAL,
                    seq: sim.next_seq,
                    kind: EventKind::Scheduled { attack: i },
                }));
                sim.next_seq += 1;
            }
        }
        Ok(sim)
    }

    pub fn now_ms(&self) -> u64 {
        self.now_ms
    }

    pub fn epoch(&self) -> u32 {
        self.epoch
    }

    pub fn store(&self) -> &ProvenanceStore {
        &self.store
    }

    pub fn key_ring(&self, id: NodeId) -> Option<&KeyRing> {
        self.keyrings.get(&id)
    }

    pub fn pending_events(&self) -> usize {
        self.queue.len()
    }

    pub fn log_lines(&self) -> &[String] {
        &self.log
    }

    fn now_s(&self) -> u32 {
        self.config.time_base_s.wrapping_add((self.now_ms / 1000) as u32)
    }

    fn schedule(&mut self, time: u64, priority: u8, kind: EventKind) {
        self.queue.push(Reverse(SimEvent {
            time,
            priority,
            seq: self.next_seq,
            kind,
        }));
        self.next_seq += 1;
    }

    fn layout(&self) -> FrameLayout {
        match self.config.mode {
            Mode::Multihop => FrameLayout::Multihop,
            Mode::Singlehop => FrameLayout::Singlehop,
        }
    }

    /// Processes exactly one event.
    pub fn step(&mut self) -> Result<SimEvent, EndOfSimulation> {
        let next_time = self.queue.peek().map(|Reverse(e)| e.time).ok_or(EndOfSimulation)?;
        if self.config.max_time_ms.is_some_and(|max| next_time > max) {
            return Err(EndOfSimulation);
        }
        let Reverse(event) = self.queue.pop().expect("peeked");
        debug_assert!(event.time >= self.now_ms);
        self.now_ms = event.time;
        match event.kind.clone() {
            EventKind::Emit { source, remaining } => self.on_emit(source, remaining),
            EventKind::Deliver {
                from,
                to,
                bytes,
                copy,
                packet,
                tainted,
            } => self.on_deliver(from, to, &bytes, copy, packet, tainted),
            EventKind::Rotate => self.on_rotate(),
            EventKind::Scheduled { attack } => self.on_scheduled(attack),
        }
        self.flush_journal();
        Ok(event)
    }

    fn flush_journal(&mut self) {
        let journal = self.store.journal();
        for entry in &journal[self.journal_cursor..] {
            self.log.push(entry.to_string());
        }
        self.journal_cursor = journal.len();
    }

    fn count_generation(&mut self) {
        if let Some(policy) = self.rotation.as_mut() {
            if policy.record_generation(&mut self.key_rng) {
                self.schedule(self.now_ms, PRIORITY_ROTATE, EventKind::Rotate);
            }
        }
    }

    fn on_rotate(&mut self) {
        let identities = &self.identities;
        let pairs = self.keyrings.iter_mut().map(|(id, ring)| (&identities[id], ring));
        let key = nodes::rotate_keys(self.epoch, pairs, &mut self.key_rng);
        self.epoch = key.epoch();
        self.summary.rotations += 1;
        self.log.push(format!("rotate|{}|{}", self.epoch, self.now_ms));
    }

    fn on_emit(&mut self, source: NodeId, remaining: u32) {
        let t = self.traffic[&source].clone();
        if remaining > 1 {
            self.schedule(
                self.now_ms + t.interval_ms,
                PRIORITY_NORMAL,
                EventKind::Emit {
                    source,
                    remaining: remaining - 1,
                },
            );
        }
        let mut payload = vec![0u8; t.payload_len];
        self.payload_rngs
            .get_mut(&source)
            .expect("traffic source")
            .fill(&mut payload[..]);
        let capture_time = self.now_s().wrapping_sub(t.timestamp_lag_s);
        let src = self.sources.get_mut(&source).expect("traffic source");
        let id = src.next_packet_id();
        let identity = src.identity.clone();
        let key = self.keyrings[&source].current().clone();
        let now_ms = self.now_ms;

        let result = match self.config.mode {
            Mode::Multihop => {
                nodes::source_emit_multihop(&identity, id, &payload, capture_time, &key, &mut self.store, now_ms)
                    .map(|p| p.to_bytes())
            }
            Mode::Singlehop => {
                nodes::source_emit_singlehop(&identity, id, &payload, capture_time, &key, &mut self.store, now_ms)
                    .map(|(frame, _)| frame.to_bytes())
            }
        };
        self.summary.emitted += 1;
        let stats = self.node_stats.get_mut(&source).expect("node");
        stats.packets += 1;
        stats.encrypts += 1;
        stats.digests += 1;
        match result {
            Ok(bytes) => {
                self.log.push(format!(
                    "emit|{}|{}|{}|{}|{}",
                    id.source,
                    id.sequence,
                    key.epoch(),
                    bytes.len(),
                    self.now_ms
                ));
                self.packets.insert(id, self.new_packet(id, CopyKind::Original));
                self.count_generation();
                let next = self.routes[&source].path[1];
                self.send(source, next, bytes, CopyKind::Original, Some(id), false);
            }
            Err(e) => {
                self.log
                    .push(format!("emit_fail|{}|{}|{}|{}", id.source, id.sequence, e, self.now_ms));
                let mut report = self.new_packet(id, CopyKind::Original);
                report.status = PacketStatus::Rejected {
                    node: source,
                    hop: 0,
                    outcome: outcome_of_error(&e),
                };
                self.packets.insert(id, report);
            }
        }
    }

    fn new_packet(&self, id: PacketId, origin: CopyKind) -> PacketReport {
        PacketReport {
            source: id.source,
            sequence: id.sequence,
            origin,
            emitted_at_ms: self.now_ms,
            status: PacketStatus::InFlight,
        }
    }

    fn link_delay(&self, packet: Option<PacketId>, from: NodeId, to: NodeId) -> u64 {
        packet
            .and_then(|p| self.routes.get(&p.source))
            .and_then(|r| {
                r.path
                    .windows(2)
                    .position(|w| w[0] == from && w[1] == to)
                    .map(|i| r.delays[i])
            })
            .unwrap_or(self.config.hop_delay_ms)
    }

    /// Puts bytes on the link `from -> to`, passing them through any link
    /// attacks first.
    fn send(
        &mut self,
        from: NodeId,
        to: NodeId,
        mut bytes: Vec<u8>,
        copy: CopyKind,
        packet: Option<PacketId>,
        mut tainted: bool,
    ) {
        let delay = self.link_delay(packet, from, to);
        if copy != CopyKind::Replay {
            let header_id = packet.or_else(|| watermark::peek_header(&bytes).map(|(id, _)| id));
            for i in 0..self.config.attacks.len() {
                let spec = &self.config.attacks[i];
                if spec.target != AttackTarget::Link([from, to]) || spec.action.is_scheduled() {
                    continue;
                }
                // Sequence numbers start at 1, so 0/0 only matches time triggers.
                let probe = header_id.unwrap_or(PacketId::new(0, 0));
                if !spec.trigger.matches(probe, self.now_ms) {
                    continue;
                }
                let (src, seq) = header_id.map_or((0, 0), |id| (id.source, id.sequence));
                let kind = spec.action.kind_name();
                match adversary::apply(&spec.action, &bytes, self.layout()) {
                    Err(e) => {
                        self.log.push(format!(
                            "attack_error|{kind}|{src}|{seq}|{from}>{to}|{e}|{}",
                            self.now_ms
                        ));
                        continue;
                    }
                    Ok(effect) => {
                        self.log
                            .push(format!("attack|{kind}|{src}|{seq}|{from}>{to}|{}", self.now_ms));
                        match effect {
                            AttackEffect::Forward(new) => {
                                tainted |= new != bytes;
                                bytes = new;
                            }
                            AttackEffect::Observe { captured } => {
                                self.summary.captured_frames += 1;
                                self.captures.push(captured);
                            }
                            AttackEffect::Replay { copy: dup, delay_ms } => {
                                self.schedule(
                                    self.now_ms + delay_ms + delay,
                                    PRIORITY_NORMAL,
                                    EventKind::Deliver {
                                        from,
                                        to,
                                        bytes: dup,
                                        copy: CopyKind::Replay,
                                        packet,
                                        tainted: true,
                                    },
                                );
                            }
                            AttackEffect::Drop => {
                                if let Some(p) = packet.and_then(|id| self.packets.get_mut(&id)) {
                                    if copy == p.origin {
                                        p.status = PacketStatus::Dropped { from, to };
                                    }
                                }
                                return;
                            }
                        }
                    }
                }
            }
        }
        self.schedule(
            self.now_ms + delay,
            PRIORITY_NORMAL,
            EventKind::Deliver {
                from,
                to,
                bytes,
                copy,
                packet,
                tainted,
            },
        );
    }

    fn set_status(&mut self, packet: Option<PacketId>, copy: CopyKind, status: PacketStatus) {
        if let Some(p) = packet.and_then(|id| self.packets.get_mut(&id)) {
            if p.origin == copy {
                p.status = status;
            }
        }
    }

    fn next_hop(&self, packet: Option<PacketId>, at: NodeId) -> Option<NodeId> {
        let route = self.routes.get(&packet?.source)?;
        let i = route.path.iter().position(|&n| n == at)?;
        route.path.get(i + 1).copied()
    }

    fn on_deliver(
        &mut self,
        from: NodeId,
        to: NodeId,
        bytes: &[u8],
        copy: CopyKind,
        packet: Option<PacketId>,
        tainted: bool,
    ) {
        let header = watermark::peek_header(bytes);
        let id = packet.or(header.map(|(id, _)| id));
        let (src, seq) = id.map_or((0, 0), |id| (id.source, id.sequence));
        let hop = header.map_or(0, |(_, h)| h);
        self.log.push(format!(
            "deliver|{from}|{to}|{src}|{seq}|{hop}|{}|{}|{}",
            bytes.len(),
            copy.as_str(),
            self.now_ms
        ));
        let identity = self.identities[&to].clone();
        let now_s = self.now_s();
        let policy = GatewayPolicy {
            freshness_s: self.config.freshness_s,
            purge_on_delivery: self.config.purge_on_delivery,
        };
        let ctx = HopContext {
            node: &identity,
            keys: &self.keyrings[&to],
            registry: &self.registry,
            now_ms: self.now_ms,
            now_s,
        };
        let (verdict, ops, forwarded, path, records_before) = match identity.role {
            Role::Source => {
                self.log.push(format!("misroute|{to}|{src}|{seq}|{}", self.now_ms));
                self.set_status(packet, copy, PacketStatus::Dropped { from, to });
                return;
            }
            Role::Intermediate => {
                let r = nodes::intermediate_forward(&ctx, bytes, &mut self.store);
                (r.verdict, r.ops, r.forwarded, None, 0)
            }
            Role::Gateway => {
                let before = id.map_or(0, |id| self.store.record_count(id));
                let r = match self.config.mode {
                    Mode::Multihop => nodes::gateway_verify_multihop(&ctx, bytes, &mut self.store, &policy),
                    Mode::Singlehop => nodes::gateway_verify_singlehop(&ctx, bytes, &mut self.store, &policy),
                };
                (r.verdict, r.ops, None, r.path, before)
            }
        };

        let stats = self.node_stats.get_mut(&to).expect("node");
        stats.packets += 1;
        stats.encrypts += ops.encrypts;
        stats.decrypts += ops.decrypts;
        stats.digests += ops.digests;
        self.log.push(format!(
            "verdict|{to}|{src}|{seq}|{}|{}|{}",
            verdict.hop, verdict.outcome, self.now_ms
        ));
        *self.summary.verdicts.entry(verdict.outcome).or_default() += 1;
        if copy == CopyKind::Replay {
            *self.summary.replay_verdicts.entry(verdict.outcome).or_default() += 1;
        }

        if verdict.outcome != Outcome::Accepted {
            self.set_status(
                packet,
                copy,
                PacketStatus::Rejected {
                    node: to,
                    hop: verdict.hop,
                    outcome: verdict.outcome,
                },
            );
            return;
        }
        if let Some(path) = path {
            if tainted {
                self.summary.false_accepts += 1;
            }
            self.set_status(
                packet,
                copy,
                PacketStatus::Accepted {
                    path: path.ips(),
                    times: path.0.iter().map(|e| e.time).collect(),
                    records_at_gateway: records_before,
                },
            );
            return;
        }
        if let Some(fwd) = forwarded {
            self.count_generation();
            match self.next_hop(packet.or(Some(fwd.id)), to) {
                Some(next) => self.send(to, next, fwd.to_bytes(), copy, packet.or(Some(fwd.id)), tainted),
                None => {
                    self.log.push(format!("misroute|{to}|{src}|{seq}|{}", self.now_ms));
                    self.set_status(packet, copy, PacketStatus::Dropped { from: to, to });
                }
            }
        }
    }

    fn on_scheduled(&mut self, index: usize) {
        let spec = self.config.attacks[index].clone();
        match spec.action {
            AttackAction::StoreProbe {
                caller,
                source,
                sequence,
            } => {
                let id = PacketId::new(source, sequence);
                let outcome = adversary::store_probe(&mut self.store, caller, id);
                let granted = matches!(outcome, ProbeOutcome::Granted(_));
                self.log
                    .push(format!("attack|store_probe|{source}|{sequence}|store|{}", self.now_ms));
                self.log.push(format!(
                    "probe|{caller}|{source}|{sequence}|{}|{}",
                    if granted { "granted" } else { "denied" },
                    self.now_ms
                ));
                self.probes.push(ProbeReport {
                    caller,
                    source,
                    sequence,
                    granted,
                    time_ms: self.now_ms,
                });
            }
            AttackAction::FakeInject {
                source,
                sequence,
                ip,
                ref payload_hex,
                ref forged_key_hex,
                forged_epoch,
                as_node,
            } => {
                let AttackTarget::Link([from, to]) = spec.target else {
                    unreachable!("validated")
                };
                let key = match forged_key_hex {
                    Some(k) => {
                        SymmetricKey::from_slice(&hex::decode(k).expect("validated"), forged_epoch).expect("validated")
                    }
                    None => self.keyrings[&as_node].current().clone(),
                };
                let payload = hex::decode(payload_hex).expect("validated");
                let id = PacketId::new(source, sequence);
                let now_s = self.now_s();
                let forged = match adversary::fake_inject(
                    id,
                    ip,
                    now_s,
                    &payload,
                    &key,
                    as_node,
                    &mut self.store,
                    self.now_ms,
                ) {
                    Ok(f) => f,
                    Err(e) => {
                        self.log.push(format!(
                            "attack_error|fake_inject|{source}|{sequence}|{from}>{to}|{e}|{}",
                            self.now_ms
                        ));
                        return;
                    }
                };
                self.log.push(format!(
                    "attack|fake_inject|{source}|{sequence}|{from}>{to}|{}",
                    self.now_ms
                ));
                self.summary.injected += 1;
                self.packets.insert(id, self.new_packet(id, CopyKind::Injected));
                self.send(from, to, forged.packet.to_bytes(), CopyKind::Injected, Some(id), true);
            }
            _ => unreachable!("only scheduled attacks are queued"),
        }
    }

    /// Runs to the end and flags unfinished provenance sets.
    pub fn finish(mut self) -> RunOutput {
        while self.step().is_ok() {}
        if !self.finished {
            self.finished = true;
            let timeout = self.config.drop_timeout();
            let end = match self.config.max_time_ms {
                Some(max) if !self.queue.is_empty() => max,
                _ => self.now_ms + timeout,
            };
            self.now_ms = end;
            for s in self.store.sweep_stale(end, timeout) {
                self.log.push(format!(
                    "drop_suspect|{}|{}|{}|{}|{}",
                    s.packet.source, s.packet.sequence, s.last_hop, s.last_node, end
                ));
                self.drop_suspects.push(DropSuspectReport {
                    source: s.packet.source,
                    sequence: s.packet.sequence,
                    last_hop: s.last_hop,
                    last_node: s.last_node,
                    last_time_ms: s.last_time,
                });
            }
        }
        let mut summary = self.summary.clone();
        for p in self.packets.values() {
            match p.status {
                PacketStatus::Accepted { .. } => summary.accepted += 1,
                PacketStatus::Rejected { .. } => summary.rejected += 1,
                PacketStatus::Dropped { .. } => summary.dropped += 1,
                PacketStatus::InFlight => summary.in_flight += 1,
            }
        }
        summary.store_records_remaining = self.store.total_records();
        summary.end_time_ms = self.now_ms;
        let report = Report {
            seed: self.config.seed,
            mode: self.config.mode,
            summary,
            packets: self.packets.values().cloned().collect(),
            nodes: self.node_stats.values().cloned().collect(),
            drop_suspects: self.drop_suspects.clone(),
            probes: self.probes.clone(),
        };
        let mut log = self.log.join("\n");
        log.push('\n');
        RunOutput {
            log,
            report,
            journal: self.store.journal_text(),
            captures: self.captures,
        }
    }
}

/// Validates and runs a scenario to completion.
pub fn run(config: ScenarioConfig) -> Result<RunOutput, ConfigError> {
    Ok(Simulation::new(config)?.finish())
}

#[cfg(test)]
mod tests {
    use super::suite::base_config;
    use super::*;
    use crate::adversary::{AttackSpec, Trigger};

    fn multi(packets: u32) -> ScenarioConfig {
        base_config(11, Mode::Multihop, packets)
    }

    #[test]
    fn identical_configs_give_identical_outputs() {
        let cfg = ScenarioConfig::from_toml(EXAMPLE_CONFIG).unwrap();
        let a = run(cfg.clone()).unwrap();
        let b = run(cfg).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.report.to_json(), b.report.to_json());
        assert_eq!(a.journal, b.journal);
    }

    #[test]
    fn direct_route_accepts_everything() {
        let mut cfg = multi(10);
        cfg.routes[0].path = vec![1, 5];
        let out = run(cfg).unwrap();
        assert_eq!(out.report.summary.accepted, 10);
        assert_eq!(out.report.summary.verdicts[&Outcome::Accepted], 10);
        assert_eq!(out.report.summary.store_records_remaining, 0);
    }

    #[test]
    fn clean_multihop_paths_follow_the_route() {
        let out = run(multi(5)).unwrap();
        let route: Vec<Ipv4Addr> = [1, 2, 3, 4].iter().map(|o| Ipv4Addr::new(10, 0, 0, *o)).collect();
        for p in &out.report.packets {
            match &p.status {
                PacketStatus::Accepted {
                    path,
                    records_at_gateway,
                    ..
                } => {
                    assert_eq!(path, &route);
                    assert_eq!(*records_at_gateway, 4);
                }
                other => panic!("{other:?}"),
            }
        }
        assert!(out.log.lines().any(|l| l.starts_with("verdict|5|1|3|4|accepted|")));
    }

    #[test]
    fn clock_is_monotone_and_rotation_precedes_delivery() {
        let mut cfg = multi(6);
        cfg.key_rotation = Some(KeyRotation { min: 1, max: 3 });
        cfg.nodes[2].registered = false;
        cfg.routes[0].path = vec![1, 2, 4, 5];
        cfg.nodes.retain(|n| n.id != 3);
        let mut outsider = cfg.nodes[0].clone();
        outsider.id = 9;
        outsider.ip = Ipv4Addr::new(10, 0, 0, 9);
        outsider.role = Role::Intermediate;
        outsider.registered = false;
        cfg.nodes.push(outsider);
        let mut sim = Simulation::new(cfg).unwrap();
        let mut last = 0;
        let mut rotations = 0;
        while let Ok(ev) = sim.step() {
            assert!(ev.time >= last);
            last = ev.time;
            if ev.kind == EventKind::Rotate {
                rotations += 1;
                for id in [1, 2, 4, 5] {
                    assert_eq!(sim.key_ring(id).unwrap().current().epoch(), sim.epoch());
                }
                assert_eq!(sim.key_ring(9).unwrap().current().epoch(), 0);
                // Nothing else is due before the rotation at this instant.
                let next = sim.queue.peek().map(|Reverse(e)| (e.time, e.priority));
                assert!(next.is_none_or(|(t, p)| t > ev.time || p >= PRIORITY_NORMAL));
            }
        }
        assert!(rotations >= 6);
        let out = sim.finish();
        // Packets emitted under one epoch and verified under a later one still pass.
        assert_eq!(out.report.summary.accepted, 6);
    }

    #[test]
    fn dropped_packets_never_arrive() {
        let mut cfg = multi(8);
        cfg.attacks.push(AttackSpec {
            action: AttackAction::Drop,
            target: AttackTarget::Link([2, 3]),
            trigger: Trigger::Packet { src: 1, seq: 5 },
        });
        let out = run(cfg).unwrap();
        assert!(!out.log.lines().any(|l| l.starts_with("deliver|2|3|1|5|")));
        assert!(out.log.lines().any(|l| l.starts_with("deliver|2|3|1|4|")));
        let p = out.report.packet(PacketId::new(1, 5)).unwrap();
        assert_eq!(p.status, PacketStatus::Dropped { from: 2, to: 3 });
        assert_eq!(out.report.drop_suspects.len(), 1);
        assert_eq!(out.report.drop_suspects[0].last_hop, 2);
        assert!(out.log.lines().any(|l| l.starts_with("drop_suspect|1|5|2|2|")));
    }

    #[test]
    fn every_packet_ends_in_one_state() {
        let mut cfg = multi(20);
        cfg.max_time_ms = Some(9_500);
        cfg.attacks.push(AttackSpec {
            action: AttackAction::ModifyPayload {
                edits: vec![adversary::ByteEdit { offset: 1, xor: 4 }],
            },
            target: AttackTarget::Link([3, 4]),
            trigger: Trigger::Window {
                from_ms: 2000,
                to_ms: 4000,
            },
        });
        cfg.attacks.push(AttackSpec {
            action: AttackAction::Drop,
            target: AttackTarget::Link([1, 2]),
            trigger: Trigger::Packet { src: 1, seq: 8 },
        });
        let s = run(cfg).unwrap().report.summary;
        // Emissions stop with the clock.
        assert_eq!(s.emitted, 10);
        assert_eq!(s.accepted + s.rejected + s.dropped + s.in_flight, 10);
        assert!(s.rejected >= 2 && s.dropped == 1 && s.in_flight > 0);
    }

    #[test]
    fn outsiders_cannot_take_part() {
        let mut cfg = multi(3);
        cfg.nodes[0].registered = false;
        let out = run(cfg).unwrap();
        assert_eq!(out.report.summary.rejected, 3);
        assert!(out.log.lines().any(|l| l.starts_with("emit_fail|1|1|")));

        let mut cfg = multi(3);
        cfg.nodes[2].registered = false;
        let out = run(cfg).unwrap();
        for p in &out.report.packets {
            assert_eq!(
                p.status,
                PacketStatus::Rejected {
                    node: 3,
                    hop: 2,
                    outcome: Outcome::ProvenanceFail
                }
            );
        }
    }

    #[test]
    fn lagging_timestamps_are_stale() {
        let mut cfg = multi(3);
        cfg.traffic[0].timestamp_lag_s = 70;
        let out = run(cfg).unwrap();
        assert_eq!(out.report.summary.verdicts[&Outcome::StaleTimestamp], 3);
    }

    #[test]
    fn insider_with_the_network_key_is_accepted() {
        let mut cfg = multi(2);
        cfg.attacks.push(AttackSpec {
            action: AttackAction::FakeInject {
                source: 1,
                sequence: 77,
                ip: Ipv4Addr::new(10, 0, 0, 1),
                payload_hex: "beef".into(),
                forged_key_hex: None,
                forged_epoch: 0,
                as_node: 1,
            },
            target: AttackTarget::Link([1, 2]),
            trigger: Trigger::At { time_ms: 50 },
        });
        let out = run(cfg).unwrap();
        let p = out.report.packet(PacketId::new(1, 77)).unwrap();
        assert_eq!(p.origin, CopyKind::Injected);
        assert!(matches!(p.status, PacketStatus::Accepted { .. }));
        assert_eq!(out.report.summary.false_accepts, 1);
    }

    #[test]
    fn gateway_probe_is_the_negative_control() {
        let mut cfg = multi(2);
        cfg.attacks.push(AttackSpec {
            action: AttackAction::StoreProbe {
                caller: 5,
                source: 1,
                sequence: 1,
            },
            target: AttackTarget::Store,
            trigger: Trigger::At { time_ms: 100 },
        });
        let out = run(cfg).unwrap();
        assert!(out.report.probes[0].granted);
        assert!(out.log.lines().any(|l| l == "probe|5|1|1|granted|100"));
    }

    #[test]
    fn invalid_config_is_refused() {
        let mut cfg = multi(2);
        cfg.routes.clear();
        assert!(matches!(Simulation::new(cfg), Err(ConfigError::Invalid(_))));
    }
}
