//! Source, intermediate and gateway behaviour for both network profiles.
//!
//! Every verification ends in exactly one [`VerificationVerdict`]. A failed
//! verification discards the packet and deletes its provenance set from the
//! store; that is the whole "attack procedure" on the node side.

use std::collections::BTreeMap;
use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{CryptoError, SymmetricKey, KEY_LEN};
use crate::provstore::{ProvenanceKey, ProvenanceStore, StoreError};
use crate::watermark::{self, BareFrame, FinalWatermark, FrameError, NodeId, PacketId, WatermarkedPacket};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Source,
    Intermediate,
    Gateway,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Source => "source",
            Role::Intermediate => "intermediate",
            Role::Gateway => "gateway",
        })
    }
}

impl FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "source" => Ok(Role::Source),
            "intermediate" => Ok(Role::Intermediate),
            "gateway" => Ok(Role::Gateway),
            other => Err(format!("unknown role `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeIdentity {
    pub id: NodeId,
    pub ip: Ipv4Addr,
    pub role: Role,
    pub registered: bool,
}

/// Every node known to the network, by id.
#[derive(Debug, Clone, Default)]
pub struct Registry {
    nodes: BTreeMap<NodeId, NodeIdentity>,
}

impl Registry {
    pub fn new(nodes: impl IntoIterator<Item = NodeIdentity>) -> Self {
        Self {
            nodes: nodes.into_iter().map(|n| (n.id, n)).collect(),
        }
    }

    pub fn get(&self, id: NodeId) -> Option<&NodeIdentity> {
        self.nodes.get(&id)
    }

    pub fn registered_ip(&self, id: NodeId) -> Option<Ipv4Addr> {
        self.nodes.get(&id).filter(|n| n.registered).map(|n| n.ip)
    }

    pub fn is_registered_ip(&self, ip: Ipv4Addr) -> bool {
        self.nodes.values().any(|n| n.registered && n.ip == ip)
    }

    pub fn iter(&self) -> impl Iterator<Item = &NodeIdentity> {
        self.nodes.values()
    }
}

/// The keys a node holds, by epoch. Old epochs are kept so records made
/// before a rotation still decrypt.
#[derive(Debug, Clone)]
pub struct KeyRing {
    keys: BTreeMap<u32, SymmetricKey>,
    current: u32,
}

impl KeyRing {
    pub fn new(initial: SymmetricKey) -> Self {
        let current = initial.epoch();
        Self {
            keys: BTreeMap::from([(current, initial)]),
            current,
        }
    }

    pub fn current(&self) -> &SymmetricKey {
        &self.keys[&self.current]
    }

    pub fn get(&self, epoch: u32) -> Option<&SymmetricKey> {
        self.keys.get(&epoch)
    }

    /// Installs a newer key and makes it current. Keys that do not advance
    /// the epoch are ignored.
    pub fn install(&mut self, key: SymmetricKey) -> bool {
        if key.epoch() <= self.current {
            return false;
        }
        self.current = key.epoch();
        self.keys.insert(key.epoch(), key);
        true
    }
}

/// Counts watermark generations and decides when the shared key rotates.
#[derive(Debug, Clone)]
pub struct RotationPolicy {
    min: u64,
    max: u64,
    generations: u64,
    threshold: u64,
}

impl RotationPolicy {
    pub fn new(min: u64, max: u64, rng: &mut impl Rng) -> Self {
        let (min, max) = (min.max(1), max.max(min.max(1)));
        Self {
            min,
            max,
            generations: 0,
            threshold: rng.gen_range(min..=max),
        }
    }

    pub fn threshold(&self) -> u64 {
        self.threshold
    }

    /// Records one generation; true when the threshold is reached, in which
    /// case the counter restarts with a freshly drawn threshold.
    pub fn record_generation(&mut self, rng: &mut impl Rng) -> bool {
        self.generations += 1;
        if self.generations < self.threshold {
            return false;
        }
        self.generations = 0;
        self.threshold = rng.gen_range(self.min..=self.max);
        true
    }
}

/// Draws the key for `epoch` from the rng.
pub fn fresh_key(epoch: u32, rng: &mut impl Rng) -> SymmetricKey {
    let mut bytes = [0u8; KEY_LEN];
    rng.fill(&mut bytes);
    SymmetricKey::new(bytes, epoch)
}

/// Generates the next epoch key and installs it in the ring of every
/// registered node. Unregistered nodes keep what they had.
pub fn rotate_keys<'a>(
    current_epoch: u32,
    nodes: impl IntoIterator<Item = (&'a NodeIdentity, &'a mut KeyRing)>,
    rng: &mut impl Rng,
) -> SymmetricKey {
    let key = fresh_key(current_epoch + 1, rng);
    for (identity, ring) in nodes {
        if identity.registered {
            ring.install(key.clone());
        }
    }
    key
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Accepted,
    IntegrityFail,
    ProvenanceFail,
    FrameFail,
    StaleTimestamp,
    MissingRecord,
}

impl Outcome {
    pub const ALL: [Outcome; 6] = [
        Outcome::Accepted,
        Outcome::IntegrityFail,
        Outcome::ProvenanceFail,
        Outcome::FrameFail,
        Outcome::StaleTimestamp,
        Outcome::MissingRecord,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Accepted => "accepted",
            Outcome::IntegrityFail => "integrity_fail",
            Outcome::ProvenanceFail => "provenance_fail",
            Outcome::FrameFail => "frame_fail",
            Outcome::StaleTimestamp => "stale_timestamp",
            Outcome::MissingRecord => "missing_record",
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Outcome {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Outcome::ALL
            .into_iter()
            .find(|o| o.as_str() == s)
            .ok_or_else(|| format!("unknown outcome `{s}`"))
    }
}

/// Result of one node processing one packet. `hop` is the watermark index
/// carried by the frame as received (0 when the header was unreadable).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VerificationVerdict {
    pub outcome: Outcome,
    pub hop: u8,
    pub node: NodeId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathEntry {
    pub ip: Ipv4Addr,
    pub time: u32,
}

/// The data path recovered from a provenance set, source first.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ProvenancePath(pub Vec<PathEntry>);

impl ProvenancePath {
    pub fn ips(&self) -> Vec<Ipv4Addr> {
        self.0.iter().map(|e| e.ip).collect()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Primitive operation counts, used for the compute-time part of the energy model.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCounts {
    pub encrypts: u64,
    pub decrypts: u64,
    pub digests: u64,
}

impl OpCounts {
    pub fn add(&mut self, other: OpCounts) {
        self.encrypts += other.encrypts;
        self.decrypts += other.decrypts;
        self.digests += other.digests;
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NodeError {
    #[error("node {id} has role {actual}, expected {expected}")]
    WrongRole { id: NodeId, expected: Role, actual: Role },
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

fn require_role(node: &NodeIdentity, expected: Role) -> Result<(), NodeError> {
    if node.role == expected {
        Ok(())
    } else {
        Err(NodeError::WrongRole {
            id: node.id,
            expected,
            actual: node.role,
        })
    }
}

/// A source node: identity plus its per-source sequence counter.
#[derive(Debug, Clone)]
pub struct SourceNode {
    pub identity: NodeIdentity,
    next_sequence: u32,
}

impl SourceNode {
    pub fn new(identity: NodeIdentity) -> Self {
        Self {
            identity,
            next_sequence: 1,
        }
    }

    pub fn next_packet_id(&mut self) -> PacketId {
        let id = PacketId::new(self.identity.id, self.next_sequence);
        self.next_sequence += 1;
        id
    }

    pub fn emit_multihop(
        &mut self,
        payload: &[u8],
        capture_time: u32,
        key: &SymmetricKey,
        store: &mut ProvenanceStore,
        now_ms: u64,
    ) -> Result<WatermarkedPacket, NodeError> {
        let id = self.next_packet_id();
        source_emit_multihop(&self.identity, id, payload, capture_time, key, store, now_ms)
    }

    pub fn emit_singlehop(
        &mut self,
        payload: &[u8],
        capture_time: u32,
        key: &SymmetricKey,
        store: &mut ProvenanceStore,
        now_ms: u64,
    ) -> Result<(BareFrame, FinalWatermark), NodeError> {
        let id = self.next_packet_id();
        source_emit_singlehop(&self.identity, id, payload, capture_time, key, store, now_ms)
    }
}

/// Builds the watermark of one generation step: E(ip || t) || H(payload).
fn generate(
    ip: Ipv4Addr,
    time: u32,
    payload: &[u8],
    key: &SymmetricKey,
) -> Result<(watermark::ProvenanceRecordValue, FinalWatermark), CryptoError> {
    let sw = watermark::make_feature_subwatermark(ip, time);
    let record = watermark::make_provenance_record(&sw, key)?;
    let wm = watermark::assemble_watermark(&record, watermark::make_hash_subwatermark(payload));
    Ok((record, wm))
}

/// Single-hop source: stores the whole watermark, sends the bare reading.
pub fn source_emit_singlehop(
    node: &NodeIdentity,
    id: PacketId,
    payload: &[u8],
    capture_time: u32,
    key: &SymmetricKey,
    store: &mut ProvenanceStore,
    now_ms: u64,
) -> Result<(BareFrame, FinalWatermark), NodeError> {
    require_role(node, Role::Source)?;
    let frame = BareFrame::new(id, capture_time, payload)?;
    let (record, wm) = generate(node.ip, capture_time, payload, key)?;
    store.store_watermark(ProvenanceKey::new(id, 1), record, wm.hash_part, node.id, now_ms)?;
    Ok((frame, wm))
}

/// Multi-hop source: stores the hop-1 record and embeds the watermark.
pub fn source_emit_multihop(
    node: &NodeIdentity,
    id: PacketId,
    payload: &[u8],
    capture_time: u32,
    key: &SymmetricKey,
    store: &mut ProvenanceStore,
    now_ms: u64,
) -> Result<WatermarkedPacket, NodeError> {
    require_role(node, Role::Source)?;
    let (record, wm) = generate(node.ip, capture_time, payload, key)?;
    let packet = watermark::embed(payload, wm, id, 1)?;
    store.store(ProvenanceKey::new(id, 1), record, node.id, now_ms)?;
    Ok(packet)
}

/// What a verifying node sees of the network while handling one packet.
#[derive(Debug, Clone, Copy)]
pub struct HopContext<'a> {
    pub node: &'a NodeIdentity,
    pub keys: &'a KeyRing,
    pub registry: &'a Registry,
    /// Simulation clock, milliseconds.
    pub now_ms: u64,
    /// Wall-clock seconds used for timestamps and freshness.
    pub now_s: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GatewayPolicy {
    /// Maximum accepted age of the source timestamp, seconds.
    pub freshness_s: u32,
    /// Delete a provenance set right after its one retrieval.
    pub purge_on_delivery: bool,
}

impl Default for GatewayPolicy {
    fn default() -> Self {
        Self {
            freshness_s: 60,
            purge_on_delivery: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ForwardResult {
    pub verdict: VerificationVerdict,
    /// Packet identity read from the frame header, when readable.
    pub packet: Option<PacketId>,
    pub forwarded: Option<WatermarkedPacket>,
    /// Records removed from the store by the attack procedure.
    pub deleted: usize,
    pub ops: OpCounts,
}

#[derive(Debug, Clone)]
pub struct GatewayResult {
    pub verdict: VerificationVerdict,
    pub packet: Option<PacketId>,
    pub path: Option<ProvenancePath>,
    pub deleted: usize,
    pub ops: OpCounts,
}

struct Rejection {
    outcome: Outcome,
    discard_set: bool,
}

fn reject(outcome: Outcome) -> Rejection {
    Rejection {
        outcome,
        discard_set: true,
    }
}

fn reject_keep(outcome: Outcome) -> Rejection {
    Rejection {
        outcome,
        discard_set: false,
    }
}

fn store_failure(e: &StoreError) -> Rejection {
    match e {
        StoreError::MissingRecord(_) | StoreError::AlreadyRetrieved(_) => reject_keep(Outcome::MissingRecord),
        StoreError::Unauthorized(_) | StoreError::Sequencing { .. } => reject(Outcome::ProvenanceFail),
    }
}

/// Checks that a stored record decrypts under the key of its epoch and names
/// a registered node.
fn validate_record(
    record: &watermark::ProvenanceRecordValue,
    keys: &KeyRing,
    registry: &Registry,
    ops: &mut OpCounts,
) -> Result<PathEntry, Rejection> {
    let key = keys
        .get(record.key_epoch)
        .ok_or_else(|| reject(Outcome::ProvenanceFail))?;
    ops.decrypts += 1;
    let sw = record.decrypt(key).map_err(|_| reject(Outcome::ProvenanceFail))?;
    if !registry.is_registered_ip(sw.ip) {
        return Err(reject(Outcome::ProvenanceFail));
    }
    Ok(PathEntry {
        ip: sw.ip,
        time: sw.capture_time,
    })
}

/// Verifies a received watermarked packet and, if it checks out, re-embeds
/// a watermark naming this node and forwards it.
pub fn intermediate_forward(ctx: &HopContext<'_>, bytes: &[u8], store: &mut ProvenanceStore) -> ForwardResult {
    let mut ops = OpCounts::default();
    let header = watermark::peek_header(bytes);
    let hop = header.map_or(0, |(_, h)| h);
    let outcome = forward_inner(ctx, bytes, store, &mut ops);
    let (outcome, forwarded, deleted) = match outcome {
        Ok(packet) => (Outcome::Accepted, Some(packet), 0),
        Err(r) => {
            let deleted = match (r.discard_set, header) {
                (true, Some((id, _))) => store.delete_all(id, ctx.now_ms),
                _ => 0,
            };
            (r.outcome, None, deleted)
        }
    };
    ForwardResult {
        verdict: VerificationVerdict {
            outcome,
            hop,
            node: ctx.node.id,
        },
        packet: header.map(|(id, _)| id),
        forwarded,
        deleted,
        ops,
    }
}

fn forward_inner(
    ctx: &HopContext<'_>,
    bytes: &[u8],
    store: &mut ProvenanceStore,
    ops: &mut OpCounts,
) -> Result<WatermarkedPacket, Rejection> {
    if ctx.node.role != Role::Intermediate {
        return Err(reject_keep(Outcome::FrameFail));
    }
    let packet = watermark::extract(bytes).map_err(|_| reject(Outcome::FrameFail))?;
    ops.digests += 1;
    let regenerated = watermark::make_hash_subwatermark(&packet.payload);
    if regenerated != packet.watermark.hash_part {
        return Err(reject(Outcome::IntegrityFail));
    }
    let stored = store.query_last(packet.id).map_err(|e| store_failure(&e))?;
    if stored.value.cipher != packet.watermark.cipher || stored.key.hop != packet.hop {
        return Err(reject(Outcome::ProvenanceFail));
    }
    let stored_value = stored.value;
    validate_record(&stored_value, ctx.keys, ctx.registry, ops)?;

    // Next-hop watermark: this node's ip, receive time, same hash part.
    let key = ctx.keys.current();
    let sw = watermark::make_feature_subwatermark(ctx.node.ip, ctx.now_s);
    ops.encrypts += 1;
    let record = watermark::make_provenance_record(&sw, key).map_err(|_| reject(Outcome::ProvenanceFail))?;
    let next_hop = packet.hop.checked_add(1).ok_or_else(|| reject(Outcome::FrameFail))?;
    store
        .store(ProvenanceKey::new(packet.id, next_hop), record, ctx.node.id, ctx.now_ms)
        .map_err(|e| store_failure(&e))?;
    let wm = watermark::assemble_watermark(&record, regenerated);
    Ok(WatermarkedPacket {
        id: packet.id,
        hop: next_hop,
        payload: packet.payload,
        watermark: wm,
    })
}

fn finish_gateway(
    ctx: &HopContext<'_>,
    header: Option<(PacketId, u8)>,
    result: Result<ProvenancePath, Rejection>,
    store: &mut ProvenanceStore,
    policy: &GatewayPolicy,
    ops: OpCounts,
) -> GatewayResult {
    let packet = header.map(|(id, _)| id);
    let (outcome, path, deleted) = match result {
        Ok(path) => {
            let deleted = match (policy.purge_on_delivery, packet) {
                (true, Some(id)) => store.delete_all(id, ctx.now_ms),
                _ => 0,
            };
            (Outcome::Accepted, Some(path), deleted)
        }
        Err(r) => {
            let deleted = match (r.discard_set, packet) {
                (true, Some(id)) => store.delete_all(id, ctx.now_ms),
                _ => 0,
            };
            (r.outcome, None, deleted)
        }
    };
    GatewayResult {
        verdict: VerificationVerdict {
            outcome,
            hop: header.map_or(0, |(_, h)| h),
            node: ctx.node.id,
        },
        packet,
        path,
        deleted,
        ops,
    }
}

fn check_fresh(source_time: u32, now_s: u32, freshness_s: u32) -> Result<(), Rejection> {
    if now_s.saturating_sub(source_time) > freshness_s {
        Err(reject(Outcome::StaleTimestamp))
    } else {
        Ok(())
    }
}

/// Multi-hop gateway: integrity, last-record comparison, one-time retrieval
/// of the set, per-epoch decryption and path reconstruction.
pub fn gateway_verify_multihop(
    ctx: &HopContext<'_>,
    bytes: &[u8],
    store: &mut ProvenanceStore,
    policy: &GatewayPolicy,
) -> GatewayResult {
    let mut ops = OpCounts::default();
    let header = watermark::peek_header(bytes);
    let result = gateway_multihop_inner(ctx, bytes, store, policy, &mut ops);
    finish_gateway(ctx, header, result, store, policy, ops)
}

fn gateway_multihop_inner(
    ctx: &HopContext<'_>,
    bytes: &[u8],
    store: &mut ProvenanceStore,
    policy: &GatewayPolicy,
    ops: &mut OpCounts,
) -> Result<ProvenancePath, Rejection> {
    if ctx.node.role != Role::Gateway {
        return Err(reject_keep(Outcome::FrameFail));
    }
    let packet = watermark::extract(bytes).map_err(|_| reject(Outcome::FrameFail))?;
    ops.digests += 1;
    if watermark::make_hash_subwatermark(&packet.payload) != packet.watermark.hash_part {
        return Err(reject(Outcome::IntegrityFail));
    }
    let last = store.query_last(packet.id).map_err(|e| store_failure(&e))?;
    if last.value.cipher != packet.watermark.cipher || last.key.hop != packet.hop {
        return Err(reject(Outcome::ProvenanceFail));
    }
    let set = store.query_all(packet.id, ctx.node.id).map_err(|e| store_failure(&e))?;

    let mut path = Vec::with_capacity(set.records.len());
    for (expected_hop, rec) in (1u8..).zip(&set.records) {
        if rec.key.hop != expected_hop {
            return Err(reject(Outcome::ProvenanceFail));
        }
        path.push(validate_record(&rec.value, ctx.keys, ctx.registry, ops)?);
    }
    let origin = path.first().ok_or_else(|| reject(Outcome::ProvenanceFail))?;
    if ctx.registry.registered_ip(packet.id.source) != Some(origin.ip) {
        return Err(reject(Outcome::ProvenanceFail));
    }
    check_fresh(origin.time, ctx.now_s, policy.freshness_s)?;
    Ok(ProvenancePath(path))
}

/// Single-hop gateway: regenerates the watermark from the received reading
/// and compares it part by part with the stored one.
pub fn gateway_verify_singlehop(
    ctx: &HopContext<'_>,
    bytes: &[u8],
    store: &mut ProvenanceStore,
    policy: &GatewayPolicy,
) -> GatewayResult {
    let mut ops = OpCounts::default();
    let header = watermark::peek_header(bytes);
    let result = gateway_singlehop_inner(ctx, bytes, store, policy, &mut ops);
    finish_gateway(ctx, header, result, store, policy, ops)
}

fn gateway_singlehop_inner(
    ctx: &HopContext<'_>,
    bytes: &[u8],
    store: &mut ProvenanceStore,
    policy: &GatewayPolicy,
    ops: &mut OpCounts,
) -> Result<ProvenancePath, Rejection> {
    if ctx.node.role != Role::Gateway {
        return Err(reject_keep(Outcome::FrameFail));
    }
    let frame = BareFrame::parse(bytes).map_err(|_| reject(Outcome::FrameFail))?;
    let stored = store.query_last(frame.id).map_err(|e| store_failure(&e))?.clone();
    let stored_hash = stored.hash_part.ok_or_else(|| reject(Outcome::ProvenanceFail))?;

    ops.digests += 1;
    if watermark::make_hash_subwatermark(&frame.payload) != stored_hash {
        return Err(reject(Outcome::IntegrityFail));
    }
    let source_ip = ctx
        .registry
        .registered_ip(frame.id.source)
        .ok_or_else(|| reject(Outcome::ProvenanceFail))?;
    let key = ctx
        .keys
        .get(stored.value.key_epoch)
        .ok_or_else(|| reject(Outcome::ProvenanceFail))?;
    ops.encrypts += 1;
    let regenerated = watermark::make_provenance_record(
        &watermark::make_feature_subwatermark(source_ip, frame.capture_time),
        key,
    )
    .map_err(|_| reject(Outcome::ProvenanceFail))?;
    if regenerated.cipher != stored.value.cipher {
        return Err(reject(Outcome::ProvenanceFail));
    }
    let entry = validate_record(&stored.value, ctx.keys, ctx.registry, ops)?;
    store.query_all(frame.id, ctx.node.id).map_err(|e| store_failure(&e))?;
    check_fresh(entry.time, ctx.now_s, policy.freshness_s)?;
    Ok(ProvenancePath(vec![entry]))
}
