//! Executable threat model: a passive eavesdropper plus active attacks on
//! frames in flight and on the provenance store.

use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::SymmetricKey;
use crate::provstore::{ProvenanceKey, ProvenanceStore, StoreError};
use crate::watermark::{self, NodeId, PacketId, WatermarkedPacket, BARE_OVERHEAD, HEADER_LEN, LENGTH_FIELD_LEN};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AttackError {
    #[error("{what} at {position} is outside a {len}-unit frame")]
    OutOfRange {
        what: &'static str,
        position: usize,
        len: usize,
    },
    #[error("invalid attack spec: {0}")]
    Invalid(String),
}

/// One byte edit: `frame[offset] ^= xor`, offset relative to the region edited.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ByteEdit {
    pub offset: usize,
    pub xor: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tail {
    Tail,
}

/// A bit offset from the start of the frame, or the frame tail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BitPosition {
    Offset(usize),
    Tail(Tail),
}

impl Default for BitPosition {
    fn default() -> Self {
        BitPosition::Tail(Tail::Tail)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttackAction {
    /// Copy the frame without touching it.
    Eavesdrop,
    /// Let the frame through and resend a copy `delay_ms` later.
    Replay {
        delay_ms: u64,
        /// Try to refresh the timestamp of the copy.
        #[serde(default)]
        mutate_timestamp: bool,
    },
    /// Insert bits, given as a string of `0`/`1`.
    InsertBits {
        #[serde(default)]
        at: BitPosition,
        bits: String,
    },
    DeleteBits {
        q: usize,
        #[serde(default)]
        at: BitPosition,
    },
    /// Edits relative to the first payload byte.
    ModifyPayload {
        edits: Vec<ByteEdit>,
    },
    /// Edits relative to the first watermark byte.
    ModifyWatermark {
        edits: Vec<ByteEdit>,
    },
    Drop,
    /// Emit a packet built with a key that is not the network's.
    FakeInject {
        source: NodeId,
        sequence: u32,
        /// IP written into the forged feature sub-watermark.
        ip: Ipv4Addr,
        payload_hex: String,
        /// Absent: an insider using the network's current key.
        #[serde(default)]
        forged_key_hex: Option<String>,
        #[serde(default)]
        forged_epoch: u32,
        /// Registered identity the attacker uses to write the forged record.
        as_node: NodeId,
    },
    /// Attempt a full provenance retrieval under someone else's id.
    StoreProbe {
        caller: NodeId,
        source: NodeId,
        sequence: u32,
    },
}

impl AttackAction {
    pub fn kind_name(&self) -> &'static str {
        match self {
            AttackAction::Eavesdrop => "eavesdrop",
            AttackAction::Replay { .. } => "replay",
            AttackAction::InsertBits { .. } => "insert_bits",
            AttackAction::DeleteBits { .. } => "delete_bits",
            AttackAction::ModifyPayload { .. } => "modify_payload",
            AttackAction::ModifyWatermark { .. } => "modify_watermark",
            AttackAction::Drop => "drop",
            AttackAction::FakeInject { .. } => "fake_inject",
            AttackAction::StoreProbe { .. } => "store_probe",
        }
    }

    /// Attacks that fire on their own at a scheduled time rather than on a frame.
    pub fn is_scheduled(&self) -> bool {
        matches!(self, AttackAction::FakeInject { .. } | AttackAction::StoreProbe { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackTarget {
    /// Directed link `[from, to]`.
    Link([NodeId; 2]),
    Store,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trigger {
    Packet { src: NodeId, seq: u32 },
    Window { from_ms: u64, to_ms: u64 },
    At { time_ms: u64 },
    Always,
}

impl Trigger {
    pub fn matches(&self, packet: PacketId, now_ms: u64) -> bool {
        match *self {
            Trigger::Packet { src, seq } => packet == PacketId::new(src, seq),
            Trigger::Window { from_ms, to_ms } => (from_ms..=to_ms).contains(&now_ms),
            Trigger::At { time_ms } => now_ms == time_ms,
            Trigger::Always => true,
        }
    }

    /// Firing time for scheduled attacks.
    pub fn fire_time(&self) -> Option<u64> {
        match *self {
            Trigger::Window { from_ms, .. } => Some(from_ms),
            Trigger::At { time_ms } => Some(time_ms),
            Trigger::Packet { .. } | Trigger::Always => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub action: AttackAction,
    pub target: AttackTarget,
    pub trigger: Trigger,
}

fn parse_bits(bits: &str) -> Result<Vec<bool>, AttackError> {
    bits.chars()
        .map(|c| match c {
            '0' => Ok(false),
            '1' => Ok(true),
            other => Err(AttackError::Invalid(format!("bit string contains `{other}`"))),
        })
        .collect()
}

impl AttackSpec {
    pub fn validate(&self) -> Result<(), AttackError> {
        let invalid = |m: &str| Err(AttackError::Invalid(m.to_string()));
        match &self.action {
            AttackAction::DeleteBits { q: 0, .. } => return invalid("delete_bits needs q >= 1"),
            AttackAction::InsertBits { bits, .. } => {
                if parse_bits(bits)?.is_empty() {
                    return invalid("insert_bits needs at least one bit");
                }
            }
            AttackAction::ModifyPayload { edits } | AttackAction::ModifyWatermark { edits } if edits.is_empty() => {
                return invalid("byte-edit list is empty");
            }
            AttackAction::FakeInject {
                payload_hex,
                forged_key_hex,
                ..
            } => {
                hex::decode(payload_hex).map_err(|_| AttackError::Invalid("payload_hex is not hex".into()))?;
                if let Some(k) = forged_key_hex {
                    let key = hex::decode(k).map_err(|_| AttackError::Invalid("forged_key_hex is not hex".into()))?;
                    if key.len() != 16 {
                        return invalid("forged key must be 16 bytes");
                    }
                }
            }
            _ => {}
        }
        match (&self.action, self.target) {
            (AttackAction::StoreProbe { .. }, AttackTarget::Store) => {}
            (AttackAction::StoreProbe { .. }, _) => return invalid("store_probe must target the store"),
            (_, AttackTarget::Store) => return invalid("only store_probe may target the store"),
            _ => {}
        }
        if self.action.is_scheduled() && self.trigger.fire_time().is_none() {
            return invalid("fake_inject and store_probe need a window or at trigger");
        }
        Ok(())
    }
}

/// Where payload and watermark sit inside a frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameLayout {
    Multihop,
    Singlehop,
}

impl FrameLayout {
    fn payload_start(self) -> usize {
        match self {
            FrameLayout::Multihop => HEADER_LEN + LENGTH_FIELD_LEN,
            FrameLayout::Singlehop => BARE_OVERHEAD,
        }
    }

    fn payload_range(self, frame: &[u8]) -> std::ops::Range<usize> {
        let start = self.payload_start().min(frame.len());
        let end = match self {
            FrameLayout::Multihop => frame.len().saturating_sub(watermark::WATERMARK_LEN).max(start),
            FrameLayout::Singlehop => frame.len(),
        };
        start..end
    }

    fn watermark_range(self, frame: &[u8]) -> std::ops::Range<usize> {
        match self {
            FrameLayout::Multihop => frame.len().saturating_sub(watermark::WATERMARK_LEN)..frame.len(),
            FrameLayout::Singlehop => frame.len()..frame.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AttackEffect {
    /// Deliver these bytes instead of the original.
    Forward(Vec<u8>),
    /// Deliver the original unchanged; the attacker keeps a copy.
    Observe {
        captured: Vec<u8>,
    },
    /// Deliver the original and re-deliver `copy` after `delay_ms`.
    Replay {
        copy: Vec<u8>,
        delay_ms: u64,
    },
    Drop,
}

fn get_bit(bytes: &[u8], i: usize) -> bool {
    bytes[i / 8] >> (7 - i % 8) & 1 == 1
}

fn pack_bits(bits: &[bool]) -> Vec<u8> {
    let mut out = vec![0u8; bits.len().div_ceil(8)];
    for (i, &b) in bits.iter().enumerate() {
        if b {
            out[i / 8] |= 1 << (7 - i % 8);
        }
    }
    out
}

fn resolve(at: BitPosition, total_bits: usize, q: usize) -> usize {
    match at {
        BitPosition::Offset(o) => o,
        BitPosition::Tail(_) => total_bits.saturating_sub(q),
    }
}

/// Inserts `bits` before bit `at`; the result is zero-padded to whole bytes.
pub fn insert_bits(frame: &[u8], at: BitPosition, bits: &[bool]) -> Result<Vec<u8>, AttackError> {
    let total = frame.len() * 8;
    let at = resolve(at, total, 0);
    if at > total {
        return Err(AttackError::OutOfRange {
            what: "bit insertion",
            position: at,
            len: total,
        });
    }
    let mut out: Vec<bool> = (0..at).map(|i| get_bit(frame, i)).collect();
    out.extend_from_slice(bits);
    out.extend((at..total).map(|i| get_bit(frame, i)));
    Ok(pack_bits(&out))
}

/// Removes `q` bits starting at `at`; the result is zero-padded to whole bytes.
pub fn delete_bits(frame: &[u8], at: BitPosition, q: usize) -> Result<Vec<u8>, AttackError> {
    let total = frame.len() * 8;
    let start = resolve(at, total, q);
    if q == 0 || start + q > total {
        return Err(AttackError::OutOfRange {
            what: "bit deletion",
            position: start + q,
            len: total,
        });
    }
    let out: Vec<bool> = (0..total)
        .filter(|i| !(start..start + q).contains(i))
        .map(|i| get_bit(frame, i))
        .collect();
    Ok(pack_bits(&out))
}

fn edit_region(
    frame: &[u8],
    region: std::ops::Range<usize>,
    edits: &[ByteEdit],
    what: &'static str,
) -> Result<Vec<u8>, AttackError> {
    let mut out = frame.to_vec();
    for e in edits {
        if e.offset >= region.len() {
            return Err(AttackError::OutOfRange {
                what,
                position: e.offset,
                len: region.len(),
            });
        }
        out[region.start + e.offset] ^= e.xor;
    }
    Ok(out)
}

/// Refreshes the timestamp of a captured frame. In the single-hop profile the
/// capture time is in clear and is moved forward; in the multi-hop profile it
/// only exists encrypted, so the attacker can do no better than alter the
/// ciphertext.
fn refresh_timestamp(frame: &[u8], layout: FrameLayout, delay_ms: u64) -> Result<Vec<u8>, AttackError> {
    match layout {
        FrameLayout::Singlehop => {
            if frame.len() < BARE_OVERHEAD {
                return Err(AttackError::OutOfRange {
                    what: "timestamp",
                    position: HEADER_LEN,
                    len: frame.len(),
                });
            }
            let mut out = frame.to_vec();
            let t = &mut out[HEADER_LEN..HEADER_LEN + 4];
            let old = u32::from_be_bytes([t[0], t[1], t[2], t[3]]);
            let new = old.wrapping_add(delay_ms.div_ceil(1000).max(1) as u32);
            t.copy_from_slice(&new.to_be_bytes());
            Ok(out)
        }
        FrameLayout::Multihop => edit_region(
            frame,
            layout.watermark_range(frame),
            &[ByteEdit { offset: 0, xor: 0x01 }],
            "watermark byte",
        ),
    }
}

/// Applies a link attack to a frame in flight.
pub fn apply(action: &AttackAction, frame: &[u8], layout: FrameLayout) -> Result<AttackEffect, AttackError> {
    match action {
        AttackAction::Eavesdrop => Ok(AttackEffect::Observe {
            captured: frame.to_vec(),
        }),
        AttackAction::Replay {
            delay_ms,
            mutate_timestamp,
        } => {
            let copy = if *mutate_timestamp {
                refresh_timestamp(frame, layout, *delay_ms)?
            } else {
                frame.to_vec()
            };
            Ok(AttackEffect::Replay {
                copy,
                delay_ms: *delay_ms,
            })
        }
        AttackAction::InsertBits { at, bits } => insert_bits(frame, *at, &parse_bits(bits)?).map(AttackEffect::Forward),
        AttackAction::DeleteBits { q, at } => delete_bits(frame, *at, *q).map(AttackEffect::Forward),
        AttackAction::ModifyPayload { edits } => {
            edit_region(frame, layout.payload_range(frame), edits, "payload byte").map(AttackEffect::Forward)
        }
        AttackAction::ModifyWatermark { edits } => {
            edit_region(frame, layout.watermark_range(frame), edits, "watermark byte").map(AttackEffect::Forward)
        }
        AttackAction::Drop => Ok(AttackEffect::Drop),
        AttackAction::FakeInject { .. } | AttackAction::StoreProbe { .. } => Err(AttackError::Invalid(format!(
            "{} is not a link attack",
            action.kind_name()
        ))),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProbeOutcome {
    Denied(StoreError),
    /// The caller was allowed to retrieve a set of this many records.
    Granted(usize),
}

/// Tries a full retrieval as `caller`.
pub fn store_probe(store: &mut ProvenanceStore, caller: NodeId, packet: PacketId) -> ProbeOutcome {
    match store.query_all(packet, caller) {
        Ok(set) => ProbeOutcome::Granted(set.records.len()),
        Err(e) => ProbeOutcome::Denied(e),
    }
}

/// A forged packet and whether its record made it into the store.
#[derive(Debug, Clone)]
pub struct ForgedPacket {
    pub packet: WatermarkedPacket,
    pub record_stored: Result<(), StoreError>,
}

/// Builds a well-formed hop-1 packet under `forged_key` and writes its record
/// to the store as `as_node`.
#[allow(clippy::too_many_arguments)]
pub fn fake_inject(
    id: PacketId,
    ip: Ipv4Addr,
    capture_time: u32,
    payload: &[u8],
    forged_key: &SymmetricKey,
    as_node: NodeId,
    store: &mut ProvenanceStore,
    now_ms: u64,
) -> Result<ForgedPacket, AttackError> {
    let sw = watermark::make_feature_subwatermark(ip, capture_time);
    let record = watermark::make_provenance_record(&sw, forged_key).map_err(|e| AttackError::Invalid(e.to_string()))?;
    let wm = watermark::assemble_watermark(&record, watermark::make_hash_subwatermark(payload));
    let packet = watermark::embed(payload, wm, id, 1).map_err(|e| AttackError::Invalid(e.to_string()))?;
    let record_stored = store.store(ProvenanceKey::new(id, 1), record, as_node, now_ms);
    Ok(ForgedPacket { packet, record_stored })
}
