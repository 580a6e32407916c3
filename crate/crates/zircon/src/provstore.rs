//! The tamper-proof network database.
//!
//! Records can only be appended (hop by hop, contiguously), read, retrieved in
//! full once by a registered gateway, or deleted as a whole set. There is no
//! operation that rewrites a stored record.
//!
//! Every mutation is mirrored to a line-oriented journal:
//!
//! ```text
//! store|src|seq|hop|hex(cipher16)|by|time
//! delete|src|seq|count|time
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::watermark::{EncryptedFeature, HashSubWatermark, NodeId, PacketId, ProvenanceRecordValue};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StoreError {
    #[error("node {0} is not authorized for this operation")]
    Unauthorized(NodeId),
    #[error("packet {id}: expected hop {expected}, got {got}")]
    Sequencing { id: PacketId, expected: u8, got: u8 },
    #[error("packet {0}: no provenance records")]
    MissingRecord(PacketId),
    #[error("packet {0}: provenance set was already retrieved")]
    AlreadyRetrieved(PacketId),
}

/// Index of one record: packet identity plus hop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct ProvenanceKey {
    pub packet: PacketId,
    pub hop: u8,
}

impl ProvenanceKey {
    pub fn new(packet: PacketId, hop: u8) -> Self {
        Self { packet, hop }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoredRecord {
    pub key: ProvenanceKey,
    pub value: ProvenanceRecordValue,
    /// Present only for single-hop storage, where the full watermark is kept.
    pub hash_part: Option<HashSubWatermark>,
    pub stored_by: NodeId,
    pub stored_at: u64,
}

/// The ordered per-hop records of one packet, hop 1 first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProvenanceSet {
    pub packet: PacketId,
    pub records: Vec<StoredRecord>,
}

#[derive(Debug, Default)]
struct Lineage {
    records: Vec<StoredRecord>,
    consumed: bool,
}

/// A packet whose lineage stopped growing without being retrieved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DropSuspect {
    pub packet: PacketId,
    pub last_hop: u8,
    pub last_node: NodeId,
    pub last_time: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum JournalEntry {
    Store {
        key: ProvenanceKey,
        cipher: EncryptedFeature,
        by: NodeId,
        time: u64,
    },
    Delete {
        packet: PacketId,
        count: usize,
        time: u64,
    },
}

impl fmt::Display for JournalEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            JournalEntry::Store { key, cipher, by, time } => write!(
                f,
                "store|{}|{}|{}|{}|{}|{}",
                key.packet.source,
                key.packet.sequence,
                key.hop,
                hex::encode(cipher.0),
                by,
                time
            ),
            JournalEntry::Delete { packet, count, time } => {
                write!(f, "delete|{}|{}|{}|{}", packet.source, packet.sequence, count, time)
            }
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("bad journal line `{line}`: {reason}")]
pub struct JournalParseError {
    pub line: String,
    pub reason: String,
}

impl FromStr for JournalEntry {
    type Err = JournalParseError;

    fn from_str(line: &str) -> Result<Self, Self::Err> {
        let bad = |reason: &str| JournalParseError {
            line: line.to_string(),
            reason: reason.to_string(),
        };
        fn num<T: FromStr>(s: &str) -> Option<T> {
            s.parse().ok()
        }
        let fields: Vec<&str> = line.split('|').collect();
        match fields.as_slice() {
            ["store", src, seq, hop, cipher, by, time] => {
                let bytes = hex::decode(cipher).map_err(|_| bad("cipher is not hex"))?;
                let cipher: [u8; 16] = bytes.try_into().map_err(|_| bad("cipher is not 16 bytes"))?;
                Ok(JournalEntry::Store {
                    key: ProvenanceKey::new(
                        PacketId::new(num(src).ok_or_else(|| bad("src"))?, num(seq).ok_or_else(|| bad("seq"))?),
                        num(hop).ok_or_else(|| bad("hop"))?,
                    ),
                    cipher: EncryptedFeature(cipher),
                    by: num(by).ok_or_else(|| bad("by"))?,
                    time: num(time).ok_or_else(|| bad("time"))?,
                })
            }
            ["delete", src, seq, count, time] => Ok(JournalEntry::Delete {
                packet: PacketId::new(num(src).ok_or_else(|| bad("src"))?, num(seq).ok_or_else(|| bad("seq"))?),
                count: num(count).ok_or_else(|| bad("count"))?,
                time: num(time).ok_or_else(|| bad("time"))?,
            }),
            _ => Err(bad("unknown record kind or field count")),
        }
    }
}

pub fn parse_journal(text: &str) -> Result<Vec<JournalEntry>, JournalParseError> {
    text.lines().filter(|l| !l.trim().is_empty()).map(str::parse).collect()
}

/// Centralized provenance database with id-based access control.
#[derive(Debug, Default)]
pub struct ProvenanceStore {
    lineages: BTreeMap<PacketId, Lineage>,
    nodes: BTreeSet<NodeId>,
    gateways: BTreeSet<NodeId>,
    journal: Vec<JournalEntry>,
}

impl ProvenanceStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register_node(&mut self, id: NodeId) {
        self.nodes.insert(id);
    }

    /// Gateways are also registered nodes.
    pub fn register_gateway(&mut self, id: NodeId) {
        self.nodes.insert(id);
        self.gateways.insert(id);
    }

    pub fn is_registered(&self, id: NodeId) -> bool {
        self.nodes.contains(&id)
    }

    fn authorize(&self, by: NodeId) -> Result<(), StoreError> {
        if self.nodes.contains(&by) {
            Ok(())
        } else {
            Err(StoreError::Unauthorized(by))
        }
    }

    pub fn store(
        &mut self,
        key: ProvenanceKey,
        value: ProvenanceRecordValue,
        by: NodeId,
        now: u64,
    ) -> Result<(), StoreError> {
        self.append(key, value, None, by, now)
    }

    /// Stores a complete watermark (single-hop profile).
    pub fn store_watermark(
        &mut self,
        key: ProvenanceKey,
        value: ProvenanceRecordValue,
        hash_part: HashSubWatermark,
        by: NodeId,
        now: u64,
    ) -> Result<(), StoreError> {
        self.append(key, value, Some(hash_part), by, now)
    }

    fn append(
        &mut self,
        key: ProvenanceKey,
        value: ProvenanceRecordValue,
        hash_part: Option<HashSubWatermark>,
        by: NodeId,
        now: u64,
    ) -> Result<(), StoreError> {
        self.authorize(by)?;
        let lineage = self.lineages.get(&key.packet);
        let expected = match lineage {
            Some(l) if l.consumed => {
                return Err(StoreError::AlreadyRetrieved(key.packet));
            }
            Some(l) => l.records.last().map_or(1, |r| r.key.hop.saturating_add(1)),
            None => 1,
        };
        if key.hop != expected || key.hop == 0 {
            return Err(StoreError::Sequencing {
                id: key.packet,
                expected,
                got: key.hop,
            });
        }
        self.lineages.entry(key.packet).or_default().records.push(StoredRecord {
            key,
            value,
            hash_part,
            stored_by: by,
            stored_at: now,
        });
        self.journal.push(JournalEntry::Store {
            key,
            cipher: value.cipher,
            by,
            time: now,
        });
        Ok(())
    }

    /// Newest record of a live lineage. Retrieved lineages read as missing.
    pub fn query_last(&self, packet: PacketId) -> Result<&StoredRecord, StoreError> {
        self.lineages
            .get(&packet)
            .filter(|l| !l.consumed)
            .and_then(|l| l.records.last())
            .ok_or(StoreError::MissingRecord(packet))
    }

    /// One-time full retrieval by a registered gateway.
    pub fn query_all(&mut self, packet: PacketId, by: NodeId) -> Result<ProvenanceSet, StoreError> {
        if !self.gateways.contains(&by) {
            return Err(StoreError::Unauthorized(by));
        }
        let lineage = match self.lineages.get_mut(&packet) {
            Some(l) if !l.records.is_empty() => l,
            _ => return Err(StoreError::MissingRecord(packet)),
        };
        if lineage.consumed {
            return Err(StoreError::AlreadyRetrieved(packet));
        }
        lineage.consumed = true;
        Ok(ProvenanceSet {
            packet,
            records: lineage.records.clone(),
        })
    }

    /// Removes every record of a packet; returns how many were removed.
    pub fn delete_all(&mut self, packet: PacketId, now: u64) -> usize {
        let count = self.lineages.remove(&packet).map_or(0, |l| l.records.len());
        if count > 0 {
            self.journal.push(JournalEntry::Delete {
                packet,
                count,
                time: now,
            });
        }
        count
    }

    /// Number of records held for a packet, retrieved or not.
    pub fn record_count(&self, packet: PacketId) -> usize {
        self.lineages.get(&packet).map_or(0, |l| l.records.len())
    }

    pub fn total_records(&self) -> usize {
        self.lineages.values().map(|l| l.records.len()).sum()
    }

    pub fn is_consumed(&self, packet: PacketId) -> bool {
        self.lineages.get(&packet).is_some_and(|l| l.consumed)
    }

    /// Lineages that are unretrieved and whose newest record is older than
    /// `timeout` at time `now`, oldest packet id first.
    pub fn sweep_stale(&self, now: u64, timeout: u64) -> Vec<DropSuspect> {
        self.lineages
            .iter()
            .filter(|(_, l)| !l.consumed)
            .filter_map(|(id, l)| l.records.last().map(|r| (id, r)))
            .filter(|(_, r)| now.saturating_sub(r.stored_at) > timeout)
            .map(|(id, r)| DropSuspect {
                packet: *id,
                last_hop: r.key.hop,
                last_node: r.stored_by,
                last_time: r.stored_at,
            })
            .collect()
    }

    pub fn journal(&self) -> &[JournalEntry] {
        &self.journal
    }

    pub fn journal_text(&self) -> String {
        let mut s = String::new();
        for e in &self.journal {
            s.push_str(&e.to_string());
            s.push('\n');
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SENSOR: NodeId = 1;
    const RELAY: NodeId = 2;
    const GW: NodeId = 9;

    fn store() -> ProvenanceStore {
        let mut s = ProvenanceStore::new();
        s.register_node(SENSOR);
        s.register_node(RELAY);
        s.register_gateway(GW);
        s
    }

    fn rec(b: u8) -> ProvenanceRecordValue {
        ProvenanceRecordValue {
            cipher: EncryptedFeature([b; 16]),
            key_epoch: 0,
        }
    }

    fn pid() -> PacketId {
        PacketId::new(SENSOR, 1)
    }

    fn fill(s: &mut ProvenanceStore, hops: u8) {
        for h in 1..=hops {
            s.store(ProvenanceKey::new(pid(), h), rec(h), SENSOR, u64::from(h) * 10)
                .unwrap();
        }
    }

    #[test]
    fn first_store_must_be_hop_one() {
        let mut s = store();
        assert_eq!(
            s.store(ProvenanceKey::new(pid(), 2), rec(0), SENSOR, 0),
            Err(StoreError::Sequencing {
                id: pid(),
                expected: 1,
                got: 2
            })
        );
        s.store(ProvenanceKey::new(pid(), 1), rec(0), SENSOR, 0).unwrap();
    }

    #[test]
    fn gap_in_hops_is_rejected() {
        let mut s = store();
        fill(&mut s, 1);
        assert_eq!(
            s.store(ProvenanceKey::new(pid(), 3), rec(0), RELAY, 0),
            Err(StoreError::Sequencing {
                id: pid(),
                expected: 2,
                got: 3
            })
        );
        assert!(matches!(
            s.store(ProvenanceKey::new(pid(), 1), rec(0), RELAY, 0),
            Err(StoreError::Sequencing { .. })
        ));
    }

    #[test]
    fn unregistered_caller_cannot_store() {
        let mut s = store();
        assert_eq!(
            s.store(ProvenanceKey::new(pid(), 1), rec(0), 0xFFFF, 0),
            Err(StoreError::Unauthorized(0xFFFF))
        );
    }

    #[test]
    fn query_all_returns_ordered_set_once() {
        let mut s = store();
        fill(&mut s, 4);
        let set = s.query_all(pid(), GW).unwrap();
        let hops: Vec<u8> = set.records.iter().map(|r| r.key.hop).collect();
        assert_eq!(hops, vec![1, 2, 3, 4]);
        assert_eq!(s.query_all(pid(), GW), Err(StoreError::AlreadyRetrieved(pid())));
        assert_eq!(s.query_last(pid()), Err(StoreError::MissingRecord(pid())));
    }

    #[test]
    fn query_all_requires_gateway() {
        let mut s = store();
        fill(&mut s, 2);
        assert_eq!(s.query_all(pid(), SENSOR), Err(StoreError::Unauthorized(SENSOR)));
        assert_eq!(s.query_all(pid(), 0xFFFF), Err(StoreError::Unauthorized(0xFFFF)));
        assert!(s.query_all(pid(), GW).is_ok());
    }

    #[test]
    fn query_last_tracks_newest_hop() {
        let mut s = store();
        assert_eq!(s.query_last(pid()), Err(StoreError::MissingRecord(pid())));
        fill(&mut s, 3);
        assert_eq!(s.query_last(pid()).unwrap().key.hop, 3);
        // Reads do not consume.
        assert_eq!(s.query_last(pid()).unwrap().key.hop, 3);
        s.delete_all(pid(), 50);
        assert_eq!(s.query_last(pid()), Err(StoreError::MissingRecord(pid())));
    }

    #[test]
    fn delete_counts_and_restarts() {
        let mut s = store();
        fill(&mut s, 5);
        assert_eq!(s.delete_all(pid(), 60), 5);
        assert_eq!(s.delete_all(pid(), 61), 0);
        fill(&mut s, 1);
        assert_eq!(s.record_count(pid()), 1);
    }

    #[test]
    fn journal_lines_round_trip() {
        let mut s = store();
        fill(&mut s, 2);
        s.delete_all(pid(), 99);
        let text = s.journal_text();
        assert_eq!(
            text.lines().next().unwrap(),
            "store|1|1|1|01010101010101010101010101010101|1|10"
        );
        assert_eq!(text.lines().last().unwrap(), "delete|1|1|2|99");
        assert_eq!(parse_journal(&text).unwrap(), s.journal());
        assert!(parse_journal("store|1|2").is_err());
    }

    #[test]
    fn sweep_flags_only_stalled_lineages() {
        let mut s = store();
        fill(&mut s, 2); // newest at t=20
        let other = PacketId::new(SENSOR, 2);
        s.store(ProvenanceKey::new(other, 1), rec(1), SENSOR, 100).unwrap();
        let suspects = s.sweep_stale(200, 150);
        assert_eq!(
            suspects,
            vec![DropSuspect {
                packet: pid(),
                last_hop: 2,
                last_node: SENSOR,
                last_time: 20
            }]
        );
        s.query_all(pid(), GW).unwrap();
        assert!(s.sweep_stale(200, 150).is_empty());
    }
}
