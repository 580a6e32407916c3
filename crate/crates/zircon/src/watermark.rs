//! Zero-watermark construction and packet framing.
//!
//! A final watermark is the encrypted feature sub-watermark (node IP and
//! timestamp, 16 bytes) followed by the first 8 bytes of the payload digest.
//! The payload itself is never altered; the watermark travels as a 24-byte
//! tail behind it.
//!
//! Multi-hop wire format, big-endian:
//!
//! ```text
//! [src:2][seq:4][hop:1][len:2][payload:len][cipher:16][hash:8]
//! ```
//!
//! The single-hop profile sends the sensed reading without the tail; the
//! capture time travels with the reading so the gateway can regenerate the
//! watermark:
//!
//! ```text
//! [src:2][seq:4][hop:1][time:4][len:2][payload:len]
//! ```

use std::fmt;
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{self, CryptoError, SymmetricKey, BLOCK_LEN};

pub type NodeId = u16;

/// Length of the packet id and hop header.
pub const HEADER_LEN: usize = 7;
/// Length of the payload length field.
pub const LENGTH_FIELD_LEN: usize = 2;
/// Serialized final watermark length.
pub const WATERMARK_LEN: usize = 24;
/// Framing overhead of a multi-hop packet around its payload.
pub const FRAME_OVERHEAD: usize = HEADER_LEN + LENGTH_FIELD_LEN + WATERMARK_LEN;
/// Framing overhead of a single-hop bare frame around its payload.
pub const BARE_OVERHEAD: usize = HEADER_LEN + 4 + LENGTH_FIELD_LEN;
/// Largest payload the length field can describe.
pub const MAX_PAYLOAD: usize = u16::MAX as usize;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FrameError {
    #[error("frame of {0} bytes is shorter than the fixed framing")]
    TooShort(usize),
    #[error("length field says {declared} payload bytes, frame has room for {available}")]
    LengthMismatch { declared: usize, available: usize },
    #[error("payload of {0} bytes exceeds the 16-bit length field")]
    Oversize(usize),
    #[error("watermark must be {WATERMARK_LEN} bytes, got {0}")]
    WatermarkLength(usize),
}

/// Identity of one packet lifetime: emitting source and its sequence counter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PacketId {
    pub source: NodeId,
    pub sequence: u32,
}

impl PacketId {
    pub fn new(source: NodeId, sequence: u32) -> Self {
        Self { source, sequence }
    }
}

impl fmt::Display for PacketId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.source, self.sequence)
    }
}

/// Node IP and capture (or receive) time in whole seconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureSubWatermark {
    pub ip: Ipv4Addr,
    pub capture_time: u32,
}

impl FeatureSubWatermark {
    pub fn to_bytes(&self) -> [u8; 8] {
        let mut out = [0u8; 8];
        out[..4].copy_from_slice(&self.ip.octets());
        out[4..].copy_from_slice(&self.capture_time.to_be_bytes());
        out
    }

    pub fn from_bytes(bytes: [u8; 8]) -> Self {
        Self {
            ip: Ipv4Addr::new(bytes[0], bytes[1], bytes[2], bytes[3]),
            capture_time: u32::from_be_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]),
        }
    }
}

pub fn make_feature_subwatermark(ip: Ipv4Addr, capture_time: u32) -> FeatureSubWatermark {
    FeatureSubWatermark { ip, capture_time }
}

/// The 16-byte encrypted feature sub-watermark as it appears on the wire.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct EncryptedFeature(pub [u8; BLOCK_LEN]);

impl fmt::Debug for EncryptedFeature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "EncryptedFeature({})", hex::encode(self.0))
    }
}

/// A provenance record: the encrypted feature sub-watermark plus the epoch of
/// the key that produced it. Only the cipher goes on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProvenanceRecordValue {
    pub cipher: EncryptedFeature,
    pub key_epoch: u32,
}

impl ProvenanceRecordValue {
    pub fn decrypt(&self, key: &SymmetricKey) -> Result<FeatureSubWatermark, CryptoError> {
        crypto::decrypt_block(key, &self.cipher.0).map(FeatureSubWatermark::from_bytes)
    }
}

pub fn make_provenance_record(
    sw: &FeatureSubWatermark,
    key: &SymmetricKey,
) -> Result<ProvenanceRecordValue, CryptoError> {
    Ok(ProvenanceRecordValue {
        cipher: EncryptedFeature(crypto::encrypt_block(key, &sw.to_bytes())?),
        key_epoch: key.epoch(),
    })
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct HashSubWatermark(pub [u8; 8]);

impl fmt::Debug for HashSubWatermark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "HashSubWatermark({})", hex::encode(self.0))
    }
}

pub fn make_hash_subwatermark(payload: &[u8]) -> HashSubWatermark {
    HashSubWatermark(crypto::truncate_digest(&crypto::digest(payload)))
}

/// Encrypted feature part followed by the hash part; 24 bytes serialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FinalWatermark {
    pub cipher: EncryptedFeature,
    pub hash_part: HashSubWatermark,
}

impl FinalWatermark {
    pub fn to_bytes(&self) -> [u8; WATERMARK_LEN] {
        let mut out = [0u8; WATERMARK_LEN];
        out[..BLOCK_LEN].copy_from_slice(&self.cipher.0);
        out[BLOCK_LEN..].copy_from_slice(&self.hash_part.0);
        out
    }
}

pub fn assemble_watermark(record: &ProvenanceRecordValue, hash_part: HashSubWatermark) -> FinalWatermark {
    FinalWatermark {
        cipher: record.cipher,
        hash_part,
    }
}

/// Splits 24 serialized watermark bytes into the encrypted feature and hash parts.
pub fn split_watermark(bytes: &[u8]) -> Result<(EncryptedFeature, HashSubWatermark), FrameError> {
    if bytes.len() != WATERMARK_LEN {
        return Err(FrameError::WatermarkLength(bytes.len()));
    }
    let mut cipher = [0u8; BLOCK_LEN];
    cipher.copy_from_slice(&bytes[..BLOCK_LEN]);
    let mut hash = [0u8; 8];
    hash.copy_from_slice(&bytes[BLOCK_LEN..]);
    Ok((EncryptedFeature(cipher), HashSubWatermark(hash)))
}

/// The in-flight unit of the multi-hop profile.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WatermarkedPacket {
    pub id: PacketId,
    /// Number of watermark generations so far; 1 when leaving the source.
    pub hop: u8,
    pub payload: Vec<u8>,
    pub watermark: FinalWatermark,
}

impl WatermarkedPacket {
    pub fn encoded_len(&self) -> usize {
        FRAME_OVERHEAD + self.payload.len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        write_header(&mut out, self.id, self.hop);
        out.extend_from_slice(&(self.payload.len() as u16).to_be_bytes());
        out.extend_from_slice(&self.payload);
        out.extend_from_slice(&self.watermark.to_bytes());
        out
    }
}

fn write_header(out: &mut Vec<u8>, id: PacketId, hop: u8) {
    out.extend_from_slice(&id.source.to_be_bytes());
    out.extend_from_slice(&id.sequence.to_be_bytes());
    out.push(hop);
}

/// Reads the packet id and hop from the first 7 bytes, if present.
pub fn peek_header(bytes: &[u8]) -> Option<(PacketId, u8)> {
    if bytes.len() < HEADER_LEN {
        return None;
    }
    let source = u16::from_be_bytes([bytes[0], bytes[1]]);
    let sequence = u32::from_be_bytes([bytes[2], bytes[3], bytes[4], bytes[5]]);
    Some((PacketId { source, sequence }, bytes[6]))
}

pub fn embed(
    payload: &[u8],
    watermark: FinalWatermark,
    id: PacketId,
    hop: u8,
) -> Result<WatermarkedPacket, FrameError> {
    if payload.len() > MAX_PAYLOAD {
        return Err(FrameError::Oversize(payload.len()));
    }
    Ok(WatermarkedPacket {
        id,
        hop,
        payload: payload.to_vec(),
        watermark,
    })
}

/// Parses a multi-hop frame. Any length disagreement is a frame error.
pub fn extract(bytes: &[u8]) -> Result<WatermarkedPacket, FrameError> {
    if bytes.len() < FRAME_OVERHEAD {
        return Err(FrameError::TooShort(bytes.len()));
    }
    let (id, hop) = peek_header(bytes).expect("length checked");
    let declared = u16::from_be_bytes([bytes[HEADER_LEN], bytes[HEADER_LEN + 1]]) as usize;
    let available = bytes.len() - FRAME_OVERHEAD;
    if declared != available {
        return Err(FrameError::LengthMismatch { declared, available });
    }
    let start = HEADER_LEN + LENGTH_FIELD_LEN;
    let payload = bytes[start..start + declared].to_vec();
    let (cipher, hash_part) = split_watermark(&bytes[start + declared..])?;
    Ok(WatermarkedPacket {
        id,
        hop,
        payload,
        watermark: FinalWatermark { cipher, hash_part },
    })
}

/// A single-hop frame: the sensed reading and its capture time, no watermark.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BareFrame {
    pub id: PacketId,
    pub hop: u8,
    pub capture_time: u32,
    pub payload: Vec<u8>,
}

impl BareFrame {
    pub fn new(id: PacketId, capture_time: u32, payload: &[u8]) -> Result<Self, FrameError> {
        if payload.len() > MAX_PAYLOAD {
            return Err(FrameError::Oversize(payload.len()));
        }
        Ok(Self {
            id,
            hop: 1,
            capture_time,
            payload: payload.to_vec(),
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(BARE_OVERHEAD + self.payload.len());
        write_header(&mut out, self.id, self.hop);
        out.extend_from_slice(&self.capture_time.to_be_bytes());
        out.extend_from_slice(&(self.payload.len() as u16).to_be_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn parse(bytes: &[u8]) -> Result<Self, FrameError> {
        if bytes.len() < BARE_OVERHEAD {
            return Err(FrameError::TooShort(bytes.len()));
        }
        let (id, hop) = peek_header(bytes).expect("length checked");
        let t = &bytes[HEADER_LEN..HEADER_LEN + 4];
        let capture_time = u32::from_be_bytes([t[0], t[1], t[2], t[3]]);
        let declared = u16::from_be_bytes([bytes[HEADER_LEN + 4], bytes[HEADER_LEN + 5]]) as usize;
        let available = bytes.len() - BARE_OVERHEAD;
        if declared != available {
            return Err(FrameError::LengthMismatch { declared, available });
        }
        Ok(Self {
            id,
            hop,
            capture_time,
            payload: bytes[BARE_OVERHEAD..].to_vec(),
        })
    }
}
