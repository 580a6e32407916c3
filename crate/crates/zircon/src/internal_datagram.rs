//! Labels for internal network-management datagrams.
//!
//! A management datagram carries 32 digest bits in the identification,
//! flags and fragment-offset fields. A receiver that finds a matching label
//! on an internal, correctly sized datagram may skip intrusion analysis.
//! The reserved flag bit is overwritten too, so labeled datagrams are not
//! valid IPv4 on a real wire.

use std::net::Ipv4Addr;

use thiserror::Error;

use crate::crypto::{self, CryptoError, LabelMode};

pub const IPV4_HEADER_LEN: usize = 20;
/// Payload bytes covered by the label.
pub const LABELED_PAYLOAD_LEN: usize = 20;
/// Default total length of a management datagram.
pub const DEFAULT_INTERNAL_SIZE: u16 = (IPV4_HEADER_LEN + LABELED_PAYLOAD_LEN) as u16;

const VERSION_IHL: u8 = 0x45;
const TTL: u8 = 64;
/// Experimental protocol number.
const PROTOCOL: u8 = 253;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DatagramError {
    #[error("datagram shorter than a 20-byte header ({0} bytes)")]
    TooShort(usize),
    #[error("unsupported version/IHL byte {0:#04x}")]
    VersionIhl(u8),
    #[error("header checksum mismatch: stored {stored:#06x}, computed {computed:#06x}")]
    Checksum { stored: u16, computed: u16 },
    #[error("total length {declared} disagrees with {actual} bytes received")]
    Length { declared: u16, actual: usize },
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

/// The IPv4 fields relevant to labeling; the rest are fixed on the wire.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ipv4HeaderModel {
    pub src: Ipv4Addr,
    pub dst: Ipv4Addr,
    pub identification: u16,
    /// Low 3 bits used.
    pub flags: u8,
    /// Low 13 bits used.
    pub fragment_offset: u16,
    pub total_length: u16,
    pub payload: Vec<u8>,
}

impl Ipv4HeaderModel {
    /// A datagram with zeroed label fields and a consistent total length.
    pub fn new(src: Ipv4Addr, dst: Ipv4Addr, payload: Vec<u8>) -> Self {
        Self {
            src,
            dst,
            identification: 0,
            flags: 0,
            fragment_offset: 0,
            total_length: (IPV4_HEADER_LEN + payload.len()) as u16,
            payload,
        }
    }

    /// identification ‖ flags ‖ fragment_offset as one 32-bit value.
    pub fn label_bits(&self) -> u32 {
        (u32::from(self.identification) << 16)
            | (u32::from(self.flags & 0b111) << 13)
            | u32::from(self.fragment_offset & 0x1FFF)
    }

    pub fn set_label_bits(&mut self, label: u32) {
        self.identification = (label >> 16) as u16;
        self.flags = ((label >> 13) & 0b111) as u8;
        self.fragment_offset = (label & 0x1FFF) as u16;
    }

    fn header(&self, checksum: u16) -> [u8; IPV4_HEADER_LEN] {
        let mut h = [0u8; IPV4_HEADER_LEN];
        h[0] = VERSION_IHL;
        h[2..4].copy_from_slice(&self.total_length.to_be_bytes());
        h[4..8].copy_from_slice(&self.label_bits().to_be_bytes());
        h[8] = TTL;
        h[9] = PROTOCOL;
        h[10..12].copy_from_slice(&checksum.to_be_bytes());
        h[12..16].copy_from_slice(&self.src.octets());
        h[16..20].copy_from_slice(&self.dst.octets());
        h
    }

    /// Header in network byte order with a valid checksum, then the payload.
    pub fn to_bytes(&self) -> Vec<u8> {
        let checksum = header_checksum(&self.header(0));
        let mut out = self.header(checksum).to_vec();
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn parse(bytes: &[u8]) -> Result<Self, DatagramError> {
        if bytes.len() < IPV4_HEADER_LEN {
            return Err(DatagramError::TooShort(bytes.len()));
        }
        if bytes[0] != VERSION_IHL {
            return Err(DatagramError::VersionIhl(bytes[0]));
        }
        let stored = u16::from_be_bytes([bytes[10], bytes[11]]);
        let mut zeroed = [0u8; IPV4_HEADER_LEN];
        zeroed.copy_from_slice(&bytes[..IPV4_HEADER_LEN]);
        zeroed[10] = 0;
        zeroed[11] = 0;
        let computed = header_checksum(&zeroed);
        if stored != computed {
            return Err(DatagramError::Checksum { stored, computed });
        }
        let total_length = u16::from_be_bytes([bytes[2], bytes[3]]);
        if usize::from(total_length) != bytes.len() {
            return Err(DatagramError::Length {
                declared: total_length,
                actual: bytes.len(),
            });
        }
        let ip = |o: usize| Ipv4Addr::new(bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]);
        let mut d = Self {
            src: ip(12),
            dst: ip(16),
            identification: 0,
            flags: 0,
            fragment_offset: 0,
            total_length,
            payload: bytes[IPV4_HEADER_LEN..].to_vec(),
        };
        d.set_label_bits(u32::from_be_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]));
        Ok(d)
    }
}

/// Ones'-complement sum over 16-bit words.
pub fn header_checksum(header: &[u8]) -> u16 {
    let mut sum: u32 = header
        .chunks(2)
        .map(|w| u32::from(u16::from_be_bytes([w[0], *w.get(1).unwrap_or(&0)])))
        .sum();
    while sum > 0xFFFF {
        sum = (sum & 0xFFFF) + (sum >> 16);
    }
    !(sum as u16)
}

fn compute_label(d: &Ipv4HeaderModel, mode: LabelMode, seed: Option<u64>) -> Result<u32, CryptoError> {
    let mut input = [0u8; 4 + LABELED_PAYLOAD_LEN];
    input[..4].copy_from_slice(&d.dst.octets());
    let n = d.payload.len().min(LABELED_PAYLOAD_LEN);
    input[4..4 + n].copy_from_slice(&d.payload[..n]);
    crypto::select_label_bits(&crypto::digest(&input), mode, seed)
}

/// Writes the 32-bit label into identification, flags and fragment offset.
pub fn label_datagram(d: &Ipv4HeaderModel, mode: LabelMode, seed: Option<u64>) -> Result<Ipv4HeaderModel, CryptoError> {
    let mut out = d.clone();
    out.set_label_bits(compute_label(d, mode, seed)?);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum InternalVerdict {
    /// Genuine management traffic; skips intrusion analysis.
    InternalAuthenticated,
    /// Looks internal but the label is wrong; discard.
    InternalForged,
    RequiresIds,
}

impl InternalVerdict {
    pub fn as_str(self) -> &'static str {
        match self {
            InternalVerdict::InternalAuthenticated => "internal_authenticated",
            InternalVerdict::InternalForged => "internal_forged",
            InternalVerdict::RequiresIds => "requires_ids",
        }
    }
}

/// Settings shared by every checker in one network.
#[derive(Debug, Clone, Copy)]
pub struct LabelPolicy {
    pub internal_size: u16,
    pub mode: LabelMode,
    pub seed: Option<u64>,
}

impl Default for LabelPolicy {
    fn default() -> Self {
        Self {
            internal_size: DEFAULT_INTERNAL_SIZE,
            mode: LabelMode::Lsb32,
            seed: None,
        }
    }
}

pub fn check_datagram(
    d: &Ipv4HeaderModel,
    is_internal: impl Fn(Ipv4Addr) -> bool,
    policy: &LabelPolicy,
) -> Result<InternalVerdict, CryptoError> {
    if !(is_internal(d.src) && is_internal(d.dst)) || d.total_length != policy.internal_size {
        return Ok(InternalVerdict::RequiresIds);
    }
    if compute_label(d, policy.mode, policy.seed)? == d.label_bits() {
        Ok(InternalVerdict::InternalAuthenticated)
    } else {
        Ok(InternalVerdict::InternalForged)
    }
}

/// Membership test for an IPv4 prefix such as 10.0.0.0/8.
pub fn in_prefix(prefix: Ipv4Addr, len: u8) -> impl Fn(Ipv4Addr) -> bool {
    let mask = if len == 0 {
        0
    } else {
        u32::MAX << (32 - u32::from(len.min(32)))
    };
    let net = u32::from(prefix) & mask;
    move |ip| u32::from(ip) & mask == net
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Ipv4HeaderModel {
        Ipv4HeaderModel::new(
            Ipv4Addr::new(10, 0, 0, 1),
            Ipv4Addr::new(10, 0, 0, 2),
            (0u8..20).collect(),
        )
    }

    #[test]
    fn golden_header() {
        // Checksum worked by hand: words 4500 0028 0000 0000 40fd 0000 0a00 0001 0a00 0002.
        let bytes = sample().to_bytes();
        assert_eq!(
            hex::encode(&bytes[..20]),
            "4500002800000000 40fd65d70a0000010a000002".replace(' ', "")
        );
        assert_eq!(Ipv4HeaderModel::parse(&bytes).unwrap(), sample());
    }

    #[test]
    fn label_fields_are_msb_first() {
        let mut d = sample();
        d.set_label_bits(0xDEAD_BEEF);
        assert_eq!(d.identification, 0xDEAD);
        assert_eq!(d.flags, 0b101);
        assert_eq!(d.fragment_offset, 0x1EEF);
        assert_eq!(&d.to_bytes()[4..8], &[0xDE, 0xAD, 0xBE, 0xEF]);
        assert_eq!(Ipv4HeaderModel::parse(&d.to_bytes()).unwrap().label_bits(), 0xDEAD_BEEF);
    }

    #[test]
    fn parse_rejects_corruption() {
        let mut bytes = sample().to_bytes();
        bytes[13] ^= 1;
        assert!(matches!(
            Ipv4HeaderModel::parse(&bytes),
            Err(DatagramError::Checksum { .. })
        ));
        assert_eq!(Ipv4HeaderModel::parse(&bytes[..10]), Err(DatagramError::TooShort(10)));
        let bytes = sample().to_bytes();
        assert!(matches!(
            Ipv4HeaderModel::parse(&bytes[..39]),
            Err(DatagramError::Length { .. })
        ));
    }

    #[test]
    fn labeled_round_trip_authenticates() {
        let internal = in_prefix(Ipv4Addr::new(10, 0, 0, 0), 8);
        let policy = LabelPolicy::default();
        let l = label_datagram(&sample(), LabelMode::Lsb32, None).unwrap();
        assert_eq!(
            check_datagram(&l, &internal, &policy).unwrap(),
            InternalVerdict::InternalAuthenticated
        );
        assert_eq!(
            check_datagram(&sample(), &internal, &policy).unwrap(),
            InternalVerdict::InternalForged
        );
        let policy = LabelPolicy {
            mode: LabelMode::Prng,
            seed: Some(5),
            ..policy
        };
        let l = label_datagram(&sample(), LabelMode::Prng, Some(5)).unwrap();
        assert_eq!(
            check_datagram(&l, &internal, &policy).unwrap(),
            InternalVerdict::InternalAuthenticated
        );
    }

    #[test]
    fn external_or_wrong_size_requires_ids() {
        let internal = in_prefix(Ipv4Addr::new(10, 0, 0, 0), 8);
        let policy = LabelPolicy::default();
        let mut l = label_datagram(&sample(), LabelMode::Lsb32, None).unwrap();
        l.src = Ipv4Addr::new(8, 8, 8, 8);
        assert_eq!(
            check_datagram(&l, &internal, &policy).unwrap(),
            InternalVerdict::RequiresIds
        );
        let mut d = Ipv4HeaderModel::new(Ipv4Addr::new(10, 0, 0, 1), Ipv4Addr::new(10, 0, 0, 2), vec![0; 21]);
        d = label_datagram(&d, LabelMode::Lsb32, None).unwrap();
        assert_eq!(
            check_datagram(&d, &internal, &policy).unwrap(),
            InternalVerdict::RequiresIds
        );
    }

    #[test]
    fn short_payload_is_zero_padded() {
        let mut short = sample();
        short.payload.truncate(5);
        let mut padded = short.clone();
        padded.payload.resize(20, 0);
        assert_eq!(
            label_datagram(&short, LabelMode::Lsb32, None).unwrap().label_bits(),
            label_datagram(&padded, LabelMode::Lsb32, None).unwrap().label_bits()
        );
    }

    #[test]
    fn prefix_predicate() {
        let p = in_prefix(Ipv4Addr::new(192, 168, 1, 0), 24);
        assert!(p(Ipv4Addr::new(192, 168, 1, 200)));
        assert!(!p(Ipv4Addr::new(192, 168, 2, 1)));
        assert!(in_prefix(Ipv4Addr::UNSPECIFIED, 0)(Ipv4Addr::new(1, 2, 3, 4)));
    }
}
