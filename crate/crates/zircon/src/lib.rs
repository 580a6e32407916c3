//! Zero-watermarking for hop-by-hop data integrity and secure provenance in
//! sensor networks, with a deterministic network simulator to exercise it.

pub mod adversary;
pub mod analysis;
pub mod crypto;
pub mod internal_datagram;
pub mod netsim;
pub mod nodes;
pub mod provstore;
pub mod watermark;
