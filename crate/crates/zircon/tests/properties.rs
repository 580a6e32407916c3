mod common;

use std::net::Ipv4Addr;

use common::net::{Net, GATEWAY, T0};
use proptest::prelude::*;
use zircon::adversary::{self, BitPosition};
use zircon::analysis::{self, CostModel, EnergyParams, Scheme};
use zircon::crypto::LabelMode;
use zircon::internal_datagram::{check_datagram, label_datagram, InternalVerdict, Ipv4HeaderModel, LabelPolicy};
use zircon::nodes::{KeyRing, Outcome};
use zircon::provstore::{ProvenanceKey, ProvenanceStore};
use zircon::watermark::{self, EncryptedFeature, PacketId, ProvenanceRecordValue};

fn bits(v: &[bool]) -> Vec<bool> {
    v.to_vec()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn clean_packets_pass_and_keep_their_hash_part(payload in prop::collection::vec(any::<u8>(), 0..200), seed in any::<u64>()) {
        let mut net = Net::new(seed);
        let pkt = net.emit(1, &payload, T0);
        let hash = pkt.watermark.hash_part;
        let mut bytes = pkt.to_bytes();
        for i in 1..GATEWAY {
            let (d, fwd) = net.hop(i, &bytes, T0 + i as u32);
            prop_assert_eq!(d.verdict.outcome, Outcome::Accepted);
            bytes = fwd.unwrap();
            prop_assert_eq!(watermark::extract(&bytes).unwrap().watermark.hash_part, hash);
        }
        let (d, _) = net.hop(GATEWAY, &bytes, T0 + 4);
        prop_assert_eq!(d.verdict.outcome, Outcome::Accepted);
        prop_assert_eq!(d.path.unwrap(), net.ips(0..4));
    }

    #[test]
    fn any_bit_flip_is_rejected_at_the_first_verifier(payload in prop::collection::vec(any::<u8>(), 1..64), pick in any::<prop::sample::Index>()) {
        let mut net = Net::new(3);
        let mut bytes = net.emit(1, &payload, T0).to_bytes();
        let bit = pick.index(bytes.len() * 8);
        bytes[bit / 8] ^= 0x80 >> (bit % 8);
        let d = net.deliver_from(1, bytes, T0);
        prop_assert_ne!(d.verdict.outcome, Outcome::Accepted);
        prop_assert_eq!(d.at, 1);
    }

    #[test]
    fn inserted_or_deleted_bits_are_rejected(
        payload in prop::collection::vec(any::<u8>(), 1..64),
        insert in any::<bool>(),
        q in 1usize..=24,
        pick in any::<prop::sample::Index>(),
        fill in prop::collection::vec(any::<bool>(), 24),
    ) {
        let mut net = Net::new(5);
        let frame = net.emit(1, &payload, T0).to_bytes();
        let total = frame.len() * 8;
        let mutated = if insert {
            adversary::insert_bits(&frame, BitPosition::Offset(pick.index(total + 1)), &bits(&fill[..q])).unwrap()
        } else {
            adversary::delete_bits(&frame, BitPosition::Offset(pick.index(total - q + 1)), q).unwrap()
        };
        let d = net.deliver_from(1, mutated, T0);
        prop_assert_ne!(d.verdict.outcome, Outcome::Accepted);
        prop_assert_eq!(d.at, 1);
    }

    #[test]
    fn labeled_datagrams_authenticate(
        src in any::<[u8; 4]>(),
        dst in any::<[u8; 4]>(),
        payload in prop::collection::vec(any::<u8>(), 20),
        seed in any::<u64>(),
        prng in any::<bool>(),
    ) {
        let (mode, seed) = if prng { (LabelMode::Prng, Some(seed)) } else { (LabelMode::Lsb32, None) };
        let policy = LabelPolicy { mode, seed, ..LabelPolicy::default() };
        let d = Ipv4HeaderModel::new(Ipv4Addr::from(src), Ipv4Addr::from(dst), payload);
        let labeled = label_datagram(&d, mode, seed).unwrap();
        prop_assert_eq!(check_datagram(&labeled, |_| true, &policy).unwrap(), InternalVerdict::InternalAuthenticated);
        let reparsed = Ipv4HeaderModel::parse(&labeled.to_bytes()).unwrap();
        prop_assert_eq!(check_datagram(&reparsed, |_| true, &policy).unwrap(), InternalVerdict::InternalAuthenticated);
    }

    #[test]
    fn store_accepts_only_the_next_hop(hops in prop::collection::vec(1u8..8, 1..20)) {
        let mut store = ProvenanceStore::new();
        store.register_node(1);
        let id = PacketId::new(1, 1);
        let rec = ProvenanceRecordValue { cipher: EncryptedFeature([0; 16]), key_epoch: 0 };
        for (t, h) in hops.into_iter().enumerate() {
            let expected = store.record_count(id) as u8 + 1;
            let r = store.store(ProvenanceKey::new(id, h), rec, 1, t as u64);
            prop_assert_eq!(r.is_ok(), h == expected);
        }
    }

    #[test]
    fn key_epochs_only_move_forward(epochs in prop::collection::vec(0u32..50, 1..30)) {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(1);
        let mut ring = KeyRing::new(zircon::nodes::fresh_key(0, &mut rng));
        let mut best = 0;
        for e in epochs {
            let installed = ring.install(zircon::nodes::fresh_key(e, &mut rng));
            prop_assert_eq!(installed, e > best);
            best = best.max(e);
            prop_assert_eq!(ring.current().epoch(), best);
        }
    }

    #[test]
    fn energy_grows_with_compute_and_power(tc in 0.0f64..1e4, dt in 1e-6f64..1e3, p in 0.1f64..1e3, dp in 1e-6f64..1e2) {
        let base = EnergyParams { power_mw: p, ..EnergyParams::default() };
        let more = EnergyParams { power_mw: p + dp, ..base };
        prop_assert!(analysis::node_energy(&base, tc + dt).unwrap() > analysis::node_energy(&base, tc).unwrap());
        prop_assert!(analysis::node_energy(&more, tc).unwrap() > analysis::node_energy(&base, tc).unwrap());
    }

    #[test]
    fn cost_orderings(h in 1u32..500) {
        let size = |scheme| analysis::provenance_size(&CostModel { scheme, hops: h, false_positive: 0.02 }).unwrap().bytes;
        let z = size(Scheme::Zircon);
        prop_assert_eq!(z, 24);
        prop_assert!(size(Scheme::Ssp) > z);
        prop_assert_eq!(size(Scheme::Mp) > z, h > 4);
        prop_assert_eq!(size(Scheme::Bfp) > z, h > 23);
    }
}
