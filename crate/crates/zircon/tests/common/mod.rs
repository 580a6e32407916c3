//! Reference implementations written from the standards, sharing no code
//! with the library, plus frozen high-precision constants.

#![allow(dead_code)]

/// Multiplication in GF(2^8) modulo x^8 + x^4 + x^3 + x + 1.
fn gmul(mut a: u8, mut b: u8) -> u8 {
    let mut p = 0u8;
    while b != 0 {
        if b & 1 != 0 {
            p ^= a;
        }
        let hi = a & 0x80;
        a <<= 1;
        if hi != 0 {
            a ^= 0x1b;
        }
        b >>= 1;
    }
    p
}

/// S-box built from the multiplicative inverse and the affine map.
fn sbox() -> [u8; 256] {
    let mut s = [0u8; 256];
    for (x, out) in s.iter_mut().enumerate() {
        let x = x as u8;
        let inv = if x == 0 {
            0
        } else {
            (1..=255u8).find(|&y| gmul(x, y) == 1).unwrap()
        };
        let mut b = inv;
        let mut r = inv;
        for _ in 0..4 {
            b = b.rotate_left(1);
            r ^= b;
        }
        *out = r ^ 0x63;
    }
    s
}

pub struct RefAes128 {
    round_keys: [[u8; 16]; 11],
    sbox: [u8; 256],
}

impl RefAes128 {
    pub fn new(key: &[u8; 16]) -> Self {
        let sbox = sbox();
        let mut w = [[0u8; 4]; 44];
        for i in 0..4 {
            w[i].copy_from_slice(&key[4 * i..4 * i + 4]);
        }
        let mut rcon = 1u8;
        for i in 4..44 {
            let mut t = w[i - 1];
            if i % 4 == 0 {
                t = [
                    sbox[t[1] as usize] ^ rcon,
                    sbox[t[2] as usize],
                    sbox[t[3] as usize],
                    sbox[t[0] as usize],
                ];
                rcon = gmul(rcon, 2);
            }
            for j in 0..4 {
                w[i][j] = w[i - 4][j] ^ t[j];
            }
        }
        let mut round_keys = [[0u8; 16]; 11];
        for (r, rk) in round_keys.iter_mut().enumerate() {
            for c in 0..4 {
                rk[4 * c..4 * c + 4].copy_from_slice(&w[4 * r + c]);
            }
        }
        Self { round_keys, sbox }
    }

    pub fn encrypt(&self, block: &[u8; 16]) -> [u8; 16] {
        // State is column-major: s[4*c + r].
        let mut s = *block;
        let add = |s: &mut [u8; 16], k: &[u8; 16]| s.iter_mut().zip(k).for_each(|(a, b)| *a ^= b);
        add(&mut s, &self.round_keys[0]);
        for round in 1..=10 {
            for b in s.iter_mut() {
                *b = self.sbox[*b as usize];
            }
            let old = s;
            for c in 0..4 {
                for r in 0..4 {
                    s[4 * c + r] = old[4 * ((c + r) % 4) + r];
                }
            }
            if round != 10 {
                for c in 0..4 {
                    let col = [s[4 * c], s[4 * c + 1], s[4 * c + 2], s[4 * c + 3]];
                    for r in 0..4 {
                        s[4 * c + r] =
                            gmul(col[r], 2) ^ gmul(col[(r + 1) % 4], 3) ^ col[(r + 2) % 4] ^ col[(r + 3) % 4];
                    }
                }
            }
            add(&mut s, &self.round_keys[round]);
        }
        s
    }
}

fn is_prime(n: u32) -> bool {
    n >= 2 && (2..).take_while(|d| d * d <= n).all(|d| !n.is_multiple_of(d))
}

/// First 32 bits of the fractional part of the `root`-th root of each of
/// the first `count` primes.
fn frac_roots(count: usize, root: f64) -> Vec<u32> {
    (2u32..)
        .filter(|&n| is_prime(n))
        .take(count)
        .map(|p| {
            // Refine the f64 estimate with exact integer arithmetic.
            let approx = (f64::from(p)).powf(1.0 / root);
            let scaled = |x: u128| -> u128 {
                if root == 2.0 {
                    x * x
                } else {
                    x * x * x
                }
            };
            let target = u128::from(p) << (32 * root as u32);
            let mut x = (approx * 4294967296.0) as u128;
            while scaled(x + 1) <= target {
                x += 1;
            }
            while scaled(x) > target {
                x -= 1;
            }
            x as u32
        })
        .collect()
}

pub fn ref_sha256(msg: &[u8]) -> [u8; 32] {
    let k = frac_roots(64, 3.0);
    let mut h: Vec<u32> = frac_roots(8, 2.0);
    let mut data = msg.to_vec();
    let bit_len = (msg.len() as u64).wrapping_mul(8);
    data.push(0x80);
    while data.len() % 64 != 56 {
        data.push(0);
    }
    data.extend_from_slice(&bit_len.to_be_bytes());
    for chunk in data.chunks(64) {
        let mut w = [0u32; 64];
        for i in 0..16 {
            w[i] = u32::from_be_bytes(chunk[4 * i..4 * i + 4].try_into().unwrap());
        }
        for i in 16..64 {
            let s0 = w[i - 15].rotate_right(7) ^ w[i - 15].rotate_right(18) ^ (w[i - 15] >> 3);
            let s1 = w[i - 2].rotate_right(17) ^ w[i - 2].rotate_right(19) ^ (w[i - 2] >> 10);
            w[i] = w[i - 16].wrapping_add(s0).wrapping_add(w[i - 7]).wrapping_add(s1);
        }
        let mut v = [h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7]];
        for i in 0..64 {
            let [a, b, c, d, e, f, g, hh] = v;
            let s1 = e.rotate_right(6) ^ e.rotate_right(11) ^ e.rotate_right(25);
            let ch = (e & f) ^ (!e & g);
            let t1 = hh
                .wrapping_add(s1)
                .wrapping_add(ch)
                .wrapping_add(k[i])
                .wrapping_add(w[i]);
            let s0 = a.rotate_right(2) ^ a.rotate_right(13) ^ a.rotate_right(22);
            let maj = (a & b) ^ (a & c) ^ (b & c);
            let t2 = s0.wrapping_add(maj);
            v = [t1.wrapping_add(t2), a, b, c, d.wrapping_add(t1), e, f, g];
        }
        for (hi, vi) in h.iter_mut().zip(v) {
            *hi = hi.wrapping_add(vi);
        }
    }
    let mut out = [0u8; 32];
    for (i, word) in h.iter().enumerate() {
        out[4 * i..4 * i + 4].copy_from_slice(&word.to_be_bytes());
    }
    out
}

/// Bloom-filter bit counts for H = 1..=30 at a false-positive rate of 0.02,
/// evaluated with 40-digit arithmetic and frozen here.
#[allow(clippy::excessive_precision)]
pub const BFP_BITS_HIGH_PRECISION: [f64; 30] = [
    8.142363336478475665,
    16.28472667295695133,
    24.42709000943542700,
    32.56945334591390266,
    40.71181668239237833,
    48.85418001887085399,
    56.99654335534932966,
    65.13890669182780532,
    73.28127002830628099,
    81.42363336478475665,
    89.56599670126323232,
    97.70836003774170798,
    105.8507233742201836,
    113.9930867106986593,
    122.1354500471771350,
    130.2778133836556106,
    138.4201767201340863,
    146.5625400566125620,
    154.7049033930910376,
    162.8472667295695133,
    170.9896300660479890,
    179.1319934025264646,
    187.2743567390049403,
    195.4167200754834160,
    203.5590834119618916,
    211.7014467484403673,
    219.8438100849188430,
    227.9861734213973186,
    236.1285367578757943,
    244.2709000943542700,
];

pub mod net {
    use std::net::Ipv4Addr;

    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use zircon::nodes::{
        self, GatewayPolicy, HopContext, KeyRing, NodeIdentity, Outcome, Registry, Role, VerificationVerdict,
    };
    use zircon::provstore::ProvenanceStore;
    use zircon::watermark::{PacketId, WatermarkedPacket};

    pub const T0: u32 = 1_700_000_000;
    pub const SOURCE: usize = 0;
    pub const GATEWAY: usize = 4;

    /// Source, three relays and a gateway sharing one key.
    pub struct Net {
        pub nodes: Vec<NodeIdentity>,
        pub registry: Registry,
        pub keys: KeyRing,
        pub store: ProvenanceStore,
        pub policy: GatewayPolicy,
    }

    /// Where a packet stopped.
    #[derive(Debug, Clone, PartialEq, Eq)]
    pub struct Delivery {
        pub verdict: VerificationVerdict,
        /// Index of the node that gave the verdict.
        pub at: usize,
        pub path: Option<Vec<Ipv4Addr>>,
    }

    impl Net {
        pub fn new(seed: u64) -> Self {
            let roles = [
                Role::Source,
                Role::Intermediate,
                Role::Intermediate,
                Role::Intermediate,
                Role::Gateway,
            ];
            let nodes: Vec<_> = roles
                .iter()
                .enumerate()
                .map(|(i, &role)| NodeIdentity {
                    id: i as u16 + 1,
                    ip: Ipv4Addr::new(10, 0, 0, i as u8 + 1),
                    role,
                    registered: true,
                })
                .collect();
            let mut store = ProvenanceStore::new();
            for n in &nodes {
                if n.role == Role::Gateway {
                    store.register_gateway(n.id);
                } else {
                    store.register_node(n.id);
                }
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Self {
                registry: Registry::new(nodes.clone()),
                keys: KeyRing::new(nodes::fresh_key(0, &mut rng)),
                nodes,
                store,
                policy: GatewayPolicy::default(),
            }
        }

        pub fn id(&self, index: usize) -> u16 {
            self.nodes[index].id
        }

        pub fn ips(&self, range: std::ops::Range<usize>) -> Vec<Ipv4Addr> {
            self.nodes[range].iter().map(|n| n.ip).collect()
        }

        pub fn emit(&mut self, seq: u32, payload: &[u8], capture_time: u32) -> WatermarkedPacket {
            let key = self.keys.current().clone();
            nodes::source_emit_multihop(
                &self.nodes[SOURCE],
                PacketId::new(self.id(SOURCE), seq),
                payload,
                capture_time,
                &key,
                &mut self.store,
                u64::from(capture_time - T0) * 1000,
            )
            .unwrap()
        }

        /// Hands bytes to node `index` at `now_s`. Relays return the
        /// re-embedded frame on success.
        pub fn hop(&mut self, index: usize, bytes: &[u8], now_s: u32) -> (Delivery, Option<Vec<u8>>) {
            let ctx = HopContext {
                node: &self.nodes[index],
                keys: &self.keys,
                registry: &self.registry,
                now_ms: u64::from(now_s - T0) * 1000,
                now_s,
            };
            if self.nodes[index].role == Role::Gateway {
                let r = nodes::gateway_verify_multihop(&ctx, bytes, &mut self.store, &self.policy);
                let path = r.path.map(|p| p.ips());
                (
                    Delivery {
                        verdict: r.verdict,
                        at: index,
                        path,
                    },
                    None,
                )
            } else {
                let r = nodes::intermediate_forward(&ctx, bytes, &mut self.store);
                let fwd = r.forwarded.map(|p| p.to_bytes());
                (
                    Delivery {
                        verdict: r.verdict,
                        at: index,
                        path: None,
                    },
                    fwd,
                )
            }
        }

        /// Sends bytes from node `start` onward until a node rejects them or
        /// the gateway decides; one second per hop.
        pub fn deliver_from(&mut self, start: usize, mut bytes: Vec<u8>, mut now_s: u32) -> Delivery {
            for index in start..=GATEWAY {
                let (d, fwd) = self.hop(index, &bytes, now_s);
                if d.verdict.outcome != Outcome::Accepted || index == GATEWAY {
                    return d;
                }
                bytes = fwd.expect("accepted relay forwards");
                now_s += 1;
            }
            unreachable!()
        }
    }
}
