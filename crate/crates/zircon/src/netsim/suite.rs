//! A fixed battery of attack scenarios: one per attack kind against a
//! source, three relays and a gateway, plus a clean control.

use std::net::Ipv4Addr;

use super::{
    run, Area, CopyKind, Mode, NodeConfig, PacketStatus, RouteConfig, RunOutput, ScenarioConfig, TrafficConfig,
};
use crate::adversary::{AttackAction, AttackSpec, AttackTarget, BitPosition, ByteEdit, Trigger};
use crate::nodes::{Outcome, Role};
use crate::watermark::{NodeId, PacketId};

pub const SOURCE: NodeId = 1;
pub const GATEWAY: NodeId = 5;
/// Packets per scenario.
pub const PACKETS: u32 = 10;
/// The packet every targeted attack goes after.
pub const TARGET: PacketId = PacketId {
    source: SOURCE,
    sequence: 5,
};
/// Sequence number claimed by injected packets; never emitted by the source.
pub const INJECTED_SEQUENCE: u32 = 1000;
pub const OUTSIDER: NodeId = 0xFFFF;

fn node(id: NodeId, role: Role, last_octet: u8, x: f64) -> NodeConfig {
    NodeConfig {
        id,
        ip: Ipv4Addr::new(10, 0, 0, last_octet),
        role,
        x,
        y: 25.0,
        registered: true,
    }
}

/// Source 1 through relays 2, 3, 4 to gateway 5 (single-hop: straight to 5).
pub fn base_config(seed: u64, mode: Mode, packets: u32) -> ScenarioConfig {
    let path = match mode {
        Mode::Multihop => vec![1, 2, 3, 4, 5],
        Mode::Singlehop => vec![1, 5],
    };
    ScenarioConfig {
        seed,
        mode,
        freshness_s: 60,
        time_base_s: 1_700_000_000,
        area: Area::default(),
        hop_delay_ms: 300,
        purge_on_delivery: true,
        drop_timeout_ms: None,
        max_time_ms: None,
        key_rotation: None,
        nodes: vec![
            node(1, Role::Source, 1, 5.0),
            node(2, Role::Intermediate, 2, 25.0),
            node(3, Role::Intermediate, 3, 50.0),
            node(4, Role::Intermediate, 4, 75.0),
            node(5, Role::Gateway, 254, 95.0),
        ],
        routes: vec![RouteConfig { path, delays_ms: None }],
        traffic: vec![TrafficConfig {
            source: SOURCE,
            count: packets,
            interval_ms: 1000,
            start_ms: 0,
            payload_len: 16,
            timestamp_lag_s: 0,
        }],
        attacks: Vec::new(),
    }
}

/// What a case has to show to pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Expectation {
    AllAccepted,
    /// Every packet accepted and at least one frame captured.
    Undetectable,
    /// The original of `TARGET` (or the injected packet) is rejected.
    Rejected {
        packet: PacketId,
    },
    /// Every replayed copy is rejected.
    ReplayRejected,
    /// The dropped packet is reported with its last recorded node.
    DropLocalized {
        last_node: NodeId,
    },
    ProbeDenied,
}

#[derive(Debug, Clone)]
pub struct SuiteCase {
    pub name: &'static str,
    pub kind: &'static str,
    pub config: ScenarioConfig,
    pub expect: Expectation,
}

fn with(mut cfg: ScenarioConfig, target: AttackTarget, trigger: Trigger, action: AttackAction) -> ScenarioConfig {
    cfg.attacks.push(AttackSpec {
        action,
        target,
        trigger,
    });
    cfg
}

const TARGET_TRIGGER: Trigger = Trigger::Packet {
    src: TARGET.source,
    seq: TARGET.sequence,
};

fn fake(seed: u64, link: [NodeId; 2]) -> ScenarioConfig {
    with(
        base_config(seed, Mode::Multihop, PACKETS),
        AttackTarget::Link(link),
        Trigger::At { time_ms: 2500 },
        AttackAction::FakeInject {
            source: SOURCE,
            sequence: INJECTED_SEQUENCE,
            ip: Ipv4Addr::new(10, 0, 0, 1),
            payload_hex: "00112233445566778899aabbccddeeff".into(),
            forged_key_hex: Some(format!("{:032x}", u128::from(seed) * 0x9E37_79B9_7F4A_7C15 + 1)),
            forged_epoch: 99,
            as_node: SOURCE,
        },
    )
}

pub fn cases(seed: u64) -> Vec<SuiteCase> {
    let multi = || base_config(seed, Mode::Multihop, PACKETS);
    let single = || base_config(seed, Mode::Singlehop, PACKETS);
    let link = AttackTarget::Link([2, 3]);
    let direct = AttackTarget::Link([1, 5]);
    let injected = PacketId::new(SOURCE, INJECTED_SEQUENCE);
    let case = |name, config: ScenarioConfig, expect| SuiteCase {
        name,
        kind: config.attacks.first().map_or("none", |a| a.action.kind_name()),
        config,
        expect,
    };
    vec![
        case("control", multi(), Expectation::AllAccepted),
        case(
            "eavesdrop",
            with(multi(), link, Trigger::Always, AttackAction::Eavesdrop),
            Expectation::Undetectable,
        ),
        case(
            "replay_after_delivery",
            with(
                multi(),
                AttackTarget::Link([3, 4]),
                TARGET_TRIGGER,
                AttackAction::Replay {
                    delay_ms: 5000,
                    mutate_timestamp: false,
                },
            ),
            Expectation::ReplayRejected,
        ),
        case(
            "replay_mutated",
            with(
                multi(),
                AttackTarget::Link([3, 4]),
                TARGET_TRIGGER,
                AttackAction::Replay {
                    delay_ms: 10,
                    mutate_timestamp: true,
                },
            ),
            Expectation::ReplayRejected,
        ),
        case(
            "insert_bits",
            with(
                multi(),
                link,
                TARGET_TRIGGER,
                AttackAction::InsertBits {
                    at: BitPosition::Offset(9 * 8 + 3),
                    bits: "101".into(),
                },
            ),
            Expectation::Rejected { packet: TARGET },
        ),
        case(
            "delete_bits",
            with(
                multi(),
                link,
                TARGET_TRIGGER,
                AttackAction::DeleteBits {
                    q: 8,
                    at: BitPosition::default(),
                },
            ),
            Expectation::Rejected { packet: TARGET },
        ),
        case(
            "modify_payload",
            with(
                multi(),
                link,
                TARGET_TRIGGER,
                AttackAction::ModifyPayload {
                    edits: vec![ByteEdit { offset: 0, xor: 0x01 }],
                },
            ),
            Expectation::Rejected { packet: TARGET },
        ),
        case(
            "modify_watermark",
            with(
                multi(),
                link,
                TARGET_TRIGGER,
                AttackAction::ModifyWatermark {
                    edits: vec![ByteEdit { offset: 3, xor: 0x80 }],
                },
            ),
            Expectation::Rejected { packet: TARGET },
        ),
        case(
            "drop",
            with(multi(), link, TARGET_TRIGGER, AttackAction::Drop),
            Expectation::DropLocalized { last_node: 2 },
        ),
        case(
            "fake_inject_first_hop",
            fake(seed, [1, 2]),
            Expectation::Rejected { packet: injected },
        ),
        case(
            "fake_inject_before_gateway",
            fake(seed, [4, 5]),
            Expectation::Rejected { packet: injected },
        ),
        case(
            "store_probe_outsider",
            with(
                multi(),
                AttackTarget::Store,
                Trigger::At { time_ms: 100 },
                AttackAction::StoreProbe {
                    caller: OUTSIDER,
                    source: SOURCE,
                    sequence: 1,
                },
            ),
            Expectation::ProbeDenied,
        ),
        case(
            "store_probe_sensor",
            with(
                multi(),
                AttackTarget::Store,
                Trigger::At { time_ms: 100 },
                AttackAction::StoreProbe {
                    caller: 2,
                    source: SOURCE,
                    sequence: 1,
                },
            ),
            Expectation::ProbeDenied,
        ),
        case(
            "singlehop_modify_payload",
            with(
                single(),
                direct,
                TARGET_TRIGGER,
                AttackAction::ModifyPayload {
                    edits: vec![ByteEdit { offset: 15, xor: 0x40 }],
                },
            ),
            Expectation::Rejected { packet: TARGET },
        ),
        case(
            "singlehop_delete_bits",
            with(
                single(),
                direct,
                TARGET_TRIGGER,
                AttackAction::DeleteBits {
                    q: 3,
                    at: BitPosition::Offset(13 * 8),
                },
            ),
            Expectation::Rejected { packet: TARGET },
        ),
        case(
            "singlehop_replay",
            with(
                single(),
                direct,
                TARGET_TRIGGER,
                AttackAction::Replay {
                    delay_ms: 2000,
                    mutate_timestamp: true,
                },
            ),
            Expectation::ReplayRejected,
        ),
    ]
}

#[derive(Debug, Clone)]
pub struct CaseResult {
    pub name: &'static str,
    pub kind: &'static str,
    pub detected: bool,
    /// Where and how the attack was caught.
    pub evidence: String,
    pub false_accepts: usize,
    pub passed: bool,
    pub output: RunOutput,
}

fn all_accepted(out: &RunOutput) -> bool {
    out.report
        .packets
        .iter()
        .all(|p| matches!(p.status, PacketStatus::Accepted { .. }))
}

fn describe(status: &PacketStatus) -> String {
    match status {
        PacketStatus::Rejected { node, hop, outcome } => format!("{outcome} at node {node} hop {hop}"),
        other => other.name().to_string(),
    }
}

pub fn evaluate(case: &SuiteCase, output: RunOutput) -> CaseResult {
    let report = &output.report;
    let false_accepts = report.summary.false_accepts;
    let (detected, evidence, extra_ok) = match case.expect {
        Expectation::AllAccepted => (false, "none".to_string(), all_accepted(&output)),
        Expectation::Undetectable => (
            false,
            format!("{} frames captured", report.summary.captured_frames),
            all_accepted(&output) && report.summary.captured_frames > 0,
        ),
        Expectation::Rejected { packet } => {
            let status = report.packet(packet).map(|p| &p.status);
            let rejected = matches!(status, Some(PacketStatus::Rejected { .. }));
            let others_ok = report.packets.iter().all(|p| {
                PacketId::new(p.source, p.sequence) == packet || matches!(p.status, PacketStatus::Accepted { .. })
            });
            (rejected, status.map_or("missing".into(), describe), others_ok)
        }
        Expectation::ReplayRejected => {
            let v = &report.summary.replay_verdicts;
            let total: usize = v.values().sum();
            let accepted = v.get(&Outcome::Accepted).copied().unwrap_or(0);
            let evidence = v
                .iter()
                .map(|(o, n)| format!("{n}x {o}"))
                .collect::<Vec<_>>()
                .join(", ");
            (total > 0 && accepted == 0, format!("replayed copies: {evidence}"), true)
        }
        Expectation::DropLocalized { last_node } => {
            let suspect = report
                .drop_suspects
                .iter()
                .find(|s| s.source == TARGET.source && s.sequence == TARGET.sequence);
            let ok = suspect.is_some_and(|s| s.last_node == last_node);
            let evidence = suspect.map_or("no suspect".into(), |s| {
                format!("last record hop {} by node {}", s.last_hop, s.last_node)
            });
            (ok, evidence, true)
        }
        Expectation::ProbeDenied => {
            let denied = !report.probes.is_empty() && report.probes.iter().all(|p| !p.granted);
            (
                denied,
                format!(
                    "{} probe(s) denied",
                    report.probes.iter().filter(|p| !p.granted).count()
                ),
                true,
            )
        }
    };
    let needs_detection = !matches!(case.expect, Expectation::AllAccepted | Expectation::Undetectable);
    let passed = false_accepts == 0 && extra_ok && (detected || !needs_detection);
    CaseResult {
        name: case.name,
        kind: case.kind,
        detected,
        evidence,
        false_accepts,
        passed,
        output,
    }
}

/// Runs every case.
pub fn run_suite(seed: u64) -> Vec<CaseResult> {
    cases(seed)
        .into_iter()
        .map(|case| {
            let output = run(case.config.clone()).expect("suite scenarios are valid");
            evaluate(&case, output)
        })
        .collect()
}

/// Injected packets are tracked with their own origin tag.
pub fn is_injected(output: &RunOutput, packet: PacketId) -> bool {
    output
        .report
        .packet(packet)
        .is_some_and(|p| p.origin == CopyKind::Injected)
}
