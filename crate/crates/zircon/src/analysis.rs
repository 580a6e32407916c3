//! Energy and provenance-size models, detection statistics over event logs,
//! and the CSV tables built from them.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netsim::{NodeReport, Report};
use crate::nodes::{Outcome, Role};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("{name} must be nonnegative, got {value}")]
    Negative { name: &'static str, value: f64 },
    #[error("hop count must be at least 1")]
    ZeroHops,
    #[error("false-positive probability must lie in (0, 1), got {0}")]
    Probability(f64),
    #[error("log line {line}: {reason}")]
    Log { line: usize, reason: String },
}

fn nonneg(name: &'static str, value: f64) -> Result<f64, AnalysisError> {
    if value >= 0.0 {
        Ok(value)
    } else {
        Err(AnalysisError::Negative { name, value })
    }
}

/// Power and duty-cycle constants of a sensor node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyParams {
    pub power_mw: f64,
    pub active_ms: f64,
    pub sensing_ms: f64,
    pub transmit_ms: f64,
    pub sleep_ms: f64,
}

impl Default for EnergyParams {
    fn default() -> Self {
        Self {
            power_mw: 30.0,
            active_ms: 1.0,
            sensing_ms: 0.5,
            transmit_ms: 300.0,
            sleep_ms: 299.0,
        }
    }
}

impl EnergyParams {
    pub fn validate(&self) -> Result<(), AnalysisError> {
        nonneg("power_mw", self.power_mw)?;
        nonneg("active_ms", self.active_ms)?;
        nonneg("sensing_ms", self.sensing_ms)?;
        nonneg("transmit_ms", self.transmit_ms)?;
        nonneg("sleep_ms", self.sleep_ms)?;
        Ok(())
    }

    fn fixed_ms(&self) -> f64 {
        self.active_ms + self.sensing_ms + self.transmit_ms + self.sleep_ms
    }
}

/// Energy of one operating cycle with `compute_ms` of processing, in mJ.
pub fn node_energy(params: &EnergyParams, compute_ms: f64) -> Result<f64, AnalysisError> {
    params.validate()?;
    nonneg("T_C", compute_ms)?;
    Ok(params.power_mw * (params.fixed_ms() + compute_ms) / 1000.0)
}

/// Energy budget of an intermediate node: `m` times a normal node's on top
/// of its own.
pub fn intermediate_budget(base_mj: f64, multiplier: f64) -> Result<f64, AnalysisError> {
    nonneg("E_0", base_mj)?;
    nonneg("m", multiplier)?;
    Ok(base_mj + multiplier * base_mj)
}

/// Nominal processing time per watermark operation, used to turn operation
/// counts into T_C without reading a wall clock.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpCostModel {
    pub encrypt_ms: f64,
    pub decrypt_ms: f64,
    pub digest_ms: f64,
}

impl Default for OpCostModel {
    fn default() -> Self {
        Self {
            encrypt_ms: 0.12,
            decrypt_ms: 0.12,
            digest_ms: 0.35,
        }
    }
}

impl OpCostModel {
    pub fn compute_ms(&self, node: &NodeReport) -> f64 {
        node.encrypts as f64 * self.encrypt_ms
            + node.decrypts as f64 * self.decrypt_ms
            + node.digests as f64 * self.digest_ms
    }
}

/// Energy a node spent over a run: one cycle per packet plus its total
/// processing time.
pub fn run_energy(params: &EnergyParams, costs: &OpCostModel, node: &NodeReport) -> Result<f64, AnalysisError> {
    params.validate()?;
    let compute = nonneg("T_C", costs.compute_ms(node))?;
    Ok(params.power_mw * (node.packets as f64 * params.fixed_ms() + compute) / 1000.0)
}

/// Header of [`energy_csv`].
pub const ENERGY_HEADER: &str = "node,role,packets,T_C_ms,energy_mJ";

/// One row per node of a finished run.
pub fn energy_csv(report: &Report, params: &EnergyParams, costs: &OpCostModel) -> Result<String, AnalysisError> {
    let mut out = String::from(ENERGY_HEADER);
    out.push('\n');
    for n in &report.nodes {
        let e = run_energy(params, costs, n)?;
        writeln!(
            out,
            "{},{},{},{:.6},{:.6}",
            n.id,
            n.role,
            n.packets,
            costs.compute_ms(n),
            e
        )
        .expect("string write");
    }
    Ok(out)
}

/// Header of [`energy_sweep_csv`].
pub const ENERGY_SWEEP_HEADER: &str = "packets,role,T_C_ms,energy_mJ";

/// Projects the per-packet cost of each role in `report` onto the given
/// packet counts.
pub fn energy_sweep_csv(
    report: &Report,
    params: &EnergyParams,
    costs: &OpCostModel,
    counts: &[u64],
) -> Result<String, AnalysisError> {
    params.validate()?;
    let mut per_role: BTreeMap<&str, (u64, f64)> = BTreeMap::new();
    for n in &report.nodes {
        let e = per_role.entry(n.role.as_str()).or_default();
        e.0 += n.packets;
        e.1 += costs.compute_ms(n);
    }
    let mut out = String::from(ENERGY_SWEEP_HEADER);
    out.push('\n');
    for &count in counts {
        for (role, &(packets, compute)) in &per_role {
            if packets == 0 {
                continue;
            }
            let tc = compute / packets as f64 * count as f64;
            let e = params.power_mw * (count as f64 * params.fixed_ms() + tc) / 1000.0;
            writeln!(out, "{count},{role},{tc:.6},{e:.6}").expect("string write");
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Zircon,
    Ssp,
    Mp,
    Bfp,
}

pub const ZIRCON_BYTES: u64 = 24;
pub const SSP_RECORD_BYTES: u64 = 42;
pub const MP_RECORD_BYTES: u64 = 6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostModel {
    pub scheme: Scheme,
    pub hops: u32,
    /// Only used by the Bloom-filter scheme.
    pub false_positive: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProvenanceSize {
    pub bytes: u64,
    /// Exact bit count before rounding.
    pub bits: f64,
}

/// Optimal Bloom-filter size for `hops` elements at false-positive rate `p`.
pub fn bloom_bits(hops: u32, p: f64) -> Result<f64, AnalysisError> {
    if hops == 0 {
        return Err(AnalysisError::ZeroHops);
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(AnalysisError::Probability(p));
    }
    let ln2 = std::f64::consts::LN_2;
    Ok(-f64::from(hops) * p.ln() / (ln2 * ln2))
}

/// Provenance carried per packet after `hops` hops.
pub fn provenance_size(model: &CostModel) -> Result<ProvenanceSize, AnalysisError> {
    if model.hops == 0 {
        return Err(AnalysisError::ZeroHops);
    }
    let h = u64::from(model.hops);
    let bytes = |b: u64| ProvenanceSize {
        bytes: b,
        bits: (b * 8) as f64,
    };
    Ok(match model.scheme {
        Scheme::Zircon => bytes(ZIRCON_BYTES),
        Scheme::Ssp => bytes(SSP_RECORD_BYTES * h),
        Scheme::Mp => bytes(MP_RECORD_BYTES * h),
        Scheme::Bfp => {
            let bits = bloom_bits(model.hops, model.false_positive)?;
            ProvenanceSize {
                bytes: (bits / 8.0).ceil() as u64,
                bits,
            }
        }
    })
}

/// Smallest hop count at which `scheme` needs more bytes than ZIRCON's
/// constant overhead, searching up to `limit`.
pub fn first_larger_than_zircon(scheme: Scheme, p: f64, limit: u32) -> Result<Option<u32>, AnalysisError> {
    for hops in 1..=limit {
        let size = provenance_size(&CostModel {
            scheme,
            hops,
            false_positive: p,
        })?;
        if size.bytes > ZIRCON_BYTES {
            return Ok(Some(hops));
        }
    }
    Ok(None)
}

/// Header of [`cost_csv`].
pub const COST_HEADER: &str = "H,zircon,ssp,mp,bfp_bytes,bfp_bits";

/// Sizes in bytes for H = 1..=max_hops; `bfp_bits` is rounded up.
pub fn cost_csv(max_hops: u32, p: f64) -> Result<String, AnalysisError> {
    let mut out = String::from(COST_HEADER);
    out.push('\n');
    for hops in 1..=max_hops {
        let size = |scheme| {
            provenance_size(&CostModel {
                scheme,
                hops,
                false_positive: p,
            })
        };
        let bfp = size(Scheme::Bfp)?;
        writeln!(
            out,
            "{hops},{},{},{},{},{}",
            size(Scheme::Zircon)?.bytes,
            size(Scheme::Ssp)?.bytes,
            size(Scheme::Mp)?.bytes,
            bfp.bytes,
            bfp.bits.ceil() as u64
        )
        .expect("string write");
    }
    Ok(out)
}

/// Detection statistics for one attack kind.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KindStats {
    pub attacked: usize,
    pub detected: usize,
    pub false_accepts: usize,
    /// Hop of the first rejection (or last recorded hop for drops).
    pub detection_hops: BTreeMap<u8, usize>,
}

impl KindStats {
    pub fn detection_rate(&self) -> Option<f64> {
        (self.attacked > 0).then(|| self.detected as f64 / self.attacked as f64)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub kinds: BTreeMap<String, KindStats>,
    pub clean_packets: usize,
    pub false_rejects: usize,
    pub outcomes: BTreeMap<Outcome, usize>,
}

impl DetectionReport {
    pub fn false_reject_rate(&self) -> Option<f64> {
        (self.clean_packets > 0).then(|| self.false_rejects as f64 / self.clean_packets as f64)
    }

    pub fn false_accepts(&self) -> usize {
        self.kinds.values().map(|k| k.false_accepts).sum()
    }
}

fn rate(r: Option<f64>) -> String {
    r.map_or_else(|| "n/a".to_string(), |r| format!("{r:.3}"))
}

impl fmt::Display for DetectionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<18} {:>8} {:>8} {:>6} {:>6}  hops",
            "kind", "attacked", "detected", "rate", "f_acc"
        )?;
        for (kind, s) in &self.kinds {
            let hops = s
                .detection_hops
                .iter()
                .map(|(h, n)| format!("{h}:{n}"))
                .collect::<Vec<_>>()
                .join(" ");
            writeln!(
                f,
                "{kind:<18} {:>8} {:>8} {:>6} {:>6}  {hops}",
                s.attacked,
                s.detected,
                rate(s.detection_rate()),
                s.false_accepts
            )?;
        }
        write!(
            f,
            "clean packets {}, false rejects {} (rate {})",
            self.clean_packets,
            self.false_rejects,
            rate(self.false_reject_rate())
        )
    }
}

#[derive(Debug, Default)]
struct PacketTrace {
    /// Attack kind and time of its first hit.
    attacks: BTreeMap<String, u64>,
    verdicts: Vec<(u16, u8, Outcome, u64)>,
    drop_hop: Option<u8>,
    probes: Vec<bool>,
}

fn fields(line: &str, n: usize, no: usize) -> Result<Vec<&str>, AnalysisError> {
    let f: Vec<&str> = line.split('|').collect();
    if f.len() == n {
        Ok(f)
    } else {
        Err(AnalysisError::Log {
            line: no,
            reason: format!("expected {n} fields, got {}", f.len()),
        })
    }
}

fn num<T: std::str::FromStr>(s: &str, no: usize) -> Result<T, AnalysisError> {
    s.parse().map_err(|_| AnalysisError::Log {
        line: no,
        reason: format!("bad number `{s}`"),
    })
}

/// Kinds whose effect should surface as a rejected verdict.
const ACTIVE_KINDS: [&str; 6] = [
    "replay",
    "insert_bits",
    "delete_bits",
    "modify_payload",
    "modify_watermark",
    "fake_inject",
];

/// Correlates attack, verdict, drop-suspect and probe lines of an event log.
pub fn detection_report(log: &str) -> Result<DetectionReport, AnalysisError> {
    let mut gateways = BTreeSet::new();
    let mut packets: BTreeMap<(u16, u32), PacketTrace> = BTreeMap::new();
    let mut emitted = BTreeSet::new();
    let mut outcomes = BTreeMap::new();

    for (i, line) in log.lines().enumerate() {
        let no = i + 1;
        if line.is_empty() {
            continue;
        }
        let kind = line.split('|').next().unwrap_or_default();
        match kind {
            "node" => {
                let f = fields(line, 5, no)?;
                let role: Role = f[2].parse().map_err(|_| AnalysisError::Log {
                    line: no,
                    reason: format!("bad role `{}`", f[2]),
                })?;
                if role == Role::Gateway {
                    gateways.insert(num::<u16>(f[1], no)?);
                }
            }
            "emit" => {
                let f = fields(line, 6, no)?;
                emitted.insert((num(f[1], no)?, num(f[2], no)?));
            }
            "attack" => {
                let f = fields(line, 6, no)?;
                let key = (num(f[2], no)?, num(f[3], no)?);
                let time = num(f[5], no)?;
                packets
                    .entry(key)
                    .or_default()
                    .attacks
                    .entry(f[1].to_string())
                    .or_insert(time);
            }
            "verdict" => {
                let f = fields(line, 7, no)?;
                let outcome: Outcome = f[5].parse().map_err(|_| AnalysisError::Log {
                    line: no,
                    reason: format!("bad outcome `{}`", f[5]),
                })?;
                *outcomes.entry(outcome).or_insert(0) += 1;
                let key = (num(f[2], no)?, num(f[3], no)?);
                packets.entry(key).or_default().verdicts.push((
                    num(f[1], no)?,
                    num(f[4], no)?,
                    outcome,
                    num(f[6], no)?,
                ));
            }
            "drop_suspect" => {
                let f = fields(line, 6, no)?;
                let key = (num(f[1], no)?, num(f[2], no)?);
                packets.entry(key).or_default().drop_hop = Some(num(f[3], no)?);
            }
            "probe" => {
                let f = fields(line, 6, no)?;
                let key = (num(f[2], no)?, num(f[3], no)?);
                packets.entry(key).or_default().probes.push(f[4] == "granted");
            }
            "deliver" | "rotate" | "store" | "delete" | "emit_fail" | "misroute" | "attack_error" => {}
            other => {
                return Err(AnalysisError::Log {
                    line: no,
                    reason: format!("unknown record `{other}`"),
                })
            }
        }
    }

    let mut report = DetectionReport {
        outcomes,
        ..DetectionReport::default()
    };
    for (key, trace) in &packets {
        if trace.attacks.is_empty() {
            if emitted.contains(key) {
                report.clean_packets += 1;
                if trace.verdicts.iter().any(|v| v.2 != Outcome::Accepted) {
                    report.false_rejects += 1;
                }
            }
            continue;
        }
        for (kind, &t0) in &trace.attacks {
            let stats = report.kinds.entry(kind.clone()).or_default();
            stats.attacked += 1;
            let after: Vec<_> = trace.verdicts.iter().filter(|v| v.3 >= t0).collect();
            let gateway_accepts = |vs: &[&(u16, u8, Outcome, u64)]| {
                vs.iter()
                    .filter(|v| v.2 == Outcome::Accepted && gateways.contains(&v.0))
                    .count()
            };
            let (detected, hop, false_accept) = match kind.as_str() {
                "drop" => (trace.drop_hop.is_some(), trace.drop_hop, false),
                "store_probe" => (
                    !trace.probes.is_empty() && trace.probes.iter().all(|g| !g),
                    None,
                    trace.probes.iter().any(|&g| g),
                ),
                "replay" => {
                    let rejection = after.iter().find(|v| v.2 != Outcome::Accepted);
                    let all: Vec<_> = trace.verdicts.iter().collect();
                    (rejection.is_some(), rejection.map(|v| v.1), gateway_accepts(&all) > 1)
                }
                k if ACTIVE_KINDS.contains(&k) => {
                    let rejection = after.iter().find(|v| v.2 != Outcome::Accepted);
                    (rejection.is_some(), rejection.map(|v| v.1), gateway_accepts(&after) > 0)
                }
                _ => (false, None, false),
            };
            if detected {
                stats.detected += 1;
            }
            if let Some(h) = hop.filter(|_| detected) {
                *stats.detection_hops.entry(h).or_insert(0) += 1;
            }
            if false_accept {
                stats.false_accepts += 1;
            }
        }
    }
    Ok(report)
}
