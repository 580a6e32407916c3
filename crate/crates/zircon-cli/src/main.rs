use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use zircon::analysis::{self, EnergyParams, OpCostModel};
use zircon::netsim::{self, suite, Report, ScenarioConfig, EXAMPLE_CONFIG};
use zircon::provstore::{parse_journal, JournalEntry};
use zircon::watermark::PacketId;

#[derive(Parser)]
#[command(name = "zircon", version, about = "Zero-watermarking sensor network simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write events.log, report.json and journal.txt.
    Run {
        /// Scenario file, or `-` for stdin.
        #[arg(long)]
        config: String,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Replace the seed given in the scenario.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run one scenario per attack kind and print the detection matrix.
    AttackSuite {
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Write provenance sizes per hop count to cost.csv.
    CostTable {
        #[arg(long, default_value_t = 30)]
        max_hops: u32,
        #[arg(long, default_value_t = 0.02)]
        pfp: f64,
        /// Output directory, or `-` for stdout.
        #[arg(long, default_value = ".")]
        out: String,
    },
    /// Write per-node energy of a finished run to energy.csv.
    EnergyTable {
        /// Directory written by `run`.
        #[arg(long)]
        run: PathBuf,
        /// Output directory (defaults to the run directory), or `-`.
        #[arg(long)]
        out: Option<String>,
        /// Also project energy onto these packet counts (energy_sweep.csv).
        #[arg(long, value_delimiter = ',')]
        sweep: Vec<u64>,
        #[arg(long, default_value_t = OpCostModel::default().encrypt_ms)]
        encrypt_ms: f64,
        #[arg(long, default_value_t = OpCostModel::default().decrypt_ms)]
        decrypt_ms: f64,
        #[arg(long, default_value_t = OpCostModel::default().digest_ms)]
        digest_ms: f64,
    },
    /// Summarize a store journal per packet.
    InspectStore {
        /// Journal file, or `-` for stdin.
        #[arg(long)]
        journal: String,
        /// Only this packet, as `source/sequence`.
        #[arg(long)]
        packet: Option<String>,
    },
    /// Print a commented example scenario.
    GenConfig,
}

type CliResult = Result<(), Box<dyn std::error::Error>>;

fn read_input(path: &str) -> io::Result<String> {
    if path == "-" {
        let mut s = String::new();
        io::stdin().read_to_string(&mut s)?;
        Ok(s)
    } else {
        fs::read_to_string(path).map_err(|e| io::Error::new(e.kind(), format!("{path}: {e}")))
    }
}

fn write_output(dir: &str, name: &str, text: &str) -> io::Result<()> {
    if dir == "-" {
        io::stdout().write_all(text.as_bytes())
    } else {
        fs::create_dir_all(dir)?;
        fs::write(Path::new(dir).join(name), text)
    }
}

fn cmd_run(config: &str, out: &Path, seed: Option<u64>) -> CliResult {
    let mut cfg = ScenarioConfig::from_toml(&read_input(config)?)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let output = netsim::run(cfg)?;
    fs::create_dir_all(out)?;
    fs::write(out.join("events.log"), &output.log)?;
    fs::write(out.join("report.json"), output.report.to_json())?;
    fs::write(out.join("journal.txt"), &output.journal)?;
    let detection = analysis::detection_report(&output.log)?;
    fs::write(out.join("detection.txt"), format!("{detection}\n"))?;
    let s = &output.report.summary;
    println!(
        "emitted {} injected {}: accepted {} rejected {} dropped {} in flight {}; false accepts {}",
        s.emitted, s.injected, s.accepted, s.rejected, s.dropped, s.in_flight, s.false_accepts
    );
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_attack_suite(seed: u64) -> Result<bool, Box<dyn std::error::Error>> {
    let results = suite::run_suite(seed);
    println!(
        "{:<28} {:<17} {:<9} {:<6} {:<5} evidence",
        "case", "kind", "detected", "f_acc", "pass"
    );
    let mut ok = true;
    let mut per_kind: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for r in &results {
        println!(
            "{:<28} {:<17} {:<9} {:<6} {:<5} {}",
            r.name,
            r.kind,
            if r.detected { "yes" } else { "no" },
            r.false_accepts,
            if r.passed { "ok" } else { "FAIL" },
            r.evidence
        );
        ok &= r.passed && r.false_accepts == 0;
        if r.kind != "none" && r.kind != "eavesdrop" {
            let e = per_kind.entry(r.kind).or_default();
            e.0 += 1;
            e.1 += usize::from(r.detected);
        }
    }
    println!();
    for (kind, (n, d)) in per_kind {
        println!("{kind:<17} detection {:.0}% ({d}/{n})", 100.0 * d as f64 / n as f64);
    }
    Ok(ok)
}

fn cmd_energy_table(run: &Path, out: Option<String>, sweep: &[u64], costs: OpCostModel) -> CliResult {
    let report = Report::from_json(&fs::read_to_string(run.join("report.json"))?)?;
    let params = EnergyParams::default();
    let out = out.unwrap_or_else(|| run.display().to_string());
    write_output(&out, "energy.csv", &analysis::energy_csv(&report, &params, &costs)?)?;
    if !sweep.is_empty() {
        write_output(
            &out,
            "energy_sweep.csv",
            &analysis::energy_sweep_csv(&report, &params, &costs, sweep)?,
        )?;
    }
    Ok(())
}

fn parse_packet(s: &str) -> Result<PacketId, String> {
    let (src, seq) = s.split_once('/').ok_or("expected source/sequence")?;
    Ok(PacketId::new(
        src.parse().map_err(|_| format!("bad source `{src}`"))?,
        seq.parse().map_err(|_| format!("bad sequence `{seq}`"))?,
    ))
}

#[derive(Default)]
struct PacketJournal {
    hops: Vec<(u8, u16, u64)>,
    deleted: Option<(usize, u64)>,
}

fn cmd_inspect_store(journal: &str, packet: Option<String>) -> CliResult {
    let filter = packet.as_deref().map(parse_packet).transpose()?;
    let mut packets: BTreeMap<PacketId, PacketJournal> = BTreeMap::new();
    for entry in parse_journal(&read_input(journal)?)? {
        match entry {
            JournalEntry::Store { key, by, time, .. } => {
                packets.entry(key.packet).or_default().hops.push((key.hop, by, time))
            }
            JournalEntry::Delete { packet, count, time } => {
                packets.entry(packet).or_default().deleted = Some((count, time))
            }
        }
    }
    let mut live = 0;
    for (id, p) in &packets {
        if p.deleted.is_none() {
            live += 1;
        }
        if filter.is_some_and(|f| f != *id) {
            continue;
        }
        let hops = p
            .hops
            .iter()
            .map(|(h, by, t)| format!("{h}:{by}@{t}"))
            .collect::<Vec<_>>()
            .join(" ");
        let state = p
            .deleted
            .map_or("live".to_string(), |(n, t)| format!("deleted {n} @{t}"));
        println!("{id} records {} [{hops}] {state}", p.hops.len());
    }
    if filter.is_none() {
        println!("{} packets, {live} live", packets.len());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, out, seed } => cmd_run(&config, &out, seed),
        Command::AttackSuite { seed } => match cmd_attack_suite(seed) {
            Ok(true) => Ok(()),
            Ok(false) => {
                eprintln!("error: attack suite found a false accept or a failed case");
                return ExitCode::FAILURE;
            }
            Err(e) => Err(e),
        },
        Command::CostTable { max_hops, pfp, out } => analysis::cost_csv(max_hops, pfp)
            .map_err(Into::into)
            .and_then(|csv| write_output(&out, "cost.csv", &csv).map_err(Into::into)),
        Command::EnergyTable {
            run,
            out,
            sweep,
            encrypt_ms,
            decrypt_ms,
            digest_ms,
        } => cmd_energy_table(
            &run,
            out,
            &sweep,
            OpCostModel {
                encrypt_ms,
                decrypt_ms,
                digest_ms,
            },
        ),
        Command::InspectStore { journal, packet } => cmd_inspect_store(&journal, packet),
        Command::GenConfig => io::stdout().write_all(EXAMPLE_CONFIG.as_bytes()).map_err(Into::into),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
