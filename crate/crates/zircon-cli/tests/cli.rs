use std::io::Write;
use std::process::{Command, Output, Stdio};

fn zircon(args: &[&str], stdin: Option<&str>) -> Output {
    let mut child = Command::new(env!("CARGO_BIN_EXE_zircon"))
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    if let Some(text) = stdin {
        child.stdin.take().unwrap().write_all(text.as_bytes()).unwrap();
    }
    child.wait_with_output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn generated_config_runs() {
    let dir = tempfile::tempdir().unwrap();
    let config = stdout(&zircon(&["gen-config"], None));
    let out = dir.path().join("run");
    let o = zircon(&["run", "--config", "-", "--out", out.to_str().unwrap()], Some(&config));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["events.log", "report.json", "journal.txt", "detection.txt"] {
        assert!(out.join(f).is_file(), "{f}");
    }

    let o = zircon(&["energy-table", "--run", out.to_str().unwrap()], None);
    assert!(o.status.success());
    let energy = std::fs::read_to_string(out.join("energy.csv")).unwrap();
    assert!(energy.starts_with("node,role,packets,T_C_ms,energy_mJ\n"));
    assert_eq!(energy.lines().count(), 6);

    let journal = out.join("journal.txt");
    let o = zircon(
        &[
            "inspect-store",
            "--journal",
            journal.to_str().unwrap(),
            "--packet",
            "1/5",
        ],
        None,
    );
    assert!(o.status.success());
    assert!(stdout(&o).starts_with("1/5 records 2"));
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let config = stdout(&zircon(&["gen-config"], None));
    let mut files = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        assert!(
            zircon(&["run", "--config", "-", "--out", out.to_str().unwrap()], Some(&config))
                .status
                .success()
        );
        assert!(zircon(&["energy-table", "--run", out.to_str().unwrap()], None)
            .status
            .success());
        files.push(
            ["events.log", "report.json", "journal.txt", "energy.csv"].map(|f| std::fs::read(out.join(f)).unwrap()),
        );
    }
    assert_eq!(files[0], files[1]);
}

#[test]
fn cost_table_first_row() {
    let o = zircon(&["cost-table", "--max-hops", "30", "--pfp", "0.02", "--out", "-"], None);
    assert!(o.status.success());
    let text = stdout(&o);
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines[0], "H,zircon,ssp,mp,bfp_bytes,bfp_bits");
    assert_eq!(lines[1], "1,24,42,6,2,9");
    assert_eq!(lines.len(), 31);
}

#[test]
fn attack_suite_reports_full_detection() {
    let o = zircon(&["attack-suite", "--seed", "1"], None);
    assert!(o.status.success());
    let text = stdout(&o);
    for kind in [
        "modify_payload",
        "modify_watermark",
        "insert_bits",
        "delete_bits",
        "replay",
    ] {
        assert!(
            text.lines()
                .any(|l| l.starts_with(kind) && l.contains("detection 100%")),
            "{kind}\n{text}"
        );
    }
    assert!(!text.contains("FAIL"));
}

#[test]
fn usage_and_runtime_errors_have_distinct_codes() {
    assert_eq!(zircon(&["run", "--out", "x"], None).status.code(), Some(2));
    assert_eq!(zircon(&["frobnicate"], None).status.code(), Some(2));
    assert_eq!(zircon(&["cost-table", "--bogus"], None).status.code(), Some(2));
    let o = zircon(&["run", "--config", "/definitely/missing.toml", "--out", "x"], None);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing.toml"));
    let o = zircon(
        &["run", "--config", "-", "--out", "x"],
        Some("seed = 1\nnodes = []\nroutes = []\n"),
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nodes: at least one node"));
    let o = zircon(&["cost-table", "--pfp", "1.5", "--out", "-"], None);
    assert_eq!(o.status.code(), Some(1));
}
