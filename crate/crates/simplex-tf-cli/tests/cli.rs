use std::fs;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_simplex-tf"))
}

const ORACLE: &str = "kind = oracle_equiv\ngrid.points = 16\ngrid.period = 4\nn_values = 16\nseed_count = 2\n";

#[test]
fn run_writes_csv_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("oracle.conf");
    fs::write(&cfg, ORACLE).unwrap();
    let out = dir.path().join("rows.csv");
    let status = bin().args(["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--threads", "1"]).output().unwrap().status;
    assert!(status.success());
    let csv = fs::read_to_string(&out).unwrap();
    assert!(csv.starts_with("kind,config_hash,seed,n,label"));
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("oracle.conf");
    fs::write(&cfg, ORACLE).unwrap();
    let first = bin().args(["run", cfg.to_str().unwrap(), "--threads", "3"]).output().unwrap();
    let second = bin().args(["run", cfg.to_str().unwrap(), "--threads", "1"]).output().unwrap();
    assert!(first.status.success());
    assert_eq!(first.stdout, second.stdout);
}

#[test]
fn seed_flag_changes_seed_column() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("oracle.conf");
    fs::write(&cfg, ORACLE).unwrap();
    let out = bin().args(["run", cfg.to_str().unwrap(), "--seed", "40"]).output().unwrap();
    let text = String::from_utf8(out.stdout).unwrap();
    let seeds: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').nth(2).unwrap()).collect();
    assert_eq!(seeds, ["40", "40", "41", "41"]);
}

#[test]
fn unresolved_protocol_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("ce.conf");
    fs::write(&cfg, "kind = counterexample2\n").unwrap();
    let out = bin().args(["run", cfg.to_str().unwrap()]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("resolution insufficient"));
}

#[test]
fn malformed_config_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.conf");
    fs::write(&cfg, "kind = oracle_equiv\nseed_count = many\n").unwrap();
    let out = bin().args(["run", cfg.to_str().unwrap()]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

#[test]
fn audit_emits_json_lines() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("u.universe");
    fs::write(&file, "0 0 0 1 2\n0 1 0 1 2\n1 0 1/2 3/2 5/2\n").unwrap();
    let out = bin().args(["audit", file.to_str().unwrap()]).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let members: u64 = text
        .lines()
        .map(serde_json_members)
        .sum();
    assert_eq!(members, 3);
}

fn serde_json_members(line: &str) -> u64 {
    let key = "\"members\":";
    let start = line.find(key).expect("members field") + key.len();
    line[start..].split(|c: char| !c.is_ascii_digit()).next().unwrap().parse().unwrap()
}

#[test]
fn audit_rejects_garbage() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("u.universe");
    fs::write(&file, "0 0 zero 1 2\n").unwrap();
    assert!(!bin().args(["audit", file.to_str().unwrap()]).output().unwrap().status.success());
}

#[test]
fn verify_unknown_suite_fails() {
    assert!(!bin().args(["verify", "everything"]).output().unwrap().status.success());
}
