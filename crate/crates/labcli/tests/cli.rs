use std::path::Path;
use std::process::{Command, Output};

use labcli::ExperimentRecord;
use tempfile::TempDir;

fn lab(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lab")).args(args).current_dir(dir).output().expect("lab runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

const BATCH: &str = r#"{
  "schema_version": 1,
  "seed": 9,
  "experiments": [
    {"schema_version": 1, "kind": "path-census", "label": "census", "params": {"m": 3}},
    {"schema_version": 1, "kind": "ihara-bass", "label": "ib", "params": {"N": 8}},
    {"schema_version": 1, "kind": "free-norm", "coefficients": {"preset": "kesten(2)"}, "params": {"tol": 0.05}}
  ]
}"#;

fn records(path: &Path) -> Vec<ExperimentRecord> {
    labcli::record::read_records(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn run_appends_records() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "batch.json", BATCH);
    let out = dir.path().join("out.jsonl");
    let o = lab(&["run", &cfg, "--out", out.to_str().unwrap(), "--jobs", "2"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let first = records(&out);
    assert_eq!(first.len(), 3);
    assert!(first.iter().all(|r| r.pass && r.error.is_none()));
    assert_eq!(first[0].config.label.as_deref(), Some("census"));
    let o = lab(&["run", &cfg, "--out", out.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let both = records(&out);
    assert_eq!(both.len(), 6);
    for (a, b) in first.iter().zip(&both[3..]) {
        assert_eq!(a.config_hash, b.config_hash);
        assert_eq!(a.outputs, b.outputs);
    }
}

#[test]
fn failing_verdict_exits_one() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "c.json", r#"{"schema_version": 1, "kind": "free-norm", "params": {"target": 100.0}}"#);
    let o = lab(&["run", &cfg], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let rec = ExperimentRecord::from_line(String::from_utf8_lossy(&o.stdout).trim()).unwrap();
    assert!(!rec.pass);
    assert!(rec.verdicts.iter().any(|v| v.name == "target_outside_bracket" && !v.pass));
}

#[test]
fn bad_config_exits_two() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "c.json", r#"{"schema_version": 1, "kind": "path-census", "params": {"mm": 3}}"#);
    let o = lab(&["run", &cfg], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("mm"));
    let o = lab(&["run", "missing.json"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn replay_matches_and_flags_other_seeds() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "batch.json", BATCH);
    let out = dir.path().join("out.jsonl");
    assert_eq!(lab(&["run", &cfg, "--out", out.to_str().unwrap()], dir.path()).status.code(), Some(0));
    let o = lab(&["replay", out.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let err = String::from_utf8_lossy(&o.stderr);
    assert_eq!(err.lines().filter(|l| l.starts_with("MATCH")).count(), 3);
    let o = lab(&["replay", out.to_str().unwrap(), "--seed", "12345"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("NON-COMPARABLE"));
}

#[test]
fn report_csv_and_json() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "batch.json", BATCH);
    let out = dir.path().join("out.jsonl");
    lab(&["run", &cfg, "--out", out.to_str().unwrap()], dir.path());
    let o = lab(&["report", out.to_str().unwrap(), "--select", "kind,label,pass"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let csv = String::from_utf8_lossy(&o.stdout).into_owned();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "kind,label,pass");
    assert_eq!(lines[1], "path-census,census,true");
    assert_eq!(lines.len(), 4);

    let o = lab(&["report", out.to_str().unwrap(), "--select", "label,census"], dir.path());
    let csv = String::from_utf8_lossy(&o.stdout).into_owned();
    assert!(csv.starts_with("label,m,v,e1,chi,coarse_count,fine_count,bound,pass\n"));
    assert!(csv.lines().skip(1).all(|l| l.starts_with("census,")));

    let o = lab(&["report", out.to_str().unwrap(), "--format", "json"], dir.path());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["records"], 3);
    assert_eq!(v["passed"], 3);
}

#[test]
fn empty_records_give_header_only_csv() {
    let dir = TempDir::new().unwrap();
    let empty = write(dir.path(), "empty.jsonl", "");
    let o = lab(&["report", &empty], dir.path());
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(String::from_utf8_lossy(&o.stdout), "kind,label,seed,pass\n");
}

#[test]
fn records_round_trip_byte_identical() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "batch.json", BATCH);
    let o = lab(&["run", &cfg], dir.path());
    let text = String::from_utf8_lossy(&o.stdout).into_owned();
    for line in text.lines() {
        assert_eq!(ExperimentRecord::from_line(line).unwrap().to_line(), line);
    }
}

#[test]
fn coefficient_file_resolves_relative_to_config() {
    let dir = TempDir::new().unwrap();
    let sub = dir.path().join("cfg");
    std::fs::create_dir(&sub).unwrap();
    let preset = labcli::config::ExperimentConfig::new(labcli::config::ExperimentKind::FreeNorm).family().unwrap();
    write(&sub, "coeffs.json", &serde_json::to_string(&preset.to_json()).unwrap());
    let cfg = write(&sub, "c.json", r#"{"schema_version": 1, "kind": "free-norm", "coefficients": {"file": "coeffs.json"}}"#);
    let o = lab(&["run", &cfg], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
}
