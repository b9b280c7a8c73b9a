use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn hitlist6(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hitlist6"))
        .current_dir(dir)
        .args(["--config", "config.toml", "--quiet"])
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn fixture() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let st = Command::new(env!("CARGO_BIN_EXE_hitlist6"))
        .args(["fixture-gen", "--seed", "42", "--dir"])
        .arg(dir.path())
        .status()
        .unwrap();
    assert!(st.success());
    dir
}

fn json(p: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(p).unwrap()).unwrap()
}

fn ok(o: Output) -> Output {
    assert!(o.status.success(), "exit {:?}: {}", o.status.code(), stderr(&o));
    o
}

#[test]
fn missing_input_file_exits_2_naming_path() {
    let f = fixture();
    std::fs::remove_file(f.path().join("alexa.txt")).unwrap();
    let o = hitlist6(f.path(), &["ingest"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("alexa.txt"), "{}", stderr(&o));
}

#[test]
fn env_override_replaces_source_path() {
    let f = fixture();
    std::fs::rename(f.path().join("alexa.txt"), f.path().join("moved.txt")).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_hitlist6"))
        .current_dir(f.path())
        .env("HITLIST6_SOURCE_ALEXA_PATH", f.path().join("moved.txt"))
        .args(["--config", "config.toml", "--quiet", "ingest"])
        .output()
        .unwrap();
    ok(o);
}

#[test]
fn downstream_stage_names_missing_upstream() {
    let f = fixture();
    let o = hitlist6(f.path(), &["filter"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("hitlist6 ingest"), "{}", stderr(&o));
    let o = hitlist6(f.path(), &["recommend", "routers"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("hitlist6 analyze"));
}

#[test]
fn raw_backend_without_flag_is_refused() {
    let f = fixture();
    let cfg = std::fs::read_to_string(f.path().join("config.toml")).unwrap();
    std::fs::write(
        f.path().join("config.toml"),
        cfg.replace("backend = \"simulated\"", "backend = \"raw\""),
    )
    .unwrap();
    ok(hitlist6(f.path(), &["ingest"]));
    ok(hitlist6(f.path(), &["filter"]));
    let o = hitlist6(f.path(), &["probe"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("--i-am-authorized"));
    assert!(!f.path().join("out/matrix.bin").exists());
}

#[test]
fn unknown_flag_is_usage_error() {
    let f = fixture();
    assert_eq!(hitlist6(f.path(), &["ingest", "--bogus"]).status.code(), Some(2));
}

#[test]
fn full_chain_reports_and_partial_bundle() {
    let f = fixture();
    let d = f.path();
    ok(hitlist6(d, &["ingest"]));
    let o = Command::new(env!("CARGO_BIN_EXE_hitlist6"))
        .current_dir(d)
        .args(["--config", "config.toml", "filter"])
        .output()
        .unwrap();
    let table = String::from_utf8_lossy(&o.stdout).into_owned();
    assert_eq!(table.lines().filter(|l| l.starts_with("Removing")).count(), 7, "{table}");
    let report = json(&d.join("out/filter_report.json"));
    assert_eq!(report["stages"].as_array().unwrap().len(), 7);

    // analyze before probing: stable core and in-protocol are skipped
    let o = ok(hitlist6(d, &["analyze"]));
    assert!(stderr(&o).is_empty() || !stderr(&o).contains("error"));
    let reports = d.join("out/reports");
    assert!(!reports.join("stable_core.json").exists());
    assert!(!reports.join("in_protocol.json").exists());
    assert_eq!(std::fs::read_dir(&reports).unwrap().filter(|e| e.as_ref().unwrap().path().is_file()).count(), 7);

    ok(hitlist6(d, &["probe"]));
    ok(hitlist6(d, &["analyze"]));
    let names: Vec<String> = std::fs::read_dir(&reports)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    assert_eq!(names.len(), 9, "{names:?}");
    for plot in ["runup.tsv", "hamming.tsv", "decay.tsv"] {
        assert!(reports.join("plots").join(plot).is_file());
    }

    let o = hitlist6(d, &["recommend", "webcams"]);
    assert_eq!(o.status.code(), Some(2));
    for v in ["internet_structure", "security_posture", "routers", "clients", "active_prefixes"] {
        assert!(stderr(&o).contains(v), "{}", stderr(&o));
    }
    let o = ok(Command::new(env!("CARGO_BIN_EXE_hitlist6"))
        .current_dir(d)
        .args(["--config", "config.toml", "recommend", "clients"])
        .output()
        .unwrap());
    assert!(String::from_utf8_lossy(&o.stdout).contains("first sighting"));
    let manifest = json(&d.join("out/manifest.json"));
    for stage in ["ingest", "filter", "probe", "analyze"] {
        assert!(manifest["stages"][stage].is_object(), "{stage}");
    }
    assert_eq!(manifest["seed"], 42);
}

fn small_world(dir: &Path, blacklist: &str) {
    let list: String = (0..100).map(|i| format!("2a00:1::{:x}\n", i + 1)).collect();
    std::fs::write(dir.join("list.txt"), list).unwrap();
    std::fs::write(dir.join("pfx2as.tsv"), "2a00:1::\t32\t64500\n").unwrap();
    std::fs::write(dir.join("blacklist.txt"), blacklist).unwrap();
    std::fs::write(dir.join("model.json"), "[]").unwrap();
    std::fs::write(
        dir.join("config.toml"),
        r#"output_dir = "out"
ingest_time = 1460000000

[[source]]
kind = "zone_file"
name = "z"
path = "list.txt"
format = "list"

[filter]
pfx2as = "pfx2as.tsv"
blacklist = "blacklist.txt"

[probe]
model = "model.json"
extra_scans = ["tcp80"]
"#,
    )
    .unwrap();
}

#[test]
fn mwn_profile_two_scans_gives_1400_cells() {
    let dir = tempfile::tempdir().unwrap();
    small_world(dir.path(), "");
    for step in ["ingest", "filter", "probe"] {
        ok(hitlist6(dir.path(), &[step]));
    }
    let r = json(&dir.path().join("out/filter_report.json"));
    assert_eq!(r["stages"][6]["removed"], 0);
    let p = json(&dir.path().join("out/probe_report.json"));
    assert_eq!(p["targets"], 100);
    assert_eq!(p["cells"], 1400);
}

#[test]
fn seeded_probe_is_repeatable() {
    let f = fixture();
    let d = f.path();
    ok(hitlist6(d, &["ingest"]));
    ok(hitlist6(d, &["filter"]));
    ok(hitlist6(d, &["--seed", "42", "probe"]));
    let first = std::fs::read(d.join("out/matrix.bin")).unwrap();
    ok(hitlist6(d, &["--seed", "42", "probe"]));
    assert_eq!(first, std::fs::read(d.join("out/matrix.bin")).unwrap());
    let targets = std::fs::read(d.join("out/targets.bin")).unwrap();
    ok(hitlist6(d, &["ingest"]));
    assert_eq!(targets, std::fs::read(d.join("out/targets.bin")).unwrap());
}
