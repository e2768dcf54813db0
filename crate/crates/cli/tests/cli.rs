use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn endcloud(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_endcloud"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn short_run(cfg: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["run", "--config", path_str(cfg), "--out", path_str(out), "--set", "duration=10"];
    args.extend_from_slice(extra);
    endcloud(&args)
}

#[test]
fn run_writes_one_row_and_manifest() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("run");
    let o = short_run(&configs().join("reference.toml"), &out, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(out.join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    let m = manifest(&out);
    assert_eq!(m["command"], "run");
    assert_eq!(m["seeds"][0], 42);
    assert_eq!(m["config_sha256"].as_str().unwrap().len(), 64);
    assert!(out.join("report.json").exists());
}

#[test]
fn seed_override_is_recorded() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("run");
    let o = short_run(&configs().join("minimal.toml"), &out, &["--seed", "99"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(manifest(&out)["seeds"][0], 99);
}

#[test]
fn manifest_reproduces_outputs() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let o = short_run(&configs().join("reference.toml"), &a, &["--set", "mode=cloud_only", "--seed", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = endcloud(&["run", "--config", path_str(&a.join("manifest.json")), "--out", path_str(&b)]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["report.csv", "report.json", "manifest.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn validation_errors_name_the_field() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("bad.toml");
    let text = std::fs::read_to_string(configs().join("minimal.toml")).unwrap();
    let without_rate: String = text
        .lines()
        .filter(|l| !l.starts_with("request_rate"))
        .map(|l| format!("{l}\n"))
        .collect();
    std::fs::write(&cfg, without_rate).unwrap();
    let o = endcloud(&["run", "--config", path_str(&cfg), "--out", path_str(tmp.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("request_rate"), "{}", stderr(&o));

    let o = short_run(&configs().join("reference.toml"), tmp.path(), &["--set", "scheduler.alpha=1.5"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("scheduler.alpha"));

    let o = short_run(&configs().join("reference.toml"), tmp.path(), &["--set", "no_such_field=1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("no_such_field"));
}

#[test]
fn missing_files_are_io_errors() {
    let o = endcloud(&["run", "--config", "/definitely/not/here.toml"]);
    assert_eq!(o.status.code(), Some(3));
    let o = endcloud(&["sweep", "--matrix", "/definitely/not/here.toml"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(endcloud(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(endcloud(&["run"]).status.code(), Some(1));
    assert_eq!(endcloud(&["--help"]).status.code(), Some(0));
}

fn write_matrix(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("matrix.toml");
    let base = configs().join("reference.toml");
    std::fs::write(&path, format!("base = {:?}\n{body}", path_str(&base))).unwrap();
    path
}

const MODES_BY_RATES: &str = r#"
[[axes]]
name = "mode"
values = ["collaborative", "edge_only", "cloud_only"]

[[axes]]
name = "request_rate"
values = [10.0, 2.0, 6.0, 4.0, 8.0]

[[axes]]
name = "duration"
values = [8.0]
"#;

#[test]
fn sweep_is_sorted_and_idempotent() {
    let tmp = TempDir::new().unwrap();
    let matrix = write_matrix(tmp.path(), MODES_BY_RATES);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let o = endcloud(&["sweep", "--matrix", path_str(&matrix), "--out", path_str(&a), "--jobs", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(a.join("sweep.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 15);
    assert!(csv.starts_with("seed,duration,mode,"));
    assert!(rows[0].starts_with("42,8,cloud_only,64,4,2.000,"), "{}", rows[0]);
    assert!(rows[14].starts_with("42,8,edge_only,64,4,10.000,"), "{}", rows[14]);

    let o = endcloud(&["sweep", "--matrix", path_str(&matrix), "--out", path_str(&b), "--jobs", "1"]);
    assert!(o.status.success());
    assert_eq!(std::fs::read(a.join("sweep.csv")).unwrap(), std::fs::read(b.join("sweep.csv")).unwrap());

    let c = tmp.path().join("c");
    let o = endcloud(&["sweep", "--matrix", path_str(&a.join("manifest.json")), "--out", path_str(&c)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(std::fs::read(a.join("sweep.csv")).unwrap(), std::fs::read(c.join("sweep.csv")).unwrap());
    assert_eq!(manifest(&a), manifest(&c));
}

#[test]
fn sweep_refuses_oversized_matrix() {
    let tmp = TempDir::new().unwrap();
    let seeds: Vec<String> = (0..200).map(|s| s.to_string()).collect();
    let matrix = write_matrix(
        tmp.path(),
        &format!("seeds = [{}]\n{MODES_BY_RATES}", seeds.join(",")),
    );
    let o = endcloud(&["sweep", "--matrix", path_str(&matrix), "--out", path_str(tmp.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("3000"), "{}", stderr(&o));
}

#[test]
fn verify_filter_and_determinism() {
    let a = endcloud(&["verify", "--filter", "gate"]);
    assert!(a.status.success(), "{}", stderr(&a));
    let b = endcloud(&["verify", "--filter", "gate"]);
    assert_eq!(a.stdout, b.stdout);
    let text = String::from_utf8_lossy(&a.stdout);
    assert!(text.contains("gate_normalization") && text.contains("gate_cost"));
    assert!(!text.contains("codec_optimality"));
    assert_eq!(endcloud(&["verify", "--filter", "nothing-matches"]).status.code(), Some(1));
}

#[test]
fn verify_catches_injected_fault() {
    let o = endcloud(&["verify", "--filter", "gate_normalization", "--inject-fault", "gate-normalization"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("gate_normalization"));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL"));
}

#[test]
fn verify_writes_gap_report() {
    let tmp = TempDir::new().unwrap();
    let o = endcloud(&["verify", "--filter", "brute_force_gap", "--out", path_str(tmp.path())]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("gap_report.json")).unwrap()).unwrap();
    assert_eq!(report["instances"], 500);
    assert_eq!(report["violations"], 0);
    assert!(report["gap_p95"].as_f64().unwrap() >= report["gap_p50"].as_f64().unwrap());
}

#[test]
fn schedule_prints_decisions() {
    let o = endcloud(&["schedule", "--instance", path_str(&configs().join("instance.toml"))]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8_lossy(&o.stdout);
    let locations: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(locations, ["end", "cloud", "end"]);
}
