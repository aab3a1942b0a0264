//! End-to-end runs of the `rtst` binary over temp files.

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rtst"))
}

struct TempDir(PathBuf);

impl TempDir {
    fn new(tag: &str) -> Self {
        let dir = std::env::temp_dir().join(format!("rtst-cli-{tag}-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        TempDir(dir)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.0.join(name)
    }
}

impl Drop for TempDir {
    fn drop(&mut self) {
        let _ = std::fs::remove_dir_all(&self.0);
    }
}

fn run_ok(cmd: &mut Command) -> String {
    let out = cmd.output().expect("binary runs");
    assert!(
        out.status.success(),
        "command failed: {cmd:?}\nstderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn gen(dir: &TempDir, schema: &str, flows: usize, seed: u64, packets: usize, updates: usize) {
    run_ok(
        bin()
            .arg("gen")
            .args(["--schema", schema])
            .args(["--flows", &flows.to_string()])
            .args(["--seed", &seed.to_string()])
            .args(["--packets", &packets.to_string()])
            .args(["--updates", &updates.to_string()])
            .arg("--out-table")
            .arg(dir.path("t.jsonl"))
            .arg("--out-packets")
            .arg(dir.path("p.jsonl"))
            .arg("--out-updates")
            .arg(dir.path("u.jsonl")),
    );
}

fn lines(path: &Path) -> usize {
    std::fs::read_to_string(path).unwrap().lines().count()
}

#[test]
fn gen_is_deterministic_and_sized() {
    let dir = TempDir::new("gen");
    gen(&dir, "fivetuple104", 100, 7, 50, 10);
    let t1 = std::fs::read(dir.path("t.jsonl")).unwrap();
    let p1 = std::fs::read(dir.path("p.jsonl")).unwrap();
    gen(&dir, "fivetuple104", 100, 7, 50, 10);
    assert_eq!(t1, std::fs::read(dir.path("t.jsonl")).unwrap());
    assert_eq!(p1, std::fs::read(dir.path("p.jsonl")).unwrap());
    assert_eq!(lines(&dir.path("t.jsonl")), 100);
    assert_eq!(lines(&dir.path("p.jsonl")), 50);
    assert_eq!(lines(&dir.path("u.jsonl")), 10);
}

#[test]
fn plan_build_classify_pipeline() {
    let dir = TempDir::new("pipeline");
    gen(&dir, "fivetuple104", 64, 11, 40, 0);

    let plan = run_ok(
        bin()
            .arg("plan")
            .arg("--table")
            .arg(dir.path("t.jsonl"))
            .args(["--schema", "fivetuple104"]),
    );
    let plan: serde_json::Value = serde_json::from_str(&plan).unwrap();
    assert!(plan["k"].as_u64().unwrap() >= 1);

    let report = run_ok(
        bin()
            .arg("build")
            .arg("--table")
            .arg(dir.path("t.jsonl"))
            .args(["--schema", "fivetuple104"]),
    );
    let report: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert_eq!(report["data_bytes_per_flow"].as_f64().unwrap(), 13.0);

    let out = run_ok(
        bin()
            .arg("classify")
            .arg("--table")
            .arg(dir.path("t.jsonl"))
            .args(["--schema", "fivetuple104"])
            .arg("--packets")
            .arg(dir.path("p.jsonl"))
            .arg("--traces"),
    );
    assert_eq!(out.lines().count(), 40);
    let first: serde_json::Value = serde_json::from_str(out.lines().next().unwrap()).unwrap();
    assert!(first.get("per_group_traces").is_some());
}

#[test]
fn sim_report_and_replay() {
    let dir = TempDir::new("sim");
    gen(&dir, "fivetuple104", 64, 13, 400, 25);

    run_ok(
        bin()
            .arg("sim")
            .arg("--table")
            .arg(dir.path("t.jsonl"))
            .args(["--schema", "fivetuple104"])
            .arg("--packets")
            .arg(dir.path("p.jsonl"))
            .arg("--updates")
            .arg(dir.path("u.jsonl"))
            .arg("--report")
            .arg(dir.path("report.json")),
    );
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path("report.json")).unwrap()).unwrap();
    assert_eq!(report["sim"]["packets_out"].as_u64().unwrap(), 400);
    let thr = report["throughput_pkts_per_cycle"].as_f64().unwrap();
    let mpps = report["projected_mpps"].as_f64().unwrap();
    assert!((mpps - thr * 337.0).abs() < 1e-9);

    let out = run_ok(
        bin()
            .arg("replay")
            .arg("--table")
            .arg(dir.path("t.jsonl"))
            .args(["--schema", "fivetuple104"])
            .arg("--updates")
            .arg(dir.path("u.jsonl")),
    );
    assert_eq!(out.lines().count(), 25);
    for line in out.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v.get("outcome").is_some());
    }

    let dump = run_ok(
        bin()
            .arg("dump")
            .arg("--table")
            .arg(dir.path("t.jsonl"))
            .args(["--schema", "fivetuple104"]),
    );
    let dump: serde_json::Value = serde_json::from_str(&dump).unwrap();
    assert_eq!(dump["flows"].as_u64().unwrap(), 64);
}

#[test]
fn errors_are_machine_readable_json_on_stderr() {
    let out = bin()
        .arg("build")
        .args(["--table", "/nonexistent/nope.jsonl"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err: serde_json::Value =
        serde_json::from_str(String::from_utf8_lossy(&out.stderr).trim()).unwrap();
    assert!(err["error"].as_str().unwrap().contains("nope.jsonl"));
}
