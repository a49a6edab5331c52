use std::path::{Path, PathBuf};
use std::process::Command;

use gnn_featcache::harness::{self, read_csv_rows, RunConfig, Summary, CSV_HEADER};
use gnn_featcache::sampler::trace_file_name;
use gnn_featcache::Error;

fn small(out: &Path) -> RunConfig {
    let mut cfg = RunConfig::default();
    for (k, v) in [
        ("num_nodes", "3000"),
        ("capacity_lines", "256"),
        ("window", "16"),
        ("batch_size", "8"),
        ("warmup_iters", "10"),
        ("measured_iters", "10"),
        ("pvp_enabled", "true"),
        ("audit", "true"),
    ] {
        cfg.set(k, v).unwrap();
    }
    cfg.output_dir = out.to_path_buf();
    cfg
}

fn summary(dir: &Path) -> Summary {
    serde_json::from_str(&std::fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_featcache"))
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("run.cfg");
    std::fs::write(&path, body).unwrap();
    path
}

const SMALL_CFG: &str = "\
# small smoke workload
num_nodes = 3000
capacity_lines = 256
window = 16
batch_size = 8
warmup_iters = 2
measured_iters = 3
";

#[test]
fn two_devices_three_iterations_give_six_rows() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.warmup_iters = 0;
    cfg.measured_iters = 3;
    harness::simulate(&cfg).unwrap();
    let text = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(text.lines().next(), Some(CSV_HEADER));
    let rows = read_csv_rows(&dir.path().join("metrics.csv")).unwrap();
    assert_eq!(rows.len(), 6);
    // barrier order: all devices of t before any row of t + 1
    let order: Vec<(u64, usize)> = rows.iter().map(|r| (r.iter, r.device)).collect();
    assert_eq!(order, vec![(1, 0), (1, 1), (2, 0), (2, 1), (3, 0), (3, 1)]);
}

#[test]
fn summary_hit_ratio_matches_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path());
    harness::simulate(&cfg).unwrap();
    let rows = read_csv_rows(&dir.path().join("metrics.csv")).unwrap();
    assert!(rows.iter().all(|r| r.conserved()));
    let measured: Vec<_> = rows.iter().filter(|r| r.iter > cfg.warmup_iters).collect();
    let hits: u64 = measured.iter().map(|r| r.hits()).sum();
    let requests: u64 = measured.iter().map(|r| r.requests()).sum();
    let s = summary(dir.path());
    assert_eq!(s.hit_ratio, Some(hits as f64 / requests as f64));
    let m = s.measured.unwrap();
    assert_eq!(m.requests, requests);
    // mean lockstep time is the mean of the slowest rows' stage sums
    assert!(m.mean_times.t_total > 0.0);
    assert_eq!(s.policies.len(), 1);
    assert_eq!(s.policies[0].label, "Hybrid+PVP");
    assert_eq!(s.run_id, cfg.run_id());
}

#[test]
fn zero_measured_iterations_report_absent_summary() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path());
    cfg.measured_iters = 0;
    let out = harness::simulate(&cfg).unwrap();
    assert_eq!(out.summary.hit_ratio, None);
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap())
            .unwrap();
    assert!(json["hit_ratio"].is_null());
    assert!(json["measured"].is_null());
}

#[test]
fn replay_reproduces_and_is_policy_independent() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace");
    let mut rec = small(&dir.path().join("rec"));
    rec.policy = "rr".parse().unwrap();
    rec.trace_dir = Some(trace.clone());
    let recorded = harness::record(&rec).unwrap();
    assert!(trace.join(trace_file_name(0)).exists());
    assert!(trace.join(trace_file_name(1)).exists());

    let mut same = rec.clone();
    same.output_dir = dir.path().join("same");
    let replayed = harness::replay(&same, &trace).unwrap();
    assert_eq!(recorded.rows, replayed.rows);
    assert_eq!(
        std::fs::read(rec.output_dir.join("metrics.csv")).unwrap(),
        std::fs::read(same.output_dir.join("metrics.csv")).unwrap()
    );

    let mut hybrid = same.clone();
    hybrid.policy = "hybrid".parse().unwrap();
    hybrid.output_dir = dir.path().join("hybrid");
    let other = harness::replay(&hybrid, &trace).unwrap();
    let requests = |o: &harness::RunOutput| -> Vec<u64> {
        o.rows.iter().map(|r| r.counters.requests).collect()
    };
    assert_eq!(requests(&recorded), requests(&other));
    let hits = |o: &harness::RunOutput| -> Vec<u64> {
        o.rows.iter().map(|r| r.counters.cache_hits + r.counters.prefetch_hits).collect()
    };
    assert_ne!(hits(&recorded), hits(&other));
}

#[test]
fn truncated_trace_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace");
    let mut rec = small(&dir.path().join("rec"));
    rec.trace_dir = Some(trace.clone());
    harness::record(&rec).unwrap();
    let path = trace.join(trace_file_name(1));
    let text = std::fs::read_to_string(&path).unwrap();
    let keep: Vec<&str> = text.lines().take(12).collect();
    std::fs::write(&path, keep.join("\n") + "\n").unwrap();
    let err = harness::replay(&small(&dir.path().join("rep")), &trace).unwrap_err();
    assert!(matches!(err, Error::InputAt { line: 13, .. }), "{err}");
    assert!(err.to_string().contains("trace-dev1.jsonl:13"), "{err}");
    assert_eq!(err.exit_code(), 1);
}

#[test]
fn replay_on_another_graph_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace");
    let mut rec = small(&dir.path().join("rec"));
    rec.trace_dir = Some(trace.clone());
    harness::record(&rec).unwrap();
    let mut bigger = small(&dir.path().join("rep"));
    bigger.set("num_nodes", "4000").unwrap();
    let err = harness::replay(&bigger, &trace).unwrap_err();
    assert!(matches!(err, Error::Input(_)), "{err}");
    let mut three = small(&dir.path().join("rep3"));
    three.num_devices = 3;
    assert!(harness::replay(&three, &trace).is_err());
}

#[test]
fn identical_runs_write_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let a = small(&dir.path().join("a"));
    let b = small(&dir.path().join("b"));
    harness::simulate(&a).unwrap();
    harness::simulate(&b).unwrap();
    for f in ["metrics.csv", "summary.json"] {
        assert_eq!(
            std::fs::read(a.output_dir.join(f)).unwrap(),
            std::fs::read(b.output_dir.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn stage_times_sum_to_row_total() {
    let dir = tempfile::tempdir().unwrap();
    let out = harness::simulate(&small(dir.path())).unwrap();
    for r in &out.rows {
        let t = &r.times;
        let sum = t.t_sample + t.t_comm + t.t_aggregate + t.t_train + t.t_update;
        assert!((sum - t.t_total).abs() <= 1e-9 * t.t_total);
    }
    assert_eq!(out.iteration_times.len(), 20);
}

#[test]
fn cli_simulate_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_CFG);
    let out = dir.path().join("out");
    let status = bin()
        .args(["simulate", "--config"])
        .arg(&cfg)
        .args(["--policy", "static", "--output_dir"])
        .arg(&out)
        .output()
        .unwrap()
        .status;
    assert!(status.success());
    let s = summary(&out);
    assert_eq!(s.config["policy"], "Static");
    assert_eq!(read_csv_rows(&out.join("metrics.csv")).unwrap().len(), 10);
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_CFG);
    let code = |args: &[&str]| {
        bin()
            .args(args)
            .current_dir(dir.path())
            .output()
            .unwrap()
            .status
            .code()
    };
    let cfg = cfg.to_str().unwrap();
    assert_eq!(code(&["simulate", "--config", cfg, "--window", "0"]), Some(1));
    assert_eq!(code(&["simulate", "--config", cfg, "--no_such_key", "1"]), Some(1));
    assert_eq!(code(&["simulate", "--config", "/nonexistent.cfg"]), Some(1));
    assert_eq!(code(&["simulate"]), Some(1));
    assert_eq!(code(&["replay", "--trace-dir", "/nonexistent", "--config", cfg]), Some(1));
    assert_eq!(code(&["--help"]), Some(0));
    let bad = write_config(dir.path(), "window = 8\nwindow = 9\n");
    assert_eq!(code(&["simulate", "--config", bad.to_str().unwrap()]), Some(1));

    let consistency = Error::Consistency {
        iteration: 3,
        device: 1,
        msg: "x".into(),
    };
    assert_eq!(consistency.exit_code(), 2);
}

#[test]
fn cli_record_then_replay() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_CFG);
    let trace = dir.path().join("trace");
    let ok = bin()
        .args(["record", "--config"])
        .arg(&cfg)
        .arg("--trace_dir")
        .arg(&trace)
        .arg("--output_dir")
        .arg(dir.path().join("rec"))
        .output()
        .unwrap()
        .status;
    assert!(ok.success());
    let ok = bin()
        .args(["replay", "--trace-dir"])
        .arg(&trace)
        .arg("--config")
        .arg(&cfg)
        .arg("--output_dir")
        .arg(dir.path().join("rep"))
        .output()
        .unwrap()
        .status;
    assert!(ok.success());
    assert_eq!(
        std::fs::read(dir.path().join("rec/metrics.csv")).unwrap(),
        std::fs::read(dir.path().join("rep/metrics.csv")).unwrap()
    );
}

#[test]
fn cli_sweep_over_policies() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL_CFG);
    let out = dir.path().join("sweep");
    let res = bin()
        .args(["sweep", "--config"])
        .arg(&cfg)
        .args(["--vary", "policy=RR,Static,Dynamic,Hybrid", "--output_dir"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    for p in ["RR", "Static", "Dynamic", "Hybrid"] {
        assert!(out.join(format!("policy={p}/metrics.csv")).exists());
    }
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("sweep.json")).unwrap()).unwrap();
    assert_eq!(report["vary"], "policy");
    assert_eq!(report["policies"].as_array().unwrap().len(), 4);
    let stdout = String::from_utf8_lossy(&res.stdout);
    assert_eq!(stdout.lines().count(), 4);
}
