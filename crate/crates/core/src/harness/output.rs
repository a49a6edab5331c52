//! Metrics files: per-iteration CSV, summary JSON and sweeps.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{run, RunConfig, RunOutput, Workload};
use crate::cost::IterationMetrics;
use crate::{Error, Result};

pub const CSV_HEADER: &str = "iter,device,requests,cache_hits,prefetch_hits,storage_fetches,victim_enqueues,victim_drops,stale_drops,t_sample,t_comm,t_aggregate,t_train,t_update,t_total";

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub no_reuse: u64,
    pub far_reuse: u64,
    pub fresh: u64,
    pub near_reuse: u64,
}

/// Per-stage means over measured iterations; each stage is the slowest
/// device's time, `t_total` is the lockstep iteration time.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageMeans {
    pub t_sample: f64,
    pub t_comm: f64,
    pub t_aggregate: f64,
    pub t_train: f64,
    pub t_update: f64,
    pub t_total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Measured {
    pub iterations: u64,
    pub requests: u64,
    pub cache_hits: u64,
    pub prefetch_hits: u64,
    pub storage_fetches: u64,
    pub remote_requests: u64,
    pub victim_enqueues: u64,
    pub victim_drops: u64,
    pub stale_drops: u64,
    pub evictions: ClassCounts,
    /// Cache plus prefetch hits over requests.
    pub hit_ratio: f64,
    pub cache_hit_ratio: f64,
    pub prefetch_hit_ratio: f64,
    pub mean_times: StageMeans,
    /// Sum of lockstep iteration times.
    pub total_time: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyAggregate {
    pub label: String,
    pub policy: String,
    pub pvp_enabled: bool,
    pub hit_ratio: Option<f64>,
    pub mean_iteration_time: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub run_id: String,
    pub config: BTreeMap<String, String>,
    pub capacity_lines: usize,
    pub threshold: u64,
    pub warmup_iters: u64,
    pub measured_iters: u64,
    /// Absent when nothing was measured.
    pub hit_ratio: Option<f64>,
    pub measured: Option<Measured>,
    pub max_victim_occupancy: usize,
    pub policies: Vec<PolicyAggregate>,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl Summary {
    pub(super) fn new(
        cfg: &RunConfig,
        rows: &[IterationMetrics],
        iteration_times: &[f64],
        max_victim_occupancy: usize,
    ) -> Self {
        let measured = (cfg.measured_iters > 0).then(|| measure(cfg, rows, iteration_times));
        let hit_ratio = measured.as_ref().map(|m| m.hit_ratio);
        Summary {
            run_id: cfg.run_id(),
            config: cfg.echo(),
            capacity_lines: cfg.capacity(),
            threshold: cfg.threshold(),
            warmup_iters: cfg.warmup_iters,
            measured_iters: cfg.measured_iters,
            hit_ratio,
            max_victim_occupancy,
            policies: vec![PolicyAggregate {
                label: format!("{}{}", cfg.policy, if cfg.pvp_enabled { "+PVP" } else { "" }),
                policy: cfg.policy.to_string(),
                pvp_enabled: cfg.pvp_enabled,
                hit_ratio,
                mean_iteration_time: measured.as_ref().map(|m| m.mean_times.t_total),
            }],
            measured,
        }
    }
}

fn measure(cfg: &RunConfig, rows: &[IterationMetrics], iteration_times: &[f64]) -> Measured {
    let warm = cfg.warmup_iters;
    let mut m = Measured {
        iterations: cfg.measured_iters,
        requests: 0,
        cache_hits: 0,
        prefetch_hits: 0,
        storage_fetches: 0,
        remote_requests: 0,
        victim_enqueues: 0,
        victim_drops: 0,
        stale_drops: 0,
        evictions: ClassCounts::default(),
        hit_ratio: 0.0,
        cache_hit_ratio: 0.0,
        prefetch_hit_ratio: 0.0,
        mean_times: StageMeans::default(),
        total_time: 0.0,
    };
    for r in rows.iter().filter(|r| r.iteration > warm) {
        let c = &r.counters;
        m.requests += c.requests;
        m.cache_hits += c.cache_hits;
        m.prefetch_hits += c.prefetch_hits;
        m.storage_fetches += c.storage_fetches;
        m.remote_requests += c.remote_requests;
        m.victim_enqueues += c.victim_enqueues;
        m.victim_drops += c.victim_drops;
        m.stale_drops += c.stale_drops;
        let [a, b, f, n] = c.evictions_by_class;
        m.evictions.no_reuse += a;
        m.evictions.far_reuse += b;
        m.evictions.fresh += f;
        m.evictions.near_reuse += n;
    }
    m.hit_ratio = ratio(m.cache_hits + m.prefetch_hits, m.requests);
    m.cache_hit_ratio = ratio(m.cache_hits, m.requests);
    m.prefetch_hit_ratio = ratio(m.prefetch_hits, m.requests);

    let n = cfg.measured_iters as f64;
    let mut means = StageMeans::default();
    for chunk in rows.chunks(cfg.num_devices).filter(|c| c[0].iteration > warm) {
        let max = |f: fn(&IterationMetrics) -> f64| chunk.iter().map(f).fold(0.0, f64::max);
        means.t_sample += max(|r| r.times.t_sample);
        means.t_comm += max(|r| r.times.t_comm);
        means.t_aggregate += max(|r| r.times.t_aggregate);
        means.t_train += max(|r| r.times.t_train);
        means.t_update += max(|r| r.times.t_update);
    }
    m.total_time = iteration_times[warm as usize..].iter().sum();
    m.mean_times = StageMeans {
        t_sample: means.t_sample / n,
        t_comm: means.t_comm / n,
        t_aggregate: means.t_aggregate / n,
        t_train: means.t_train / n,
        t_update: means.t_update / n,
        t_total: m.total_time / n,
    };
    m
}

pub fn csv_text(rows: &[IterationMetrics]) -> String {
    let mut s = String::with_capacity(64 * (rows.len() + 1));
    s.push_str(CSV_HEADER);
    s.push('\n');
    for r in rows {
        let c = &r.counters;
        let t = &r.times;
        writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.iteration,
            r.device,
            c.requests,
            c.cache_hits,
            c.prefetch_hits,
            c.storage_fetches,
            c.victim_enqueues,
            c.victim_drops,
            c.stale_drops,
            t.t_sample,
            t.t_comm,
            t.t_aggregate,
            t.t_train,
            t.t_update,
            t.t_total
        )
        .expect("writing to a String cannot fail");
    }
    s
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_csv(path: &Path, rows: &[IterationMetrics]) -> Result<()> {
    write_file(path, &csv_text(rows))
}

/// Writes `metrics.csv` and `summary.json` into `dir`.
pub fn write_outputs(dir: &Path, out: &RunOutput) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_csv(&dir.join("metrics.csv"), &out.rows)?;
    let json = serde_json::to_string_pretty(&out.summary).expect("summary serializes");
    write_file(&dir.join("summary.json"), &(json + "\n"))
}

/// A CSV data row read back for auditing.
#[derive(Clone, Debug, PartialEq)]
pub struct CsvRow {
    pub iter: u64,
    pub device: usize,
    /// requests, cache_hits, prefetch_hits, storage_fetches, victim_enqueues,
    /// victim_drops, stale_drops
    pub counts: [u64; 7],
    /// t_sample, t_comm, t_aggregate, t_train, t_update, t_total
    pub times: [f64; 6],
}

impl CsvRow {
    pub fn requests(&self) -> u64 {
        self.counts[0]
    }

    pub fn hits(&self) -> u64 {
        self.counts[1] + self.counts[2]
    }

    pub fn conserved(&self) -> bool {
        self.counts[1] + self.counts[2] + self.counts[3] == self.counts[0]
    }
}

pub fn read_csv_rows(path: &Path) -> Result<Vec<CsvRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let at = |line: usize, msg: String| Error::InputAt {
        path: path.to_path_buf(),
        line,
        msg,
    };
    if lines.next() != Some(CSV_HEADER) {
        return Err(at(1, "unexpected CSV header".into()));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 15 {
                return Err(at(i + 2, format!("expected 15 fields, found {}", f.len())));
            }
            let int = |s: &str| s.parse::<u64>().map_err(|e| at(i + 2, format!("`{s}`: {e}")));
            let float = |s: &str| s.parse::<f64>().map_err(|e| at(i + 2, format!("`{s}`: {e}")));
            let mut counts = [0; 7];
            for (c, s) in counts.iter_mut().zip(&f[2..9]) {
                *c = int(s)?;
            }
            let mut times = [0.0; 6];
            for (t, s) in times.iter_mut().zip(&f[9..]) {
                *t = float(s)?;
            }
            Ok(CsvRow {
                iter: int(f[0])?,
                device: int(f[1])? as usize,
                counts,
                times,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub key: String,
    pub value: String,
    pub summary: Summary,
}

#[derive(Serialize)]
struct SweepReport<'a> {
    vary: &'a str,
    policies: Vec<PolicyAggregate>,
    runs: Vec<(&'a str, &'a str)>,
}

const GRAPH_KEYS: [&str; 6] = [
    "graph",
    "num_nodes",
    "edges_per_node",
    "graph_seed",
    "edge_list",
    "static_metric",
];

/// Runs `base` once per value of `key`, writing each run into
/// `<output_dir>/<key>=<value>/` and the aggregates into `sweep.json`.
pub fn sweep(base: &RunConfig, key: &str, values: &[String]) -> Result<Vec<SweepEntry>> {
    if values.is_empty() {
        return Err(Error::config(format!("nothing to sweep for {key}")));
    }
    let variants = values
        .iter()
        .map(|v| {
            let mut cfg = base.clone();
            cfg.set(key, v)?;
            cfg.validate()?;
            Ok(cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    let shared = (!GRAPH_KEYS.contains(&key.replace('-', "_").as_str()))
        .then(|| Workload::build(base))
        .transpose()?;

    let mut entries = Vec::with_capacity(values.len());
    for (cfg, value) in variants.iter().zip(values) {
        let own;
        let workload = match &shared {
            Some(w) => w,
            None => {
                own = Workload::build(cfg)?;
                &own
            }
        };
        let mut sampler = workload.sampler(cfg)?;
        let out = run(cfg, workload, &mut sampler)?;
        write_outputs(&base.output_dir.join(format!("{key}={value}")), &out)?;
        entries.push(SweepEntry {
            key: key.to_string(),
            value: value.clone(),
            summary: out.summary,
        });
    }

    let report = SweepReport {
        vary: key,
        policies: entries
            .iter()
            .flat_map(|e| {
                e.summary.policies.iter().cloned().map(|mut p| {
                    p.label = format!("{key}={}", e.value);
                    p
                })
            })
            .collect(),
        runs: entries
            .iter()
            .map(|e| (e.value.as_str(), e.summary.run_id.as_str()))
            .collect(),
    };
    std::fs::create_dir_all(&base.output_dir).map_err(|e| Error::io(&base.output_dir, e))?;
    let json = serde_json::to_string_pretty(&report).expect("sweep report serializes");
    write_file(&base.output_dir.join("sweep.json"), &(json + "\n"))?;
    Ok(entries)
}
