//! Lockstep experiment driver.
//!
//! Per iteration `t`: advance the window, refresh dynamic information on
//! update iterations, split and exchange requests, serve every inbox,
//! assemble and verify each device's block, then stage victims for `t + 1`
//! during the training phase and price the iteration.

mod config;
mod output;

pub use config::{GraphSource, HashKind, RunConfig};
pub use output::{
    csv_text, read_csv_rows, sweep, write_csv, write_outputs, ClassCounts, CsvRow, Measured,
    PolicyAggregate, StageMeans, Summary, SweepEntry, CSV_HEADER,
};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cache::SoftwareCache;
use crate::comm::{
    assemble, exchange, serve, split_by_hash, OwnerHash, RoutedResponse, ServeContext,
    SingleOwner, StrideHash,
};
use crate::cost::{iteration_time, DeviceTraffic, IterationMetrics};
use crate::feature::row_bytes;
use crate::graph::{generate_power_law, load_edge_list, static_scores, Graph, StaticScoreTable};
use crate::pvp::{PrefetchBuffer, VictimBufferSet};
use crate::sampler::{
    MiniBatchSource, RecordingSource, ReplaySource, Sampler, SamplerConfig, WindowBuffer,
};
use crate::{DeviceId, Error, Result};

/// Graph plus its quantized static scores.
#[derive(Debug)]
pub struct Workload {
    pub graph: Graph,
    pub scores: StaticScoreTable,
}

impl Workload {
    pub fn build(cfg: &RunConfig) -> Result<Self> {
        let graph = match &cfg.graph {
            GraphSource::PowerLaw {
                num_nodes,
                edges_per_node,
                seed,
            } => generate_power_law(*num_nodes, *edges_per_node, *seed)?,
            GraphSource::EdgeList { path, num_nodes } => load_edge_list(path, *num_nodes)?,
        };
        let scores = static_scores(&graph, cfg.static_metric)?;
        Ok(Workload { graph, scores })
    }

    pub fn sampler(&self, cfg: &RunConfig) -> Result<Sampler<'_>> {
        Sampler::new(
            &self.graph,
            SamplerConfig {
                num_devices: cfg.num_devices,
                batch_size: cfg.batch_size,
                fanouts: cfg.fanouts.clone(),
                train_fraction: cfg.train_fraction,
                seed: cfg.seed,
            },
        )
    }
}

/// Hooks for tests and tools that inspect state mid-run.
pub trait RunObserver {
    /// Called right after `device`'s cache refreshed its dynamic information.
    fn after_update(
        &mut self,
        _iteration: u64,
        _device: DeviceId,
        _cache: &SoftwareCache,
        _window: &WindowBuffer,
    ) -> Result<()> {
        Ok(())
    }

    /// Called once the iteration's victims have been staged for the next one.
    fn after_iteration(&mut self, _iteration: u64, _victims: &[VictimBufferSet]) -> Result<()> {
        Ok(())
    }
}

struct NoObserver;

impl RunObserver for NoObserver {}

#[derive(Clone, Debug)]
pub struct RunOutput {
    /// One row per device per iteration, in iteration then device order.
    pub rows: Vec<IterationMetrics>,
    /// Lockstep time of each iteration.
    pub iteration_times: Vec<f64>,
    pub summary: Summary,
}

fn make_hash(cfg: &RunConfig) -> Result<Box<dyn OwnerHash>> {
    Ok(match cfg.hash {
        HashKind::Stride => Box::new(StrideHash::new(cfg.num_devices)?),
        HashKind::Single => Box::new(SingleOwner::new(cfg.num_devices)?),
    })
}

pub fn run(cfg: &RunConfig, workload: &Workload, source: &mut dyn MiniBatchSource) -> Result<RunOutput> {
    run_observed(cfg, workload, source, &mut NoObserver)
}

pub fn run_observed(
    cfg: &RunConfig,
    workload: &Workload,
    source: &mut dyn MiniBatchSource,
    observer: &mut dyn RunObserver,
) -> Result<RunOutput> {
    cfg.validate()?;
    let devices = cfg.num_devices;
    let num_nodes = workload.graph.num_nodes();
    if num_nodes != cfg.num_nodes() {
        return Err(Error::input(format!(
            "graph has {num_nodes} nodes, config says {}",
            cfg.num_nodes()
        )));
    }
    if source.num_devices() != devices {
        return Err(Error::config(format!(
            "minibatch source feeds {} devices, config has {devices}",
            source.num_devices()
        )));
    }

    let hash = make_hash(cfg)?;
    let cache_cfg = cfg.cache_config();
    let mut caches = (0..devices)
        .map(|_| SoftwareCache::new(cache_cfg.clone(), num_nodes, hash.set_stride()))
        .collect::<Result<Vec<_>>>()?;
    let mut victims = if cfg.pvp_enabled {
        (0..devices)
            .map(|_| VictimBufferSet::new(cfg.window, cfg.victim_capacity))
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    let mut prefetch: Vec<PrefetchBuffer> = (0..devices).map(PrefetchBuffer::new).collect();
    prefetch.iter_mut().for_each(|p| {
        p.begin(1);
    });
    // static-only policies never read reuse tags unless PVP needs them
    let refresh = cfg.pvp_enabled || cfg.policy.uses_window();
    let row = row_bytes(cfg.feature_dim) as f64;

    let total = cfg.total_iters();
    let mut rows = Vec::with_capacity(total as usize * devices);
    let mut iteration_times = Vec::with_capacity(total as usize);
    let mut max_victim_occupancy = 0;
    let mut window = WindowBuffer::warm_fill(cfg.window, source)?;

    for t in 1..=total {
        let consistency = |device, msg: String| Error::Consistency {
            iteration: t,
            device,
            msg,
        };
        let batches = window.advance(t, source)?;

        let mut scanned = vec![0u64; devices];
        if refresh && t % cfg.update_period == 0 {
            for (d, cache) in caches.iter_mut().enumerate() {
                scanned[d] = cache.update_dynamic_info(&window, t)?.lines_scanned;
                observer.after_update(t, d, cache, &window)?;
            }
        }

        let splits = batches.iter().map(|b| split_by_hash(b, hash.as_ref())).collect();
        let inboxes = exchange(splits);

        let mut by_origin: Vec<Vec<RoutedResponse>> = vec![Vec::new(); devices];
        let mut counters = Vec::with_capacity(devices);
        let mut sent_remote = vec![0u64; devices];
        for (d, inbox) in inboxes.iter().enumerate() {
            let mut ctx = ServeContext {
                cache: &mut caches[d],
                victims: victims.get_mut(d),
                prefetch: &mut prefetch,
                scores: &workload.scores,
            };
            let (responses, c) = serve(d, inbox, t, &mut ctx)?;
            for r in responses {
                if r.origin_device != d {
                    sent_remote[d] += 1;
                }
                by_origin[r.origin_device].push(r);
            }
            counters.push(c);
        }
        for (batch, responses) in batches.iter().zip(&by_origin) {
            assemble(batch, responses, cfg.feature_dim)?;
        }

        // training phase: stage victims for the next iteration
        for p in &mut prefetch {
            let left = p.begin(t + 1);
            if left > 0 {
                return Err(consistency(p.device(), format!("{left} prefetched rows never consumed")));
            }
        }
        let mut staged = vec![0u64; devices];
        for v in &mut victims {
            for (d, n) in v.prefetch_for_iteration(t + 1, &mut prefetch)?.into_iter().enumerate() {
                staged[d] += n;
            }
        }
        for (d, v) in victims.iter().enumerate() {
            let occ = v.max_occupancy();
            if occ > cfg.victim_capacity {
                return Err(consistency(d, format!("victim buffer holds {occ} entries")));
            }
            max_victim_occupancy = max_victim_occupancy.max(occ);
        }
        if cfg.audit {
            for (d, cache) in caches.iter().enumerate() {
                cache.check_invariants().map_err(|m| consistency(d, m))?;
            }
        }
        observer.after_iteration(t, &victims)?;

        let traffic: Vec<DeviceTraffic> = (0..devices)
            .map(|d| {
                let c = &counters[d];
                DeviceTraffic {
                    storage_bytes: c.storage_fetches as f64 * row,
                    hit_bytes: (c.cache_hits + c.prefetch_hits) as f64 * row,
                    response_bytes: sent_remote[d] as f64 * row,
                    prefetch_bytes: staged[d] as f64 * row,
                    lines_scanned: scanned[d],
                }
            })
            .collect();
        let times = iteration_time(&traffic, &cfg.resources);
        iteration_times.push(times.total);
        for (d, ((c, tr), st)) in counters
            .into_iter()
            .zip(traffic)
            .zip(times.per_device)
            .enumerate()
        {
            let m = IterationMetrics {
                iteration: t,
                device: d,
                counters: c,
                traffic: tr,
                times: st,
            };
            if !m.conserved() {
                return Err(consistency(d, "request outcomes do not add up".into()));
            }
            rows.push(m);
        }
    }

    let summary = Summary::new(cfg, &rows, &iteration_times, max_victim_occupancy);
    Ok(RunOutput {
        rows,
        iteration_times,
        summary,
    })
}

/// Written next to recorded traces so a replay can check the graph.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub num_nodes: usize,
    pub num_devices: usize,
    pub iterations: u64,
}

pub const TRACE_META_FILE: &str = "trace-meta.json";

fn trace_dir(cfg: &RunConfig) -> std::path::PathBuf {
    cfg.trace_dir
        .clone()
        .unwrap_or_else(|| cfg.output_dir.join("trace"))
}

/// Samples, runs and writes outputs.
pub fn simulate(cfg: &RunConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let workload = Workload::build(cfg)?;
    let mut sampler = workload.sampler(cfg)?;
    let out = run(cfg, &workload, &mut sampler)?;
    write_outputs(&cfg.output_dir, &out)?;
    Ok(out)
}

/// Like [`simulate`], also writing every sampled minibatch to trace files.
pub fn record(cfg: &RunConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let workload = Workload::build(cfg)?;
    let dir = trace_dir(cfg);
    let mut source = RecordingSource::create(workload.sampler(cfg)?, &dir)?;
    let out = run(cfg, &workload, &mut source)?;
    source.finish()?;
    let meta = TraceMeta {
        num_nodes: workload.graph.num_nodes(),
        num_devices: cfg.num_devices,
        iterations: cfg.total_iters() + cfg.window as u64,
    };
    let path = dir.join(TRACE_META_FILE);
    let text = serde_json::to_string_pretty(&meta).expect("trace meta serializes");
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(path, e))?;
    write_outputs(&cfg.output_dir, &out)?;
    Ok(out)
}

/// Runs from trace files instead of sampling.
pub fn replay(cfg: &RunConfig, dir: &Path) -> Result<RunOutput> {
    cfg.validate()?;
    let workload = Workload::build(cfg)?;
    let meta_path = dir.join(TRACE_META_FILE);
    if meta_path.exists() {
        let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: TraceMeta = serde_json::from_str(&text)
            .map_err(|e| Error::input(format!("{}: {e}", meta_path.display())))?;
        if meta.num_nodes != workload.graph.num_nodes() {
            return Err(Error::input(format!(
                "trace was recorded on a graph of {} nodes, this graph has {}",
                meta.num_nodes,
                workload.graph.num_nodes()
            )));
        }
        if meta.num_devices != cfg.num_devices {
            return Err(Error::input(format!(
                "trace was recorded for {} devices, config has {}",
                meta.num_devices, cfg.num_devices
            )));
        }
    }
    let mut source = ReplaySource::open(dir, cfg.num_devices, workload.graph.num_nodes())?;
    let out = run(cfg, &workload, &mut source)?;
    write_outputs(&cfg.output_dir, &out)?;
    Ok(out)
}
