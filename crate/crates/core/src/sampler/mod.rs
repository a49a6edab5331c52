//! Minibatch generation by multi-hop neighbor sampling.

mod trace;
mod window;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::graph::Graph;
use crate::{DeviceId, Error, NodeId, Result};

pub use trace::{trace_file_name, MemoryTrace, RecordingSource, ReplaySource, TraceRecord};
pub use window::WindowBuffer;

/// The deduplicated node list one device aggregates in one iteration.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MiniBatch {
    pub iteration: u64,
    pub device: DeviceId,
    pub nodes: Vec<NodeId>,
}

/// Anything that can hand out the minibatch of `(device, iteration)`.
///
/// Sources are pulled in increasing iteration order per device.
pub trait MiniBatchSource {
    fn num_devices(&self) -> usize;
    fn fetch(&mut self, device: DeviceId, iteration: u64) -> Result<MiniBatch>;
}

/// Scratch state reused across sampling calls: a stamp per node replaces a
/// hash set for output deduplication.
#[derive(Debug)]
pub struct NeighborSampler {
    stamps: Vec<u32>,
    epoch: u32,
    frontier: Vec<NodeId>,
    next: Vec<NodeId>,
}

impl NeighborSampler {
    pub fn new(num_nodes: usize) -> Self {
        NeighborSampler {
            stamps: vec![0; num_nodes],
            epoch: 0,
            frontier: Vec::new(),
            next: Vec::new(),
        }
    }

    /// Layer-by-layer expansion from `seeds`.
    ///
    /// Every frontier node contributes `min(fanout, degree)` distinct neighbor
    /// positions drawn uniformly without replacement. The frontier keeps
    /// repeats; only the returned list is deduplicated, in first-encounter
    /// order starting with the seeds.
    pub fn sample(
        &mut self,
        graph: &Graph,
        seeds: &[NodeId],
        fanouts: &[usize],
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<NodeId>> {
        if graph.num_nodes() == 0 {
            return Err(Error::input("cannot sample from an empty graph"));
        }
        if seeds.is_empty() || fanouts.is_empty() {
            return Err(Error::input("seeds and fanouts must be non-empty"));
        }
        if let Some(&bad) = seeds.iter().find(|&&s| s as usize >= graph.num_nodes()) {
            return Err(Error::input(format!("seed {bad} out of range")));
        }
        if self.stamps.len() != graph.num_nodes() {
            self.stamps = vec![0; graph.num_nodes()];
            self.epoch = 0;
        }
        self.epoch = self.epoch.wrapping_add(1);
        if self.epoch == 0 {
            self.stamps.fill(0);
            self.epoch = 1;
        }
        let epoch = self.epoch;

        let mut out = Vec::with_capacity(seeds.len() * 4);
        for &s in seeds {
            if self.stamps[s as usize] != epoch {
                self.stamps[s as usize] = epoch;
                out.push(s);
            }
        }
        self.frontier.clear();
        self.frontier.extend_from_slice(seeds);
        for &fanout in fanouts {
            self.next.clear();
            for &v in &self.frontier {
                let nbrs = graph.neighbors(v);
                if nbrs.len() <= fanout {
                    self.next.extend_from_slice(nbrs);
                } else {
                    for pos in rand::seq::index::sample(rng, nbrs.len(), fanout) {
                        self.next.push(nbrs[pos]);
                    }
                }
            }
            for &u in &self.next {
                if self.stamps[u as usize] != epoch {
                    self.stamps[u as usize] = epoch;
                    out.push(u);
                }
            }
            std::mem::swap(&mut self.frontier, &mut self.next);
        }
        Ok(out)
    }
}

/// One-shot convenience wrapper around [`NeighborSampler`].
pub fn sample_neighbors(
    graph: &Graph,
    seeds: &[NodeId],
    fanouts: &[usize],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<NodeId>> {
    NeighborSampler::new(graph.num_nodes()).sample(graph, seeds, fanouts, rng)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplerConfig {
    pub num_devices: usize,
    pub batch_size: usize,
    pub fanouts: Vec<usize>,
    /// Fraction of nodes used as training seeds.
    pub train_fraction: f64,
    pub seed: u64,
}

/// Derives independent stream seeds from the run seed.
pub(crate) fn mix_seed(seed: u64, parts: &[u64]) -> u64 {
    // splitmix64 finalizer folded over the parts
    let mut h = seed ^ 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        h = h.wrapping_add(p).wrapping_add(0x9E37_79B9_7F4A_7C15);
        h = (h ^ (h >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        h = (h ^ (h >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h ^= h >> 31;
    }
    h
}

const STREAM_TRAIN_SET: u64 = 1;
const STREAM_EPOCH: u64 = 2;
const STREAM_NEIGHBORS: u64 = 3;

/// Graph-backed minibatch source.
///
/// Seeds come from a per-epoch shuffle of the training set dealt round-robin
/// to devices; each device walks its share `batch_size` seeds at a time. The
/// neighbor RNG for `(device, iteration)` is derived from the run seed alone,
/// so any minibatch can be regenerated from scratch.
#[derive(Debug)]
pub struct Sampler<'g> {
    graph: &'g Graph,
    config: SamplerConfig,
    train: Vec<NodeId>,
    iters_per_epoch: u64,
    per_device: Vec<DeviceState>,
}

#[derive(Debug)]
struct DeviceState {
    epoch: Option<u64>,
    share: Vec<NodeId>,
    scratch: NeighborSampler,
}

impl<'g> Sampler<'g> {
    pub fn new(graph: &'g Graph, config: SamplerConfig) -> Result<Self> {
        let n = graph.num_nodes();
        if n == 0 {
            return Err(Error::input("cannot sample from an empty graph"));
        }
        if config.num_devices == 0 || config.batch_size == 0 || config.fanouts.is_empty() {
            return Err(Error::config(
                "num_devices, batch_size and fanouts must be non-empty/positive",
            ));
        }
        if !(config.train_fraction > 0.0 && config.train_fraction <= 1.0) {
            return Err(Error::config("train_fraction must be in (0, 1]"));
        }
        let train_len = ((n as f64 * config.train_fraction).round() as usize).clamp(1, n);
        let mut train: Vec<NodeId> = (0..n as NodeId).collect();
        if train_len < n {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, &[STREAM_TRAIN_SET]));
            train.shuffle(&mut rng);
            train.truncate(train_len);
            train.sort_unstable();
        }
        let per_round = config.num_devices * config.batch_size;
        if train.len() < per_round {
            return Err(Error::config(format!(
                "training set of {} nodes cannot fill one round of {} devices x {} seeds",
                train.len(),
                config.num_devices,
                config.batch_size
            )));
        }
        let iters_per_epoch = (train.len() / per_round) as u64;
        let per_device = (0..config.num_devices)
            .map(|_| DeviceState {
                epoch: None,
                share: Vec::new(),
                scratch: NeighborSampler::new(n),
            })
            .collect();
        Ok(Sampler {
            graph,
            config,
            train,
            iters_per_epoch,
            per_device,
        })
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.config
    }

    pub fn training_set(&self) -> &[NodeId] {
        &self.train
    }

    pub fn iterations_per_epoch(&self) -> u64 {
        self.iters_per_epoch
    }

    /// Seeds assigned to `(device, iteration)`; iterations start at 1.
    pub fn seeds(&mut self, device: DeviceId, iteration: u64) -> Result<Vec<NodeId>> {
        if device >= self.config.num_devices {
            return Err(Error::input(format!("device {device} out of range")));
        }
        if iteration == 0 {
            return Err(Error::input("iterations are numbered from 1"));
        }
        let epoch = (iteration - 1) / self.iters_per_epoch;
        let step = ((iteration - 1) % self.iters_per_epoch) as usize;
        let devices = self.config.num_devices;
        let state = &mut self.per_device[device];
        if state.epoch != Some(epoch) {
            let mut order = self.train.clone();
            let mut rng =
                ChaCha8Rng::seed_from_u64(mix_seed(self.config.seed, &[STREAM_EPOCH, epoch]));
            order.shuffle(&mut rng);
            state.share = order.into_iter().skip(device).step_by(devices).collect();
            state.epoch = Some(epoch);
        }
        let b = self.config.batch_size;
        Ok(state.share[step * b..(step + 1) * b].to_vec())
    }

    pub fn next_minibatch(&mut self, device: DeviceId, iteration: u64) -> Result<MiniBatch> {
        let seeds = self.seeds(device, iteration)?;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(
            self.config.seed,
            &[STREAM_NEIGHBORS, device as u64, iteration],
        ));
        let graph = self.graph;
        let fanouts = &self.config.fanouts;
        let nodes = self.per_device[device]
            .scratch
            .sample(graph, &seeds, fanouts, &mut rng)?;
        Ok(MiniBatch {
            iteration,
            device,
            nodes,
        })
    }
}

impl MiniBatchSource for Sampler<'_> {
    fn num_devices(&self) -> usize {
        self.config.num_devices
    }

    fn fetch(&mut self, device: DeviceId, iteration: u64) -> Result<MiniBatch> {
        self.next_minibatch(device, iteration)
    }
}
