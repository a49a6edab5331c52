//! Bandwidth bottleneck model that turns per-iteration counters into stage
//! times.
//!
//! Aggregation on a device takes as long as its slowest resource: storage
//! reads through the device's SSD share, cache reads at hit bandwidth, or
//! shipping responses to other devices over the interconnect. The ID
//! exchange adds a fixed overhead whenever more than one device takes part.

use crate::comm::ServeCounters;
use crate::{DeviceId, Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ResourceParams {
    /// Read bandwidth of one SSD, bytes/s.
    pub ssd_read_bw: f64,
    pub num_ssds: usize,
    /// SSDs shared by all devices (true) or pinned to devices in equal groups.
    pub ssds_pooled: bool,
    /// Effective cache bandwidth on hits, bytes/s.
    pub cache_hit_bw: f64,
    /// Ceiling of the cold (miss) path through the cache, bytes/s.
    pub storage_path_bw: f64,
    /// Peer-to-peer bandwidth, bytes/s.
    pub interconnect_bw: f64,
    /// Host-to-device bandwidth used by victim prefetch, bytes/s.
    pub host_to_device_bw: f64,
    /// Seconds per iteration for the ID exchange.
    pub comm_overhead: f64,
    /// Seconds per iteration of model training.
    pub training_time: f64,
    /// Seconds per iteration charged for sampling (pre-executed, so usually 0).
    pub sample_time: f64,
    /// Seconds per resident line refreshed on an update iteration.
    pub update_cost_per_line: f64,
}

impl Default for ResourceParams {
    fn default() -> Self {
        ResourceParams {
            ssd_read_bw: 6.4e9,
            num_ssds: 2,
            ssds_pooled: true,
            cache_hit_bw: 750e9,
            storage_path_bw: 124e9,
            interconnect_bw: 270e9,
            host_to_device_bw: 32e9,
            comm_overhead: 2.5e-5,
            training_time: 2.0e-4,
            sample_time: 0.0,
            update_cost_per_line: 1.0e-10,
        }
    }
}

impl ResourceParams {
    pub fn validate(&self, num_devices: usize) -> Result<()> {
        let bws = [
            ("ssd_read_bw", self.ssd_read_bw),
            ("cache_hit_bw", self.cache_hit_bw),
            ("storage_path_bw", self.storage_path_bw),
            ("interconnect_bw", self.interconnect_bw),
            ("host_to_device_bw", self.host_to_device_bw),
        ];
        for (name, v) in bws {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(format!("{name} must be a positive bandwidth")));
            }
        }
        let times = [
            ("comm_overhead", self.comm_overhead),
            ("training_time", self.training_time),
            ("sample_time", self.sample_time),
            ("update_cost_per_line", self.update_cost_per_line),
        ];
        for (name, v) in times {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(format!("{name} must be a non-negative time")));
            }
        }
        if self.num_ssds == 0 {
            return Err(Error::config("num_ssds must be at least 1"));
        }
        if !self.ssds_pooled && !self.num_ssds.is_multiple_of(num_devices) {
            return Err(Error::config(format!(
                "{} pinned SSDs cannot be split evenly over {num_devices} devices",
                self.num_ssds
            )));
        }
        Ok(())
    }

    /// Storage bandwidth available to one device.
    pub fn ssd_share(&self, num_devices: usize) -> f64 {
        if self.ssds_pooled {
            self.ssd_read_bw * self.num_ssds as f64 / num_devices as f64
        } else {
            self.ssd_read_bw * (self.num_ssds / num_devices) as f64
        }
    }
}

/// Bytes moved by one device in one iteration.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DeviceTraffic {
    pub storage_bytes: f64,
    /// Cache and prefetch-buffer hits.
    pub hit_bytes: f64,
    /// Responses shipped to other devices.
    pub response_bytes: f64,
    /// Victim rows prefetched into this device for the next iteration.
    pub prefetch_bytes: f64,
    /// Resident lines refreshed, nonzero only on update iterations.
    pub lines_scanned: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AggregateTime {
    pub storage: f64,
    pub hit: f64,
    pub interconnect: f64,
    pub comm: f64,
}

impl AggregateTime {
    /// The slowest resource.
    pub fn bottleneck(&self) -> f64 {
        self.storage.max(self.hit).max(self.interconnect)
    }

    pub fn total(&self) -> f64 {
        self.bottleneck() + self.comm
    }
}

pub fn aggregate_time(
    traffic: &DeviceTraffic,
    params: &ResourceParams,
    num_devices: usize,
) -> AggregateTime {
    let storage_bw = params.ssd_share(num_devices).min(params.storage_path_bw);
    AggregateTime {
        storage: traffic.storage_bytes / storage_bw,
        hit: traffic.hit_bytes / params.cache_hit_bw,
        interconnect: traffic.response_bytes / params.interconnect_bw,
        comm: if num_devices > 1 { params.comm_overhead } else { 0.0 },
    }
}

/// Stage times of one device row. `t_total` is the sum of the stages.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StageTimes {
    pub t_sample: f64,
    pub t_comm: f64,
    pub t_aggregate: f64,
    pub t_train: f64,
    pub t_update: f64,
    pub t_total: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationTime {
    pub per_device: Vec<StageTimes>,
    /// Lockstep iteration time. Every phase ends at a barrier, so each phase
    /// costs as much as its slowest device.
    pub total: f64,
}

/// One CSV row: a device's counters, bytes and stage times for an iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationMetrics {
    pub iteration: u64,
    pub device: DeviceId,
    pub counters: ServeCounters,
    pub traffic: DeviceTraffic,
    pub times: StageTimes,
}

impl IterationMetrics {
    pub fn conserved(&self) -> bool {
        let c = &self.counters;
        c.cache_hits + c.prefetch_hits + c.storage_fetches == c.requests
    }
}

/// Composes the pipeline: sampling, exchange, aggregation, training
/// (stretched only if the next iteration's prefetch outlasts it) and the
/// dynamic-information refresh.
pub fn iteration_time(traffic: &[DeviceTraffic], params: &ResourceParams) -> IterationTime {
    let devices = traffic.len().max(1);
    let per_device: Vec<StageTimes> = traffic
        .iter()
        .map(|t| {
            let agg = aggregate_time(t, params, devices);
            let prefetch = t.prefetch_bytes / params.host_to_device_bw;
            let mut s = StageTimes {
                t_sample: params.sample_time,
                t_comm: agg.comm,
                t_aggregate: agg.bottleneck(),
                t_train: params.training_time.max(prefetch),
                t_update: t.lines_scanned as f64 * params.update_cost_per_line,
                t_total: 0.0,
            };
            s.t_total = s.t_sample + s.t_comm + s.t_aggregate + s.t_train + s.t_update;
            s
        })
        .collect();
    let slowest = |f: fn(&StageTimes) -> f64| per_device.iter().map(f).fold(0.0, f64::max);
    let total = slowest(|s| s.t_sample + s.t_comm + s.t_aggregate)
        + slowest(|s| s.t_train)
        + slowest(|s| s.t_update);
    IterationTime { per_device, total }
}
