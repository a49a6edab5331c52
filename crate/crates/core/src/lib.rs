//! Trace-driven simulator for storage-backed multi-device GNN feature
//! aggregation.
//!
//! The pipeline mirrors what a multi-GPU trainer does every iteration:
//! neighbor sampling fills a window of future minibatches, each device's
//! node list is split by owner and exchanged, every owner serves its inbox
//! from a set-associative software cache (falling back to storage), and the
//! requester reassembles its minibatch. Evicted lines with a known future
//! reuse can be parked in host-side victim buffers and prefetched back while
//! the model trains.
//!
//! Module map:
//! - [`graph`]: CSR graphs, generators, reverse PageRank and one-byte scores.
//! - [`sampler`]: multi-hop neighbor sampling, the window buffer, traces.
//! - [`cache`]: the per-device cache and its eviction policies.
//! - [`comm`]: hash split, exchange, serve and reassembly.
//! - [`pvp`]: victim buffers, packed metadata and prefetch buffers.
//! - [`cost`]: the bandwidth bottleneck time model.
//! - [`harness`]: run configuration, lockstep driver and metric files.

pub mod cache;
pub mod comm;
pub mod cost;
mod error;
pub mod feature;
pub mod graph;
pub mod harness;
pub mod pvp;
pub mod sampler;

pub use error::{Error, Result};

/// Dense node identifier.
pub type NodeId = u32;

/// Simulated device index. Valid values are below [`MAX_DEVICES`].
pub type DeviceId = usize;

/// Device IDs travel in one byte of the victim metadata word.
pub const MAX_DEVICES: usize = 256;
