//! Victim buffers, packed victim metadata and per-device prefetch buffers.
//!
//! Lines evicted with a reuse tag are queued on the host in the buffer of
//! their reuse iteration. While the model trains on iteration `t - 1`, the buffer
//! for `t` is drained into the prefetch buffer of the device that will make
//! the request, keyed by the request's position in that device's minibatch.
//!
//! Enqueue slots come from a per-buffer counter whose pre-increment value is
//! the slot. Under the lockstep driver only one serve phase runs at a time, so
//! a plain counter is enough; serving devices in parallel would need the
//! increment to be a fetch-and-add.

use std::collections::HashMap;

use crate::cache::{CacheLine, DynState};
use crate::comm::RoutedRequest;
use crate::feature::Feature;
use crate::{DeviceId, Error, Result, MAX_DEVICES};

/// Reuse field values at the top of the 16-bit range are reserved.
pub const REUSE_NONE: u16 = 0xFFFF;
pub const REUSE_FRESH: u16 = 0xFFFE;
/// Exclusive upper bound of an encodable reuse value and of the window size.
pub const MAX_REUSE: u32 = 0xFFFE;

const BATCH_BITS: u32 = 40;
const BATCH_MASK: u64 = (1 << BATCH_BITS) - 1;

/// 64-bit victim metadata: reuse `[63:48]`, device `[47:40]`, batch index
/// `[39:0]`. Reuse sits in the top bits so an unsigned minimum over words
/// orders by reuse first.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PackedMeta(pub u64);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MetaFields {
    pub reuse: u16,
    pub device: u8,
    pub batch_index: u64,
}

pub fn encode_meta(reuse_rel: u32, device: DeviceId, batch_index: u64) -> Result<PackedMeta> {
    if reuse_rel >= MAX_REUSE {
        return Err(Error::input(format!("reuse value {reuse_rel} does not fit below {MAX_REUSE:#x}")));
    }
    if device >= MAX_DEVICES {
        return Err(Error::input(format!("device {device} does not fit in 8 bits")));
    }
    if batch_index > BATCH_MASK {
        return Err(Error::input(format!("batch index {batch_index} does not fit in 40 bits")));
    }
    Ok(PackedMeta(
        (u64::from(reuse_rel) << 48) | ((device as u64) << BATCH_BITS) | batch_index,
    ))
}

impl PackedMeta {
    pub fn decode(self) -> MetaFields {
        MetaFields {
            reuse: (self.0 >> 48) as u16,
            device: ((self.0 >> BATCH_BITS) & 0xFF) as u8,
            batch_index: self.0 & BATCH_MASK,
        }
    }

    /// Serialized form of a line's dynamic state with a `window`-slot reuse
    /// field and the two reserved sentinels.
    pub fn from_dyn_state(state: &DynState, window: usize) -> Result<Self> {
        match state {
            DynState::NoReuse => Ok(PackedMeta(u64::from(REUSE_NONE) << 48)),
            DynState::Fresh => Ok(PackedMeta(u64::from(REUSE_FRESH) << 48)),
            DynState::Reuse(r) => encode_meta(
                reuse_slot(r.next_iter, window),
                r.device,
                r.batch_index,
            ),
        }
    }
}

/// Victim buffer index of an absolute reuse iteration.
pub fn reuse_slot(next_iter: u64, window: usize) -> u32 {
    (next_iter % window as u64) as u32
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VictimEntry {
    pub meta: PackedMeta,
    pub payload: Feature,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EnqueueOutcome {
    Accepted { buffer: usize, position: usize },
    /// Counter was already at capacity.
    Dropped,
    /// Reuse iteration is not in the future.
    Stale,
    /// Line carries no reuse tag.
    Untagged,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct VictimStats {
    pub enqueued: u64,
    pub capacity_drops: u64,
    pub stale_drops: u64,
    pub prefetched: u64,
}

#[derive(Clone, Debug, Default)]
struct VictimBuffer {
    key: Option<u64>,
    counter: u64,
    entries: Vec<VictimEntry>,
}

/// One bounded buffer per future iteration, arranged as a ring of `window`
/// buffers indexed by `reuse_iter mod window`.
///
/// Live reuse iterations always fall within the next `window` iterations, so
/// the ring never aliases two of them.
#[derive(Clone, Debug)]
pub struct VictimBufferSet {
    window: usize,
    capacity: usize,
    buffers: Vec<VictimBuffer>,
    stats: VictimStats,
}

impl VictimBufferSet {
    pub fn new(window: usize, capacity_per_buffer: usize) -> Result<Self> {
        if window == 0 || window as u32 > MAX_REUSE {
            return Err(Error::config(format!("window must be in 1..={MAX_REUSE}")));
        }
        if capacity_per_buffer == 0 {
            return Err(Error::config("victim buffer capacity must be positive"));
        }
        Ok(VictimBufferSet {
            window,
            capacity: capacity_per_buffer,
            buffers: vec![VictimBuffer::default(); window],
            stats: VictimStats::default(),
        })
    }

    pub fn capacity_per_buffer(&self) -> usize {
        self.capacity
    }

    pub fn stats(&self) -> &VictimStats {
        &self.stats
    }

    pub fn counter(&self, buffer: usize) -> u64 {
        self.buffers[buffer].counter
    }

    pub fn occupancy(&self, buffer: usize) -> usize {
        self.buffers[buffer].entries.len()
    }

    pub fn max_occupancy(&self) -> usize {
        self.buffers.iter().map(|b| b.entries.len()).max().unwrap_or(0)
    }

    pub fn total_entries(&self) -> usize {
        self.buffers.iter().map(|b| b.entries.len()).sum()
    }

    /// Entries of buffer `buffer` in slot order.
    pub fn entries(&self, buffer: usize) -> &[VictimEntry] {
        &self.buffers[buffer].entries
    }

    /// Queues an evicted line for prefetch at its reuse iteration.
    pub fn enqueue_victim(&mut self, line: &CacheLine, current_iter: u64) -> Result<EnqueueOutcome> {
        let DynState::Reuse(reuse) = line.dyn_state else {
            return Ok(EnqueueOutcome::Untagged);
        };
        if reuse.next_iter <= current_iter {
            self.stats.stale_drops += 1;
            return Ok(EnqueueOutcome::Stale);
        }
        let slot = reuse_slot(reuse.next_iter, self.window);
        let meta = encode_meta(slot, reuse.device, reuse.batch_index)?;
        let buf = &mut self.buffers[slot as usize];
        if buf.key != Some(reuse.next_iter) {
            // leftovers from an undrained older iteration are stale
            self.stats.stale_drops += buf.entries.len() as u64;
            buf.entries.clear();
            buf.counter = 0;
            buf.key = Some(reuse.next_iter);
        }
        let position = buf.counter;
        buf.counter += 1;
        if position >= self.capacity as u64 {
            self.stats.capacity_drops += 1;
            return Ok(EnqueueOutcome::Dropped);
        }
        debug_assert_eq!(position as usize, buf.entries.len());
        buf.entries.push(VictimEntry {
            meta,
            payload: line.payload,
        });
        self.stats.enqueued += 1;
        Ok(EnqueueOutcome::Accepted {
            buffer: slot as usize,
            position: position as usize,
        })
    }

    /// Drains the buffer of iteration `iteration` into the prefetch buffers
    /// of the decoded devices and resets its counter. Returns the number of
    /// entries delivered to each device.
    pub fn prefetch_for_iteration(
        &mut self,
        iteration: u64,
        targets: &mut [PrefetchBuffer],
    ) -> Result<Vec<u64>> {
        let mut delivered = vec![0u64; targets.len()];
        let slot = reuse_slot(iteration, self.window);
        let buf = &mut self.buffers[slot as usize];
        let entries = std::mem::take(&mut buf.entries);
        let key = buf.key.take();
        buf.counter = 0;
        match key {
            None => return Ok(delivered),
            Some(k) if k < iteration => {
                self.stats.stale_drops += entries.len() as u64;
                return Ok(delivered);
            }
            Some(k) if k > iteration => {
                return Err(Error::Consistency {
                    iteration,
                    device: 0,
                    msg: format!("victim buffer {slot} holds iteration {k} ahead of schedule"),
                });
            }
            Some(_) => {}
        }
        for entry in entries {
            let fields = entry.meta.decode();
            debug_assert_eq!(u32::from(fields.reuse), slot);
            let device = fields.device as usize;
            let target = targets.get_mut(device).ok_or_else(|| Error::Consistency {
                iteration,
                device,
                msg: "victim entry names a device that does not exist".into(),
            })?;
            target.install(iteration, fields.batch_index, entry.payload)?;
            delivered[device] += 1;
            self.stats.prefetched += 1;
        }
        Ok(delivered)
    }
}

/// Per-device staging area for prefetched rows of one iteration, keyed by
/// minibatch position.
#[derive(Clone, Debug, Default)]
pub struct PrefetchBuffer {
    device: DeviceId,
    iteration: u64,
    entries: HashMap<u64, Feature>,
}

impl PrefetchBuffer {
    pub fn new(device: DeviceId) -> Self {
        PrefetchBuffer {
            device,
            ..Default::default()
        }
    }

    pub fn device(&self) -> DeviceId {
        self.device
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, batch_index: u64) -> Option<&Feature> {
        self.entries.get(&batch_index)
    }

    /// Opens the buffer for `iteration`, discarding anything left over.
    /// Returns the number of discarded entries.
    pub fn begin(&mut self, iteration: u64) -> usize {
        let left = self.entries.len();
        self.entries.clear();
        self.iteration = iteration;
        left
    }

    fn install(&mut self, iteration: u64, batch_index: u64, payload: Feature) -> Result<()> {
        if iteration != self.iteration {
            return Err(Error::Consistency {
                iteration,
                device: self.device,
                msg: format!("prefetch buffer is open for iteration {}", self.iteration),
            });
        }
        // A line evicted, refetched and re-tagged before its reuse can be
        // victimized twice for the same position; the copies are identical.
        match self.entries.insert(batch_index, payload) {
            Some(prev) if prev.lead() != payload.lead() => Err(Error::Consistency {
                iteration,
                device: self.device,
                msg: format!(
                    "batch index {batch_index} prefetched for nodes {} and {}",
                    prev.lead(),
                    payload.lead()
                ),
            }),
            _ => Ok(()),
        }
    }

    /// Serves `request` from the buffer if a row was prefetched for its
    /// minibatch position. Entries are single-use.
    pub fn consume(&mut self, request: &RoutedRequest, iteration: u64) -> Result<Option<Feature>> {
        if iteration != self.iteration {
            return Ok(None);
        }
        let Some(payload) = self.entries.remove(&request.origin_index) else {
            return Ok(None);
        };
        if payload.lead() != request.node {
            return Err(Error::Consistency {
                iteration,
                device: self.device,
                msg: format!(
                    "prefetched row for index {} holds node {}, request is for node {}",
                    request.origin_index,
                    payload.lead(),
                    request.node
                ),
            });
        }
        Ok(Some(payload))
    }
}
