use std::collections::VecDeque;

use super::{MiniBatch, MiniBatchSource};
use crate::{DeviceId, Error, Result};

/// Pre-sampled minibatches for the next `horizon` iterations of every device.
///
/// After advancing to iteration `t` the buffer holds iterations
/// `t + 1 ..= t + horizon` for each device.
#[derive(Clone, Debug)]
pub struct WindowBuffer {
    horizon: usize,
    current: u64,
    rings: Vec<VecDeque<MiniBatch>>,
}

impl WindowBuffer {
    /// Samples iterations `1..=horizon` up front, before iteration 1 runs.
    pub fn warm_fill(horizon: usize, source: &mut dyn MiniBatchSource) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::config("window horizon must be at least 1"));
        }
        let devices = source.num_devices();
        let mut rings = vec![VecDeque::with_capacity(horizon + 1); devices];
        for it in 1..=horizon as u64 {
            for (d, ring) in rings.iter_mut().enumerate() {
                ring.push_back(source.fetch(d, it)?);
            }
        }
        Ok(WindowBuffer {
            horizon,
            current: 0,
            rings,
        })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Iteration the window was last advanced to (0 after warm fill).
    pub fn current(&self) -> u64 {
        self.current
    }

    pub fn num_devices(&self) -> usize {
        self.rings.len()
    }

    /// Pops iteration `new_iteration` for every device and samples
    /// `new_iteration + horizon` in its place. Returns the popped batches in
    /// device order.
    pub fn advance(
        &mut self,
        new_iteration: u64,
        source: &mut dyn MiniBatchSource,
    ) -> Result<Vec<MiniBatch>> {
        if new_iteration != self.current + 1 {
            return Err(Error::input(format!(
                "window at iteration {} cannot jump to {new_iteration}",
                self.current
            )));
        }
        let refill = new_iteration + self.horizon as u64;
        let mut consumed = Vec::with_capacity(self.rings.len());
        for (d, ring) in self.rings.iter_mut().enumerate() {
            let batch = ring
                .pop_front()
                .expect("window ring holds `horizon` batches");
            debug_assert_eq!(batch.iteration, new_iteration);
            consumed.push(batch);
            ring.push_back(source.fetch(d, refill)?);
        }
        self.current = new_iteration;
        Ok(consumed)
    }

    /// Batch for `(device, iteration)` if it lies inside the window.
    pub fn batch(&self, device: DeviceId, iteration: u64) -> Option<&MiniBatch> {
        if iteration <= self.current || iteration > self.current + self.horizon as u64 {
            return None;
        }
        let ring = self.rings.get(device)?;
        ring.get((iteration - self.current - 1) as usize)
    }

    /// Window iterations in ascending order.
    pub fn iterations(&self) -> std::ops::RangeInclusive<u64> {
        self.current + 1..=self.current + self.horizon as u64
    }

    /// Visits every window entry as `(iteration, device, batch_index, node)`
    /// ordered by iteration, then device, then position.
    pub fn for_each_entry(&self, mut f: impl FnMut(u64, DeviceId, usize, crate::NodeId) -> bool) {
        for slot in 0..self.horizon {
            for ring in &self.rings {
                let batch = &ring[slot];
                for (i, &node) in batch.nodes.iter().enumerate() {
                    if !f(batch.iteration, batch.device, i, node) {
                        return;
                    }
                }
            }
        }
    }

    /// Total node entries held across all devices and iterations.
    pub fn total_entries(&self) -> usize {
        self.rings
            .iter()
            .flat_map(|r| r.iter())
            .map(|b| b.nodes.len())
            .sum()
    }
}
