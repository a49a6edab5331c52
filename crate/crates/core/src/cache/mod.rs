//! Per-device set-associative software cache over node feature lines.

mod policy;

pub use policy::{select_victim, Policy, ReuseClass};

use crate::feature::Feature;
use crate::sampler::WindowBuffer;
use crate::{DeviceId, Error, NodeId, Result};

/// Future request a resident line is tagged with.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ReuseRef {
    /// Absolute iteration of the next request for this node.
    pub next_iter: u64,
    /// Device whose minibatch makes that request.
    pub device: DeviceId,
    /// Position of the node in that minibatch.
    pub batch_index: u64,
}

/// Dynamic reuse information of a line.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DynState {
    /// Not requested anywhere in the window at the last update.
    NoReuse,
    /// Inserted since the last update.
    Fresh,
    Reuse(ReuseRef),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CacheLine {
    pub tag: NodeId,
    pub static_score: u8,
    pub dyn_state: DynState,
    pub payload: Feature,
}

impl CacheLine {
    pub fn new(tag: NodeId, static_score: u8, dyn_state: DynState) -> Self {
        CacheLine {
            tag,
            static_score,
            dyn_state,
            payload: Feature::for_node(tag),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CacheConfig {
    pub ways: usize,
    pub capacity_lines: usize,
    pub policy: Policy,
    pub pvp_enabled: bool,
    /// Reuse distance at or below which a tagged line counts as near.
    pub threshold: u64,
    pub update_period: u64,
}

impl CacheConfig {
    /// Default threshold: an eighth of the window, at least 1.
    pub fn default_threshold(window: usize) -> u64 {
        (window as u64 / 8).max(1)
    }

    pub fn num_sets(&self) -> usize {
        self.capacity_lines / self.ways
    }

    pub fn validate(&self) -> Result<()> {
        if self.ways == 0 || self.capacity_lines == 0 {
            return Err(Error::config("ways and capacity_lines must be positive"));
        }
        if !self.capacity_lines.is_multiple_of(self.ways) {
            return Err(Error::config(format!(
                "capacity_lines ({}) must be divisible by ways ({})",
                self.capacity_lines, self.ways
            )));
        }
        if self.threshold == 0 {
            return Err(Error::config("threshold must be at least 1"));
        }
        if self.update_period == 0 {
            return Err(Error::config("update_period must be at least 1"));
        }
        Ok(())
    }
}

/// What an insert did to the previous occupant of the chosen way.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvictionOutcome {
    /// A free way was used.
    None,
    /// The victim is discarded.
    Dropped(CacheLine),
    /// The victim carries a reuse tag and is handed to the victim buffers.
    Victimized(CacheLine),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CacheStats {
    pub inserts: u64,
    /// Evictions indexed by [`ReuseClass::index`].
    pub evictions_by_class: [u64; 4],
    pub victimizations: u64,
    pub drops: u64,
}

/// Result of one dynamic-information refresh.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct UpdateReport {
    pub lines_scanned: u64,
    pub tagged: u64,
}

const NOT_RESIDENT: u32 = u32::MAX;

/// A W-way set-associative cache.
///
/// Node `v` lives in set `(v / set_stride) % num_sets`. A cache that only
/// ever sees nodes of one residue class mod `set_stride` (its owner stripe)
/// still spreads them over every set.
#[derive(Clone, Debug)]
pub struct SoftwareCache {
    config: CacheConfig,
    num_sets: usize,
    set_stride: u32,
    lines: Vec<Option<CacheLine>>,
    rr_cursor: Vec<u32>,
    resident: usize,
    // node -> line slot, for window scans and invariant checks
    directory: Vec<u32>,
    stats: CacheStats,
    scratch: Vec<CacheLine>,
}

impl SoftwareCache {
    pub fn new(config: CacheConfig, num_nodes: usize, set_stride: usize) -> Result<Self> {
        config.validate()?;
        if set_stride == 0 {
            return Err(Error::config("set stride must be at least 1"));
        }
        if config.capacity_lines >= NOT_RESIDENT as usize {
            return Err(Error::config("capacity_lines too large"));
        }
        let num_sets = config.num_sets();
        Ok(SoftwareCache {
            lines: vec![None; config.capacity_lines],
            rr_cursor: vec![0; num_sets],
            num_sets,
            set_stride: set_stride as u32,
            resident: 0,
            directory: vec![NOT_RESIDENT; num_nodes],
            stats: CacheStats::default(),
            scratch: Vec::with_capacity(config.ways),
            config,
        })
    }

    pub fn config(&self) -> &CacheConfig {
        &self.config
    }

    pub fn num_sets(&self) -> usize {
        self.num_sets
    }

    pub fn resident_lines(&self) -> usize {
        self.resident
    }

    pub fn stats(&self) -> &CacheStats {
        &self.stats
    }

    pub fn set_of(&self, node: NodeId) -> usize {
        ((node / self.set_stride) as usize) % self.num_sets
    }

    fn set_range(&self, set: usize) -> std::ops::Range<usize> {
        let w = self.config.ways;
        set * w..(set + 1) * w
    }

    /// Ways of one set; `None` marks a free way.
    pub fn set_lines(&self, set: usize) -> &[Option<CacheLine>] {
        &self.lines[self.set_range(set)]
    }

    /// All valid lines.
    pub fn iter(&self) -> impl Iterator<Item = &CacheLine> {
        self.lines.iter().flatten()
    }

    pub fn line(&self, node: NodeId) -> Option<&CacheLine> {
        let slot = self.find(node)?;
        self.lines[slot].as_ref()
    }

    fn find(&self, node: NodeId) -> Option<usize> {
        let range = self.set_range(self.set_of(node));
        let base = range.start;
        self.lines[range]
            .iter()
            .position(|l| matches!(l, Some(line) if line.tag == node))
            .map(|way| base + way)
    }

    /// Payload of `node` if resident. Never changes eviction state.
    pub fn lookup(&self, node: NodeId) -> Option<Feature> {
        self.find(node).and_then(|slot| self.lines[slot].map(|l| l.payload))
    }

    /// Places `node` as a fresh line, evicting a victim when the set is full.
    ///
    /// Panics if `node` is already resident.
    pub fn insert(&mut self, node: NodeId, static_score: u8, current_iter: u64) -> EvictionOutcome {
        assert!(self.find(node).is_none(), "node {node} already resident");
        let set = self.set_of(node);
        let range = self.set_range(set);
        let base = range.start;
        let new_line = CacheLine::new(node, static_score, DynState::Fresh);
        self.stats.inserts += 1;

        let set_lines = &mut self.lines[range];
        if let Some(way) = set_lines.iter().position(Option::is_none) {
            set_lines[way] = Some(new_line);
            self.directory[node as usize] = (base + way) as u32;
            self.resident += 1;
            return EvictionOutcome::None;
        }

        // full set: every way is valid
        self.scratch.clear();
        self.scratch.extend(set_lines.iter().map(|l| l.expect("full set")));
        let cursor = self.rr_cursor[set] as usize;
        let way = select_victim(
            &self.scratch,
            self.config.policy,
            self.config.threshold,
            self.config.pvp_enabled,
            current_iter,
            cursor,
        );
        if self.config.policy == Policy::RoundRobin {
            self.rr_cursor[set] = ((cursor + 1) % self.config.ways) as u32;
        }
        let victim = self.scratch[way];
        set_lines[way] = Some(new_line);
        self.directory[victim.tag as usize] = NOT_RESIDENT;
        self.directory[node as usize] = (base + way) as u32;

        let class = ReuseClass::of(&victim.dyn_state, current_iter, self.config.threshold);
        self.stats.evictions_by_class[class.index()] += 1;
        if self.config.pvp_enabled && matches!(victim.dyn_state, DynState::Reuse(_)) {
            self.stats.victimizations += 1;
            EvictionOutcome::Victimized(victim)
        } else {
            self.stats.drops += 1;
            EvictionOutcome::Dropped(victim)
        }
    }

    /// Re-tags every resident line from the window contents.
    ///
    /// A line becomes `Reuse` with the earliest window iteration requesting
    /// its node (lowest device on ties, with that device's batch position),
    /// or `NoReuse` if the window never requests it. `window` must have been
    /// advanced to `current_iter`.
    pub fn update_dynamic_info(
        &mut self,
        window: &WindowBuffer,
        current_iter: u64,
    ) -> Result<UpdateReport> {
        if window.current() != current_iter {
            return Err(Error::Consistency {
                iteration: current_iter,
                device: 0,
                msg: format!(
                    "dynamic update at iteration {current_iter} with window at {}",
                    window.current()
                ),
            });
        }
        let mut pending = self.resident;
        let report = UpdateReport {
            lines_scanned: self.resident as u64,
            tagged: 0,
        };
        // pass marker: reset to NoReuse, then tag on first sighting
        for line in self.lines.iter_mut().flatten() {
            line.dyn_state = DynState::NoReuse;
        }
        let mut tagged = vec![false; self.lines.len()];
        let directory = &self.directory;
        let lines = &mut self.lines;
        window.for_each_entry(|iteration, device, index, node| {
            let slot = directory[node as usize];
            if slot != NOT_RESIDENT && !tagged[slot as usize] {
                tagged[slot as usize] = true;
                if let Some(line) = lines[slot as usize].as_mut() {
                    line.dyn_state = DynState::Reuse(ReuseRef {
                        next_iter: iteration,
                        device,
                        batch_index: index as u64,
                    });
                }
                pending -= 1;
            }
            pending > 0
        });
        Ok(UpdateReport {
            tagged: (self.resident - pending) as u64,
            ..report
        })
    }

    /// Full sweep of the set-residency, tag-uniqueness and directory
    /// invariants.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let mut count = 0;
        for (slot, line) in self.lines.iter().enumerate() {
            let Some(line) = line else { continue };
            count += 1;
            let set = slot / self.config.ways;
            if self.set_of(line.tag) != set {
                return Err(format!("node {} found in set {set}", line.tag));
            }
            if self.directory[line.tag as usize] != slot as u32 {
                return Err(format!("directory out of sync for node {}", line.tag));
            }
            if line.payload.lead() != line.tag {
                return Err(format!("payload of node {} is corrupt", line.tag));
            }
        }
        if count != self.resident {
            return Err(format!("resident count {} != {count} valid lines", self.resident));
        }
        let indexed = self.directory.iter().filter(|&&s| s != NOT_RESIDENT).count();
        if indexed != count {
            return Err(format!("{indexed} directory entries for {count} lines"));
        }
        Ok(())
    }
}
