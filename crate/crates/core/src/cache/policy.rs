use super::{CacheLine, DynState};

/// Eviction policy of a cache instance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Policy {
    /// Per-set rotating cursor, the baseline.
    RoundRobin,
    /// Lowest static score first.
    Static,
    /// No-reuse, then fresh, then reuse-tagged lines by descending distance.
    Dynamic,
    /// Four reuse classes with static-score tie-break.
    Hybrid,
}

impl Policy {
    pub const ALL: [Policy; 4] = [
        Policy::RoundRobin,
        Policy::Static,
        Policy::Dynamic,
        Policy::Hybrid,
    ];

    /// Whether the policy reads dynamic reuse information.
    pub fn uses_window(self) -> bool {
        matches!(self, Policy::Dynamic | Policy::Hybrid)
    }
}

impl std::str::FromStr for Policy {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rr" | "roundrobin" | "round_robin" | "round-robin" => Ok(Policy::RoundRobin),
            "static" | "s" => Ok(Policy::Static),
            "dynamic" | "d" => Ok(Policy::Dynamic),
            "hybrid" | "h" => Ok(Policy::Hybrid),
            _ => Err(crate::Error::config(format!("unknown eviction policy {s:?}"))),
        }
    }
}

impl std::fmt::Display for Policy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Policy::RoundRobin => "RR",
            Policy::Static => "Static",
            Policy::Dynamic => "Dynamic",
            Policy::Hybrid => "Hybrid",
        })
    }
}

/// Reuse class of a line relative to the current iteration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ReuseClass {
    NoReuse,
    /// Tagged reuse farther away than the threshold.
    FarReuse,
    Fresh,
    /// Tagged reuse within the threshold (including stale tags).
    NearReuse,
}

impl ReuseClass {
    pub const ALL: [ReuseClass; 4] = [
        ReuseClass::NoReuse,
        ReuseClass::FarReuse,
        ReuseClass::Fresh,
        ReuseClass::NearReuse,
    ];

    pub fn of(state: &DynState, current_iter: u64, threshold: u64) -> Self {
        match state {
            DynState::NoReuse => ReuseClass::NoReuse,
            DynState::Fresh => ReuseClass::Fresh,
            DynState::Reuse(r) => {
                if reuse_distance(r.next_iter, current_iter) > threshold as i64 {
                    ReuseClass::FarReuse
                } else {
                    ReuseClass::NearReuse
                }
            }
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Position in the hybrid evictability order, 0 = evicted first.
    ///
    /// With victim buffering on, the two most evictable classes swap so that
    /// far-reuse lines leave first and can be parked for prefetch.
    pub fn hybrid_rank(self, pvp_enabled: bool) -> u8 {
        match (self, pvp_enabled) {
            (ReuseClass::NoReuse, false) => 0,
            (ReuseClass::FarReuse, false) => 1,
            (ReuseClass::FarReuse, true) => 0,
            (ReuseClass::NoReuse, true) => 1,
            (ReuseClass::Fresh, _) => 2,
            (ReuseClass::NearReuse, _) => 3,
        }
    }
}

pub(crate) fn reuse_distance(next_iter: u64, current_iter: u64) -> i64 {
    next_iter as i64 - current_iter as i64
}

/// Picks the way to evict from a full set.
///
/// `rr_cursor` is the set's round-robin cursor and only matters for
/// [`Policy::RoundRobin`]. Ties on every policy fall to the lowest way.
pub fn select_victim(
    set: &[CacheLine],
    policy: Policy,
    threshold: u64,
    pvp_enabled: bool,
    current_iter: u64,
    rr_cursor: usize,
) -> usize {
    assert!(!set.is_empty(), "select_victim on an empty set");
    match policy {
        Policy::RoundRobin => rr_cursor % set.len(),
        Policy::Static => argmin_by_key(set, |line| line.static_score),
        Policy::Hybrid => argmin_by_key(set, |line| {
            let class = ReuseClass::of(&line.dyn_state, current_iter, threshold);
            (class.hybrid_rank(pvp_enabled), line.static_score)
        }),
        Policy::Dynamic => argmin_by_key(set, |line| match &line.dyn_state {
            DynState::NoReuse => (0u8, 0i64),
            DynState::Fresh => (1, 0),
            // larger distance evicts first
            DynState::Reuse(r) => (2, -reuse_distance(r.next_iter, current_iter)),
        }),
    }
}

fn argmin_by_key<K: Ord>(set: &[CacheLine], key: impl Fn(&CacheLine) -> K) -> usize {
    set.iter()
        .enumerate()
        .min_by_key(|(way, line)| (key(line), *way))
        .map(|(way, _)| way)
        .unwrap()
}
