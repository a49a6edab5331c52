//! Run configuration: a flat `key = value` file, every key overridable from
//! the command line.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::cache::{CacheConfig, Policy};
use crate::cost::ResourceParams;
use crate::graph::StaticMetric;
use crate::pvp::MAX_REUSE;
use crate::{Error, Result, MAX_DEVICES};

#[derive(Clone, Debug, PartialEq)]
pub enum GraphSource {
    PowerLaw {
        num_nodes: usize,
        edges_per_node: usize,
        seed: u64,
    },
    EdgeList {
        path: PathBuf,
        num_nodes: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HashKind {
    Stride,
    Single,
}

impl FromStr for HashKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stride" => Ok(HashKind::Stride),
            "single" => Ok(HashKind::Single),
            _ => Err(Error::config(format!("unknown hash `{s}` (stride|single)"))),
        }
    }
}

impl Display for HashKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            HashKind::Stride => "stride",
            HashKind::Single => "single",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub graph: GraphSource,
    pub static_metric: StaticMetric,
    pub num_devices: usize,
    pub hash: HashKind,
    /// Lines per device cache; `None` derives it from `cache_fraction`.
    pub capacity_lines: Option<usize>,
    /// Fraction of all nodes each device cache holds.
    pub cache_fraction: f64,
    pub ways: usize,
    pub policy: Policy,
    pub pvp_enabled: bool,
    pub window: usize,
    pub update_period: u64,
    /// `None` means an eighth of the window.
    pub threshold: Option<u64>,
    pub victim_capacity: usize,
    pub fanouts: Vec<usize>,
    pub batch_size: usize,
    pub train_fraction: f64,
    pub feature_dim: usize,
    pub warmup_iters: u64,
    pub measured_iters: u64,
    pub seed: u64,
    pub resources: ResourceParams,
    /// Sweep cache and victim-buffer invariants after every iteration.
    pub audit: bool,
    pub output_dir: PathBuf,
    pub trace_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            graph: GraphSource::PowerLaw {
                num_nodes: 1_000_000,
                edges_per_node: 4,
                seed: 1,
            },
            static_metric: StaticMetric::ReversePageRank,
            num_devices: 2,
            hash: HashKind::Stride,
            capacity_lines: None,
            cache_fraction: 0.05,
            ways: 32,
            policy: Policy::Hybrid,
            pvp_enabled: false,
            window: 256,
            update_period: 4,
            threshold: None,
            victim_capacity: 16_384,
            fanouts: vec![5, 2, 2, 2],
            batch_size: 64,
            train_fraction: 1.0,
            feature_dim: 256,
            warmup_iters: 200,
            measured_iters: 100,
            seed: 42,
            resources: ResourceParams::default(),
            audit: false,
            output_dir: PathBuf::from("out"),
            trace_dir: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| Error::config(format!("bad value `{value}` for {key}: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::config(format!("bad value `{value}` for {key}: expected true or false"))),
    }
}

fn parse_auto<T: FromStr>(key: &str, value: &str) -> Result<Option<T>>
where
    T::Err: Display,
{
    if value == "auto" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn auto<T: Display>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "auto".into(), |x| x.to_string())
}

/// Keys that only name output locations; they do not affect results.
const OUTPUT_KEYS: [&str; 2] = ["output_dir", "trace_dir"];

impl RunConfig {
    /// Reads a config file on top of the defaults.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = RunConfig::default();
        cfg.apply_text(&text, path)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let at = |msg: String| Error::InputAt {
                path: origin.to_path_buf(),
                line: i + 1,
                msg,
            };
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| at(format!("expected `key = value`, found `{line}`")))?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(at(format!("key `{key}` given twice")));
            }
            self.set(key, value.trim()).map_err(|e| at(e.to_string()))?;
        }
        Ok(())
    }

    /// Applies `--key value` or `--key=value` overrides.
    pub fn apply_overrides(&mut self, args: &[String]) -> Result<()> {
        let mut it = args.iter();
        while let Some(arg) = it.next() {
            let flag = arg
                .strip_prefix("--")
                .ok_or_else(|| Error::config(format!("expected --<key>, found `{arg}`")))?;
            match flag.split_once('=') {
                Some((k, v)) => self.set(k, v)?,
                None => {
                    let value = it
                        .next()
                        .ok_or_else(|| Error::config(format!("--{flag} needs a value")))?;
                    self.set(flag, value)?;
                }
            }
        }
        Ok(())
    }

    /// Sets one key. Keys use the same names in files and on the command line.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.replace('-', "_");
        let r = &mut self.resources;
        match key.as_str() {
            "graph" => {
                let n = self.num_nodes();
                self.graph = match value {
                    "powerlaw" if matches!(self.graph, GraphSource::PowerLaw { .. }) => return Ok(()),
                    "edgelist" if matches!(self.graph, GraphSource::EdgeList { .. }) => return Ok(()),
                    "powerlaw" => GraphSource::PowerLaw {
                        num_nodes: n,
                        edges_per_node: 4,
                        seed: 1,
                    },
                    "edgelist" => GraphSource::EdgeList {
                        path: PathBuf::new(),
                        num_nodes: n,
                    },
                    _ => {
                        return Err(Error::config(format!(
                            "unknown graph `{value}` (powerlaw|edgelist)"
                        )))
                    }
                }
            }
            "num_nodes" => {
                let v = parse(&key, value)?;
                match &mut self.graph {
                    GraphSource::PowerLaw { num_nodes, .. } | GraphSource::EdgeList { num_nodes, .. } => {
                        *num_nodes = v
                    }
                }
            }
            "edges_per_node" | "graph_seed" => match &mut self.graph {
                GraphSource::PowerLaw {
                    edges_per_node,
                    seed,
                    ..
                } => {
                    if key == "graph_seed" {
                        *seed = parse(&key, value)?;
                    } else {
                        *edges_per_node = parse(&key, value)?;
                    }
                }
                GraphSource::EdgeList { .. } => {
                    return Err(Error::config(format!("{key} applies only to graph = powerlaw")))
                }
            },
            "edge_list" => {
                let n = self.num_nodes();
                self.graph = GraphSource::EdgeList {
                    path: PathBuf::from(value),
                    num_nodes: n,
                };
            }
            "static_metric" => self.static_metric = value.parse()?,
            "num_devices" => self.num_devices = parse(&key, value)?,
            "hash" => self.hash = value.parse()?,
            "capacity_lines" => self.capacity_lines = parse_auto(&key, value)?,
            "cache_fraction" => self.cache_fraction = parse(&key, value)?,
            "ways" => self.ways = parse(&key, value)?,
            "policy" => self.policy = value.parse()?,
            "pvp_enabled" | "pvp" => self.pvp_enabled = parse_bool(&key, value)?,
            "window" => self.window = parse(&key, value)?,
            "update_period" => self.update_period = parse(&key, value)?,
            "threshold" => self.threshold = parse_auto(&key, value)?,
            "victim_capacity" => self.victim_capacity = parse(&key, value)?,
            "fanouts" => {
                self.fanouts = value
                    .split(',')
                    .map(|f| parse(&key, f.trim()))
                    .collect::<Result<_>>()?
            }
            "batch_size" => self.batch_size = parse(&key, value)?,
            "train_fraction" => self.train_fraction = parse(&key, value)?,
            "feature_dim" => self.feature_dim = parse(&key, value)?,
            "warmup_iters" => self.warmup_iters = parse(&key, value)?,
            "measured_iters" => self.measured_iters = parse(&key, value)?,
            "seed" => self.seed = parse(&key, value)?,
            "num_ssds" => r.num_ssds = parse(&key, value)?,
            "ssds_pooled" => r.ssds_pooled = parse_bool(&key, value)?,
            "ssd_read_bw" => r.ssd_read_bw = parse(&key, value)?,
            "cache_hit_bw" => r.cache_hit_bw = parse(&key, value)?,
            "storage_path_bw" => r.storage_path_bw = parse(&key, value)?,
            "interconnect_bw" => r.interconnect_bw = parse(&key, value)?,
            "host_to_device_bw" => r.host_to_device_bw = parse(&key, value)?,
            "comm_overhead" => r.comm_overhead = parse(&key, value)?,
            "training_time" => r.training_time = parse(&key, value)?,
            "sample_time" => r.sample_time = parse(&key, value)?,
            "update_cost_per_line" => r.update_cost_per_line = parse(&key, value)?,
            "audit" => self.audit = parse_bool(&key, value)?,
            "output_dir" => self.output_dir = PathBuf::from(value),
            "trace_dir" => self.trace_dir = Some(PathBuf::from(value)),
            _ => return Err(Error::config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    pub fn num_nodes(&self) -> usize {
        match &self.graph {
            GraphSource::PowerLaw { num_nodes, .. } | GraphSource::EdgeList { num_nodes, .. } => {
                *num_nodes
            }
        }
    }

    /// Lines per device cache, rounded down to whole sets.
    pub fn capacity(&self) -> usize {
        self.capacity_lines.unwrap_or_else(|| {
            let lines = (self.cache_fraction * self.num_nodes() as f64).floor() as usize;
            lines / self.ways.max(1) * self.ways
        })
    }

    pub fn threshold(&self) -> u64 {
        self.threshold
            .unwrap_or_else(|| CacheConfig::default_threshold(self.window))
    }

    pub fn total_iters(&self) -> u64 {
        self.warmup_iters + self.measured_iters
    }

    pub fn cache_config(&self) -> CacheConfig {
        CacheConfig {
            ways: self.ways,
            capacity_lines: self.capacity(),
            policy: self.policy,
            pvp_enabled: self.pvp_enabled,
            threshold: self.threshold(),
            update_period: self.update_period,
        }
    }

    /// Checks every module precondition before anything runs.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::config(m));
        if self.num_nodes() == 0 {
            return bad("num_nodes must be positive".into());
        }
        if let GraphSource::EdgeList { path, .. } = &self.graph {
            if path.as_os_str().is_empty() {
                return bad("graph = edgelist needs edge_list = <path>".into());
            }
        }
        if let GraphSource::PowerLaw { edges_per_node, .. } = self.graph {
            if edges_per_node == 0 {
                return bad("edges_per_node must be positive".into());
            }
        }
        if self.num_devices == 0 || self.num_devices > MAX_DEVICES {
            return bad(format!("num_devices must be in 1..={MAX_DEVICES}"));
        }
        if !(self.cache_fraction > 0.0 && self.cache_fraction <= 1.0) {
            return bad("cache_fraction must be in (0, 1]".into());
        }
        if self.ways == 0 {
            return bad("ways must be positive".into());
        }
        if self.capacity() == 0 {
            return bad("cache holds no lines; raise capacity_lines or cache_fraction".into());
        }
        self.cache_config().validate()?;
        if self.window == 0 || self.window > MAX_REUSE as usize {
            return bad(format!("window must be in 1..={MAX_REUSE}"));
        }
        if self.victim_capacity == 0 {
            return bad("victim_capacity must be positive".into());
        }
        if self.fanouts.is_empty() {
            return bad("fanouts must list at least one layer".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return bad("train_fraction must be in (0, 1]".into());
        }
        if self.feature_dim == 0 {
            return bad("feature_dim must be positive".into());
        }
        self.resources.validate(self.num_devices)
    }

    /// Every result-affecting key with its value, sorted by key.
    pub fn echo(&self) -> BTreeMap<String, String> {
        let r = &self.resources;
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        match &self.graph {
            GraphSource::PowerLaw {
                num_nodes,
                edges_per_node,
                seed,
            } => {
                put("graph", "powerlaw".into());
                put("num_nodes", num_nodes.to_string());
                put("edges_per_node", edges_per_node.to_string());
                put("graph_seed", seed.to_string());
            }
            GraphSource::EdgeList { path, num_nodes } => {
                put("graph", "edgelist".into());
                put("edge_list", path.display().to_string());
                put("num_nodes", num_nodes.to_string());
            }
        }
        put("static_metric", self.static_metric.to_string());
        put("num_devices", self.num_devices.to_string());
        put("hash", self.hash.to_string());
        put("capacity_lines", auto(&self.capacity_lines));
        put("cache_fraction", self.cache_fraction.to_string());
        put("ways", self.ways.to_string());
        put("policy", self.policy.to_string());
        put("pvp_enabled", self.pvp_enabled.to_string());
        put("window", self.window.to_string());
        put("update_period", self.update_period.to_string());
        put("threshold", auto(&self.threshold));
        put("victim_capacity", self.victim_capacity.to_string());
        put(
            "fanouts",
            self.fanouts.iter().map(|f| f.to_string()).collect::<Vec<_>>().join(","),
        );
        put("batch_size", self.batch_size.to_string());
        put("train_fraction", self.train_fraction.to_string());
        put("feature_dim", self.feature_dim.to_string());
        put("warmup_iters", self.warmup_iters.to_string());
        put("measured_iters", self.measured_iters.to_string());
        put("seed", self.seed.to_string());
        put("num_ssds", r.num_ssds.to_string());
        put("ssds_pooled", r.ssds_pooled.to_string());
        put("ssd_read_bw", r.ssd_read_bw.to_string());
        put("cache_hit_bw", r.cache_hit_bw.to_string());
        put("storage_path_bw", r.storage_path_bw.to_string());
        put("interconnect_bw", r.interconnect_bw.to_string());
        put("host_to_device_bw", r.host_to_device_bw.to_string());
        put("comm_overhead", r.comm_overhead.to_string());
        put("training_time", r.training_time.to_string());
        put("sample_time", r.sample_time.to_string());
        put("update_cost_per_line", r.update_cost_per_line.to_string());
        put("audit", self.audit.to_string());
        debug_assert!(OUTPUT_KEYS.iter().all(|k| !m.contains_key(*k)));
        m
    }

    /// `<seed>-<first 12 hex digits of the SHA-256 of the config echo>`.
    pub fn run_id(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.echo() {
            h.update(format!("{k}={v}\n").as_bytes());
        }
        let hex: String = h.finalize().iter().take(6).map(|b| format!("{b:02x}")).collect();
        format!("{}-{hex}", self.seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_desk_workload() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.num_nodes(), 1_000_000);
        assert_eq!(cfg.capacity(), 49_984);
        assert_eq!(cfg.threshold(), 32);
    }

    #[test]
    fn file_and_overrides() {
        let mut cfg = RunConfig::default();
        let text = "# desk run\nnum_nodes = 5000\n\npolicy = rr   # baseline\nfanouts = 3, 2\npvp_enabled = true\n";
        cfg.apply_text(text, Path::new("x.cfg")).unwrap();
        assert_eq!(cfg.num_nodes(), 5000);
        assert_eq!(cfg.policy, Policy::RoundRobin);
        assert_eq!(cfg.fanouts, vec![3, 2]);
        assert!(cfg.pvp_enabled);
        let args: Vec<String> = ["--policy", "hybrid", "--window=64", "--num-ssds", "4"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        cfg.apply_overrides(&args).unwrap();
        assert_eq!(cfg.policy, Policy::Hybrid);
        assert_eq!(cfg.window, 64);
        assert_eq!(cfg.resources.num_ssds, 4);
        assert_eq!(cfg.threshold(), 8);
    }

    #[test]
    fn errors_name_the_line() {
        let mut cfg = RunConfig::default();
        let err = cfg
            .apply_text("seed = 1\nwindow = lots\n", Path::new("run.cfg"))
            .unwrap_err();
        assert!(err.to_string().starts_with("run.cfg:2:"), "{err}");
        let err = cfg
            .apply_text("bogus = 1\n", Path::new("run.cfg"))
            .unwrap_err();
        assert!(err.to_string().contains("unknown config key"), "{err}");
        assert!(cfg.apply_text("a = 1\na = 2\n", Path::new("r")).is_err());
        assert!(cfg.apply_overrides(&["--window".to_string()]).is_err());
    }

    #[test]
    fn validation_rejects_bad_values() {
        let check = |k: &str, v: &str| {
            let mut cfg = RunConfig::default();
            assert!(cfg.set(k, v).and_then(|_| cfg.validate()).is_err(), "{k} = {v}");
        };
        check("window", "65535");
        check("window", "0");
        check("num_devices", "0");
        check("capacity_lines", "100"); // not a multiple of 32
        check("fanouts", "");
        check("ssd_read_bw", "0");
        check("graph", "edgelist");
        check("batch_size", "0");
        let ok = {
            let mut cfg = RunConfig::default();
            cfg.set("window", "65534").unwrap();
            cfg.validate()
        };
        assert!(ok.is_ok());
    }

    #[test]
    fn run_id_ignores_output_paths() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.set("output_dir", "/tmp/elsewhere").unwrap();
        assert_eq!(a.run_id(), b.run_id());
        b.set("policy", "static").unwrap();
        assert_ne!(a.run_id(), b.run_id());
        assert!(a.run_id().starts_with("42-"));
        assert_eq!(a.run_id().len(), "42-".len() + 12);
    }
}
