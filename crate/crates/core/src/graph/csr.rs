use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::{Error, NodeId, Result};

/// Immutable adjacency in compressed sparse row form.
///
/// `neighbors[offsets[v]..offsets[v + 1]]` lists the nodes `v` samples from,
/// in edge-list order and with duplicates preserved.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Graph {
    offsets: Vec<usize>,
    neighbors: Vec<NodeId>,
}

impl Graph {
    pub fn num_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn num_edges(&self) -> usize {
        self.neighbors.len()
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn neighbor_array(&self) -> &[NodeId] {
        &self.neighbors
    }

    pub fn neighbors(&self, node: NodeId) -> &[NodeId] {
        let v = node as usize;
        &self.neighbors[self.offsets[v]..self.offsets[v + 1]]
    }

    pub fn degree(&self, node: NodeId) -> usize {
        let v = node as usize;
        self.offsets[v + 1] - self.offsets[v]
    }

    /// Number of times each node appears as a neighbor.
    pub fn in_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0usize; self.num_nodes()];
        for &n in &self.neighbors {
            deg[n as usize] += 1;
        }
        deg
    }

    /// Checks the structural CSR invariants.
    pub fn validate(&self) -> Result<()> {
        if self.offsets.first() != Some(&0) {
            return Err(Error::input("offsets[0] must be 0"));
        }
        if self.offsets.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::input("offsets must be non-decreasing"));
        }
        if *self.offsets.last().unwrap() != self.neighbors.len() {
            return Err(Error::input("offsets[n] must equal the edge count"));
        }
        let n = self.num_nodes();
        if let Some(bad) = self.neighbors.iter().find(|&&v| v as usize >= n) {
            return Err(Error::input(format!("neighbor {bad} out of range for {n} nodes")));
        }
        Ok(())
    }
}

/// Builds a CSR graph from `(src, dst)` pairs, grouping each node's
/// neighbors contiguously in input order.
pub fn build_csr(edges: &[(NodeId, NodeId)], num_nodes: usize) -> Result<Graph> {
    if num_nodes > NodeId::MAX as usize {
        return Err(Error::input(format!("{num_nodes} nodes exceed the NodeId range")));
    }
    let mut counts = vec![0usize; num_nodes + 1];
    for &(src, dst) in edges {
        for id in [src, dst] {
            if id as usize >= num_nodes {
                return Err(Error::input(format!(
                    "node {id} out of range for {num_nodes} nodes"
                )));
            }
        }
        counts[src as usize + 1] += 1;
    }
    for v in 0..num_nodes {
        counts[v + 1] += counts[v];
    }
    let offsets = counts;
    let mut cursor = offsets.clone();
    let mut neighbors = vec![0 as NodeId; edges.len()];
    for &(src, dst) in edges {
        let slot = &mut cursor[src as usize];
        neighbors[*slot] = dst;
        *slot += 1;
    }
    Ok(Graph { offsets, neighbors })
}

/// Loads a whitespace-separated `src dst` edge list. Blank lines and lines
/// starting with `#` are skipped.
pub fn load_edge_list(path: impl AsRef<Path>, num_nodes: usize) -> Result<Graph> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut edges = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let lineno = i + 1;
        let at = |msg: String| Error::InputAt {
            path: path.to_path_buf(),
            line: lineno,
            msg,
        };
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut fields = trimmed.split_whitespace();
        let (Some(a), Some(b), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(at(format!("expected `src dst`, got {trimmed:?}")));
        };
        let parse = |s: &str| {
            s.parse::<NodeId>()
                .map_err(|e| at(format!("bad node id {s:?}: {e}")))
        };
        let (src, dst) = (parse(a)?, parse(b)?);
        for id in [src, dst] {
            if id as usize >= num_nodes {
                return Err(at(format!("node {id} out of range for {num_nodes} nodes")));
            }
        }
        edges.push((src, dst));
    }
    build_csr(&edges, num_nodes)
}
