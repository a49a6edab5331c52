use crate::{Error, NodeId, Result};

use super::Graph;

/// Which per-node importance metric feeds the static score table.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StaticMetric {
    ReversePageRank,
    OutDegree,
}

impl std::str::FromStr for StaticMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "reverse_pagerank" | "pagerank" | "rpr" => Ok(StaticMetric::ReversePageRank),
            "out_degree" | "degree" => Ok(StaticMetric::OutDegree),
            _ => Err(Error::config(format!("unknown static metric {s:?}"))),
        }
    }
}

impl std::fmt::Display for StaticMetric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StaticMetric::ReversePageRank => "reverse_pagerank",
            StaticMetric::OutDegree => "out_degree",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PageRankParams {
    pub damping: f64,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for PageRankParams {
    fn default() -> Self {
        PageRankParams {
            damping: 0.85,
            max_iters: 100,
            tol: 1e-6,
        }
    }
}

/// PageRank of the edge-reversed graph by power iteration.
///
/// Reversal turns every CSR entry `v -> u` into `u -> v`, so a node's score is
/// pulled from its own CSR neighbors, each contributing its score divided by
/// its in-degree. Nodes with in-degree zero are dangling in the reversed graph
/// and their mass is spread uniformly. Iteration stops once the L1 change
/// drops below `tol` or after `max_iters` rounds.
pub fn reverse_pagerank(graph: &Graph, params: PageRankParams) -> Vec<f64> {
    let n = graph.num_nodes();
    if n == 0 {
        return Vec::new();
    }
    let d = params.damping;
    let nf = n as f64;
    let in_deg = graph.in_degrees();
    let mut rank = vec![1.0 / nf; n];
    let mut next = vec![0.0; n];
    let mut share = vec![0.0; n];

    for _ in 0..params.max_iters.max(1) {
        let mut dangling = 0.0;
        for v in 0..n {
            if in_deg[v] == 0 {
                dangling += rank[v];
                share[v] = 0.0;
            } else {
                share[v] = rank[v] / in_deg[v] as f64;
            }
        }
        let base = (1.0 - d) / nf + d * dangling / nf;
        let mut delta = 0.0;
        for v in 0..n {
            let pulled: f64 = graph
                .neighbors(v as NodeId)
                .iter()
                .map(|&u| share[u as usize])
                .sum();
            next[v] = base + d * pulled;
            delta += (next[v] - rank[v]).abs();
        }
        std::mem::swap(&mut rank, &mut next);
        if delta < params.tol {
            break;
        }
    }
    rank
}

pub fn out_degree_scores(graph: &Graph) -> Vec<f64> {
    (0..graph.num_nodes() as NodeId)
        .map(|v| graph.degree(v) as f64)
        .collect()
}

/// One-byte per-node static scores.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StaticScoreTable {
    scores: Vec<u8>,
}

impl StaticScoreTable {
    pub fn get(&self, node: NodeId) -> u8 {
        self.scores[node as usize]
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.scores
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// Rank-based quantization to `[0, 255]`.
///
/// Nodes are sorted stably by `(value, id)`; a node whose first tied
/// occurrence sits at ascending rank `r` of `N` receives `floor(256 r / N)`,
/// clamped to 255.
pub fn quantize_scores(raw: &[f64]) -> Result<StaticScoreTable> {
    if raw.is_empty() {
        return Err(Error::input("cannot quantize an empty score array"));
    }
    if let Some(i) = raw.iter().position(|x| !x.is_finite()) {
        return Err(Error::input(format!("score for node {i} is not finite ({})", raw[i])));
    }
    let n = raw.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| raw[a].total_cmp(&raw[b]).then(a.cmp(&b)));

    let mut scores = vec![0u8; n];
    let mut group_rank = 0usize;
    for (r, &v) in order.iter().enumerate() {
        if r > 0 && raw[order[r - 1]] != raw[v] {
            group_rank = r;
        }
        let q = (256 * group_rank as u128 / n as u128).min(255);
        scores[v] = q as u8;
    }
    Ok(StaticScoreTable { scores })
}

/// Computes and quantizes the chosen metric.
pub fn static_scores(graph: &Graph, metric: StaticMetric) -> Result<StaticScoreTable> {
    let raw = match metric {
        StaticMetric::ReversePageRank => reverse_pagerank(graph, PageRankParams::default()),
        StaticMetric::OutDegree => out_degree_scores(graph),
    };
    quantize_scores(&raw)
}
