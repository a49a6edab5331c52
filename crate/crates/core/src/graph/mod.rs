//! Graphs in CSR form and per-node static importance scores.

mod csr;
mod generate;
mod scores;

pub use csr::{build_csr, load_edge_list, Graph};
pub use generate::generate_power_law;
pub use scores::{
    out_degree_scores, quantize_scores, reverse_pagerank, static_scores, PageRankParams,
    StaticMetric, StaticScoreTable,
};
