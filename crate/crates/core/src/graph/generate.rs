use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{build_csr, Graph};
use crate::{Error, NodeId, Result};

/// Barabási–Albert style preferential attachment.
///
/// Node 0 starts alone; every later node `v` attaches to `min(v, m)` distinct
/// earlier nodes chosen proportionally to their current degree. Each
/// attachment is stored in both directions, so out-degree in the CSR equals
/// total degree and inherits the heavy tail.
pub fn generate_power_law(num_nodes: usize, edges_per_node: usize, seed: u64) -> Result<Graph> {
    if edges_per_node == 0 {
        return Err(Error::input("edges_per_node must be at least 1"));
    }
    if num_nodes <= edges_per_node {
        return Err(Error::input(format!(
            "num_nodes ({num_nodes}) must exceed edges_per_node ({edges_per_node})"
        )));
    }
    if num_nodes > NodeId::MAX as usize {
        return Err(Error::input(format!("{num_nodes} nodes exceed the NodeId range")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // every edge endpoint, so a uniform pick is a degree-proportional pick
    let mut endpoints: Vec<NodeId> = Vec::with_capacity(2 * num_nodes * edges_per_node);
    let mut edges: Vec<(NodeId, NodeId)> = Vec::with_capacity(2 * num_nodes * edges_per_node);
    let mut targets: Vec<NodeId> = Vec::with_capacity(edges_per_node);

    for v in 1..num_nodes as NodeId {
        targets.clear();
        if v as usize <= edges_per_node {
            targets.extend(0..v);
        } else {
            while targets.len() < edges_per_node {
                let t = endpoints[rng.gen_range(0..endpoints.len())];
                if !targets.contains(&t) {
                    targets.push(t);
                }
            }
        }
        for &t in &targets {
            edges.push((v, t));
            edges.push((t, v));
            endpoints.push(v);
            endpoints.push(t);
        }
    }
    build_csr(&edges, num_nodes)
}
