//! Synthetic node features.
//!
//! A feature row for node `v` has element 0 equal to `v` and every other
//! element zero. Rows are carried in compact form and only expanded to dense
//! `f32` storage on request, so a 10^6-node run never holds real feature data.

use crate::NodeId;

/// Bytes per feature element (`f32`).
pub const ELEMENT_BYTES: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Feature {
    node: NodeId,
}

impl Feature {
    pub fn for_node(node: NodeId) -> Self {
        Feature { node }
    }

    /// The node this row was synthesized for, as stored in element 0.
    pub fn lead(&self) -> NodeId {
        self.node
    }

    pub fn element(&self, i: usize) -> f64 {
        if i == 0 {
            f64::from(self.node)
        } else {
            0.0
        }
    }

    /// Writes the dense row into `row`; `row.len()` is the feature dimension.
    pub fn write_dense(&self, row: &mut [f32]) {
        row.fill(0.0);
        if let Some(first) = row.first_mut() {
            *first = self.node as f32;
        }
    }
}

/// Size in bytes of one feature row of dimension `dim`.
pub fn row_bytes(dim: usize) -> u64 {
    (dim * ELEMENT_BYTES) as u64
}

/// Assembled minibatch features, one row per minibatch position.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBlock {
    dim: usize,
    rows: Vec<Feature>,
}

impl FeatureBlock {
    pub fn new(dim: usize, rows: Vec<Feature>) -> Self {
        FeatureBlock { dim, rows }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[Feature] {
        &self.rows
    }

    /// Expands the block into a row-major `len × dim` matrix.
    pub fn to_dense(&self) -> Vec<f32> {
        let mut out = vec![0.0f32; self.rows.len() * self.dim];
        if self.dim > 0 {
            for (row, feat) in out.chunks_exact_mut(self.dim).zip(&self.rows) {
                feat.write_dense(row);
            }
        }
        out
    }
}
