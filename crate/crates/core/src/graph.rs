//! Sparse undirected attributed graphs.
//!
//! A [`Graph`] owns node features, an undirected edge set (stored with both
//! directions present), optional per-node labels and disjoint
//! train/val/test masks. [`NormalizedAdjacency`] is the symmetrically
//! normalized adjacency in compressed row form, and
//! [`NormalizedAdjacency::propagate`] computes hop-wise feature aggregation
//! so downstream consumers can precompute it once per graph.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instrument;
use crate::io;
use crate::linalg::Matrix;
use crate::par;

/// Disjoint node masks. A node may be in at most one of the three sets.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Masks {
    pub train: Vec<bool>,
    pub val: Vec<bool>,
    pub test: Vec<bool>,
}

impl Masks {
    pub fn empty(n: usize) -> Self {
        Self { train: vec![false; n], val: vec![false; n], test: vec![false; n] }
    }

    fn validate(&self, n: usize) -> Result<()> {
        if self.train.len() != n || self.val.len() != n || self.test.len() != n {
            return Err(Error::Validation("mask length differs from node count".into()));
        }
        for i in 0..n {
            let hits = self.train[i] as u8 + self.val[i] as u8 + self.test[i] as u8;
            if hits > 1 {
                return Err(Error::Validation(format!("node {i} appears in multiple masks")));
            }
        }
        Ok(())
    }

    fn restrict(&self, nodes: &[u32]) -> Masks {
        Masks {
            train: nodes.iter().map(|&v| self.train[v as usize]).collect(),
            val: nodes.iter().map(|&v| self.val[v as usize]).collect(),
            test: nodes.iter().map(|&v| self.test[v as usize]).collect(),
        }
    }
}

fn mask_ids(mask: &[bool]) -> Vec<u32> {
    mask.iter()
        .enumerate()
        .filter_map(|(i, &m)| m.then_some(i as u32))
        .collect()
}

/// Undirected attributed labeled graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    num_nodes: usize,
    feature_dim: usize,
    features: Matrix,
    /// Both directions of every undirected edge, lexicographically sorted.
    edges: Vec<(u32, u32)>,
    labels: Vec<Option<u32>>,
    masks: Masks,
}

impl Graph {
    /// Validates and symmetrizes raw parts into a graph.
    pub fn new(
        features: Matrix,
        edges: &[(u32, u32)],
        labels: Vec<Option<u32>>,
        masks: Masks,
    ) -> Result<Self> {
        let n = features.rows();
        if n == 0 {
            return Err(Error::Structure("graph needs at least one node".into()));
        }
        if labels.len() != n {
            return Err(Error::Validation("label length differs from node count".into()));
        }
        masks.validate(n)?;
        for (i, &is_train) in masks.train.iter().enumerate() {
            if is_train && labels[i].is_none() {
                return Err(Error::Validation(format!("train node {i} has no label")));
            }
        }
        let mut sym = Vec::with_capacity(edges.len() * 2);
        for &(u, v) in edges {
            if u as usize >= n || v as usize >= n {
                return Err(Error::Structure(format!(
                    "edge ({u}, {v}) out of range for {n} nodes"
                )));
            }
            if u == v {
                return Err(Error::Structure(format!("self-loop on node {u} not allowed")));
            }
            sym.push((u, v));
            sym.push((v, u));
        }
        sym.sort_unstable();
        sym.dedup();
        Ok(Self { num_nodes: n, feature_dim: features.cols(), features, edges: sym, labels, masks })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    /// Directed view of the symmetric edge set.
    pub fn edges(&self) -> &[(u32, u32)] {
        &self.edges
    }

    /// Each undirected edge once, as (min, max) pairs.
    pub fn undirected_edges(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        self.edges.iter().copied().filter(|&(u, v)| u < v)
    }

    pub fn labels(&self) -> &[Option<u32>] {
        &self.labels
    }

    pub fn label(&self, node: u32) -> Option<u32> {
        self.labels[node as usize]
    }

    pub fn masks(&self) -> &Masks {
        &self.masks
    }

    pub fn train_ids(&self) -> Vec<u32> {
        mask_ids(&self.masks.train)
    }

    pub fn val_ids(&self) -> Vec<u32> {
        mask_ids(&self.masks.val)
    }

    pub fn test_ids(&self) -> Vec<u32> {
        mask_ids(&self.masks.test)
    }

    /// Distinct labels present, ascending.
    pub fn class_set(&self) -> Vec<u32> {
        let mut classes: Vec<u32> = self.labels.iter().flatten().copied().collect();
        classes.sort_unstable();
        classes.dedup();
        classes
    }

    /// New graph on `nodes`, renumbered `0..nodes.len()` in input order,
    /// keeping only edges with both endpoints inside the set.
    pub fn induced_subgraph(&self, nodes: &[u32]) -> Result<Graph> {
        if nodes.is_empty() {
            return Err(Error::Validation("induced subgraph of empty node set".into()));
        }
        let mut local = vec![u32::MAX; self.num_nodes];
        for (new_id, &old) in nodes.iter().enumerate() {
            if old as usize >= self.num_nodes {
                return Err(Error::Structure(format!("node {old} out of range")));
            }
            if local[old as usize] != u32::MAX {
                return Err(Error::Validation(format!("duplicate node {old} in subgraph set")));
            }
            local[old as usize] = new_id as u32;
        }
        let features = self
            .features
            .gather_rows(&nodes.iter().map(|&v| v as usize).collect::<Vec<_>>());
        let kept: Vec<(u32, u32)> = self
            .undirected_edges()
            .filter_map(|(u, v)| {
                let (lu, lv) = (local[u as usize], local[v as usize]);
                (lu != u32::MAX && lv != u32::MAX).then_some((lu, lv))
            })
            .collect();
        let labels = nodes.iter().map(|&v| self.labels[v as usize]).collect();
        Graph::new(features, &kept, labels, self.masks.restrict(nodes))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_json(path, &GraphFile::from(self))
    }

    pub fn load(path: &Path) -> Result<Graph> {
        io::read_json::<GraphFile>(path)?.try_into()
    }
}

/// Symmetrically normalized adjacency in compressed row form.
///
/// Entry (u, v) holds `deg(u)^(-1/2) * deg(v)^(-1/2)`; with `self_loops`
/// the adjacency is augmented with the identity before normalization.
/// Rows of isolated nodes stay empty when self-loops are off.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency {
    num_nodes: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    values: Vec<f32>,
    self_loops: bool,
}

impl NormalizedAdjacency {
    pub fn from_graph(g: &Graph, add_self_loops: bool) -> Self {
        let n = g.num_nodes();
        let mut degree = vec![0u64; n];
        for &(u, _) in g.edges() {
            degree[u as usize] += 1;
        }
        if add_self_loops {
            for d in &mut degree {
                *d += 1;
            }
        }
        // Edge values are computed once per undirected edge and mirrored,
        // so the matrix is symmetric to the last bit.
        let inv_sqrt: Vec<f64> =
            degree.iter().map(|&d| if d == 0 { 0.0 } else { 1.0 / (d as f64).sqrt() }).collect();
        let mut row_ptr = vec![0usize; n + 1];
        for &(u, _) in g.edges() {
            row_ptr[u as usize + 1] += 1;
        }
        if add_self_loops {
            for slot in row_ptr.iter_mut().skip(1) {
                *slot += 1;
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        let nnz = row_ptr[n];
        let mut col_idx = vec![0u32; nnz];
        let mut values = vec![0.0f32; nnz];
        let mut cursor = row_ptr.clone();
        let mut push = |u: usize, v: u32, w: f32| {
            col_idx[cursor[u]] = v;
            values[cursor[u]] = w;
            cursor[u] += 1;
        };
        // g.edges() is sorted, so columns come out ascending per row; the
        // self-loop slot is inserted in order as well.
        for u in 0..n {
            let mut loop_pending = add_self_loops;
            let start = g.edges().partition_point(|&(a, _)| (a as usize) < u);
            let end = g.edges().partition_point(|&(a, _)| (a as usize) <= u);
            for &(_, v) in &g.edges()[start..end] {
                if loop_pending && (u as u32) < v {
                    push(u, u as u32, (inv_sqrt[u] * inv_sqrt[u]) as f32);
                    loop_pending = false;
                }
                push(u, v, (inv_sqrt[u] * inv_sqrt[v as usize]) as f32);
            }
            if loop_pending {
                push(u, u as u32, (inv_sqrt[u] * inv_sqrt[u]) as f32);
            }
        }
        Self { num_nodes: n, row_ptr, col_idx, values, self_loops: add_self_loops }
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn self_loops(&self) -> bool {
        self.self_loops
    }

    /// Column indices and values of row `u`.
    pub fn row(&self, u: usize) -> (&[u32], &[f32]) {
        let span = self.row_ptr[u]..self.row_ptr[u + 1];
        (&self.col_idx[span.clone()], &self.values[span])
    }

    pub fn entry(&self, u: usize, v: usize) -> f32 {
        let (cols, vals) = self.row(u);
        match cols.binary_search(&(v as u32)) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    /// `hops` successive sparse-dense products, `F = L^hops X`.
    ///
    /// Each output row accumulates in 64-bit over ascending neighbor order
    /// and rounds to 32-bit per hop, so the result is bitwise reproducible
    /// and `hops = p` equals `p` applications of `hops = 1`.
    pub fn propagate(&self, x: &Matrix, hops: usize) -> Result<PropagatedFeatures> {
        if x.rows() != self.num_nodes {
            return Err(Error::Dimension(format!(
                "propagate: {} feature rows for {} nodes",
                x.rows(),
                self.num_nodes
            )));
        }
        instrument::count_propagate();
        let mut current = x.clone();
        for _ in 0..hops {
            let mut next = Matrix::zeros(x.rows(), x.cols());
            let cols = x.cols();
            par::for_each_row_mut(next.as_mut_slice(), cols, |u, out| {
                let (nbrs, weights) = self.row(u);
                let mut acc = vec![0.0f64; cols];
                for (&v, &w) in nbrs.iter().zip(weights) {
                    let src = current.row(v as usize);
                    let wf = w as f64;
                    for (slot, val) in acc.iter_mut().zip(src) {
                        *slot += wf * *val as f64;
                    }
                }
                for (slot, val) in out.iter_mut().zip(&acc) {
                    *slot = *val as f32;
                }
            });
            current = next;
        }
        Ok(PropagatedFeatures { values: current, hops })
    }
}

/// Aggregated features `F = L^hops X`, computed once and reused.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagatedFeatures {
    values: Matrix,
    hops: usize,
}

impl PropagatedFeatures {
    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn hops(&self) -> usize {
        self.hops
    }
}

/// On-disk graph document. Features travel as a base64 blob of
/// little-endian 32-bit floats in row-major order; edges appear once per
/// undirected pair.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphFile {
    num_nodes: usize,
    feature_dim: usize,
    features_b64: String,
    edges: Vec<(u32, u32)>,
    labels: Vec<Option<u32>>,
    masks: MaskFile,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MaskFile {
    train: Vec<u32>,
    val: Vec<u32>,
    test: Vec<u32>,
}

impl From<&Graph> for GraphFile {
    fn from(g: &Graph) -> Self {
        GraphFile {
            num_nodes: g.num_nodes,
            feature_dim: g.feature_dim,
            features_b64: io::encode_f32(g.features.as_slice()),
            edges: g.undirected_edges().collect(),
            labels: g.labels.clone(),
            masks: MaskFile {
                train: g.train_ids(),
                val: g.val_ids(),
                test: g.test_ids(),
            },
        }
    }
}

impl TryFrom<GraphFile> for Graph {
    type Error = Error;

    fn try_from(f: GraphFile) -> Result<Graph> {
        let data = io::decode_f32(&f.features_b64, f.num_nodes * f.feature_dim)?;
        let features = Matrix::from_vec(f.num_nodes, f.feature_dim, data)?;
        let mut masks = Masks::empty(f.num_nodes);
        for (ids, target) in [
            (&f.masks.train, &mut masks.train),
            (&f.masks.val, &mut masks.val),
            (&f.masks.test, &mut masks.test),
        ] {
            for &id in ids {
                if id as usize >= f.num_nodes {
                    return Err(Error::Format(format!("mask id {id} out of range")));
                }
                target[id as usize] = true;
            }
        }
        Graph::new(features, &f.edges, f.labels, masks)
    }
}
