//! Node-attribute bipartite graph built from an enriched feature matrix.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// What to do with attribute columns that are nonzero at exactly one node.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SingletonPolicy {
    #[default]
    Drop,
    /// Multiply the single edge weight by this factor.
    DownWeight(f64),
    Keep,
}

pub const DEFAULT_DOWN_WEIGHT: f64 = 0.1;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BipartiteOptions {
    pub singleton: SingletonPolicy,
}

/// Counts of what preprocessing removed or altered.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BipartiteStats {
    pub clamped_negatives: usize,
    pub zero_columns: usize,
    pub singleton_columns: usize,
}

/// Weighted bipartite graph between nodes `V` and attributes `U`, stored
/// as two CSR views (node → attributes, attribute → nodes) over the same
/// edge set.
#[derive(Debug, Clone, PartialEq)]
pub struct BipartiteGraph {
    n_v: usize,
    n_u: usize,
    node_offsets: Vec<usize>,
    node_attrs: Vec<usize>,
    node_weights: Vec<f64>,
    attr_offsets: Vec<usize>,
    attr_nodes: Vec<usize>,
    attr_weights: Vec<f64>,
    deg_v: Vec<f64>,
    deg_u: Vec<f64>,
    column_map: Vec<usize>,
    stats: BipartiteStats,
}

impl BipartiteGraph {
    /// Builds a graph directly from `(attribute, node, weight)` triples.
    /// Zero weights are skipped; negative or non-finite weights, repeated
    /// pairs, and attributes left without any edge are errors.
    pub fn from_edges(n_v: usize, n_u: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        let mut kept: Vec<(usize, usize, f64)> = Vec::with_capacity(edges.len());
        for &(a, v, w) in edges {
            if a >= n_u {
                return Err(Error::NodeOutOfRange { id: a, n: n_u });
            }
            if v >= n_v {
                return Err(Error::NodeOutOfRange { id: v, n: n_v });
            }
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::BadWeight { u: a, v, w });
            }
            if w > 0.0 {
                kept.push((a, v, w));
            }
        }
        kept.sort_by_key(|x| (x.1, x.0));
        for p in kept.windows(2) {
            if (p[0].0, p[0].1) == (p[1].0, p[1].1) {
                return Err(Error::DuplicateEdge(p[0].0, p[0].1));
            }
        }
        let g = Self::assemble(
            n_v,
            n_u,
            &kept,
            (0..n_u).collect(),
            BipartiteStats::default(),
        );
        if let Some(a) = (0..n_u).find(|&a| g.deg_u[a] == 0.0) {
            return Err(Error::InvalidConfig(format!("attribute {a} has no edges")));
        }
        Ok(g)
    }

    /// `kept` must be sorted by `(node, attribute)`.
    fn assemble(
        n_v: usize,
        n_u: usize,
        kept: &[(usize, usize, f64)],
        column_map: Vec<usize>,
        stats: BipartiteStats,
    ) -> Self {
        let mut node_offsets = vec![0usize; n_v + 1];
        let mut attr_offsets = vec![0usize; n_u + 1];
        for &(a, v, _) in kept {
            node_offsets[v + 1] += 1;
            attr_offsets[a + 1] += 1;
        }
        for i in 0..n_v {
            node_offsets[i + 1] += node_offsets[i];
        }
        for i in 0..n_u {
            attr_offsets[i + 1] += attr_offsets[i];
        }
        let node_attrs = kept.iter().map(|e| e.0).collect();
        let node_weights: Vec<f64> = kept.iter().map(|e| e.2).collect();

        // Nodes arrive in increasing order, so each attribute's list ends
        // up sorted by node id.
        let mut fill = attr_offsets.clone();
        let mut attr_nodes = vec![0usize; kept.len()];
        let mut attr_weights = vec![0.0; kept.len()];
        for &(a, v, w) in kept {
            attr_nodes[fill[a]] = v;
            attr_weights[fill[a]] = w;
            fill[a] += 1;
        }

        let deg_v = (0..n_v)
            .map(|v| {
                node_weights[node_offsets[v]..node_offsets[v + 1]]
                    .iter()
                    .sum()
            })
            .collect();
        let deg_u = (0..n_u)
            .map(|a| {
                attr_weights[attr_offsets[a]..attr_offsets[a + 1]]
                    .iter()
                    .sum()
            })
            .collect();
        Self {
            n_v,
            n_u,
            node_offsets,
            node_attrs,
            node_weights,
            attr_offsets,
            attr_nodes,
            attr_weights,
            deg_v,
            deg_u,
            column_map,
            stats,
        }
    }

    pub fn n_v(&self) -> usize {
        self.n_v
    }

    pub fn n_u(&self) -> usize {
        self.n_u
    }

    pub fn num_edges(&self) -> usize {
        self.node_attrs.len()
    }

    pub fn node_degree(&self, v: usize) -> f64 {
        self.deg_v[v]
    }

    pub fn attr_degree(&self, a: usize) -> f64 {
        self.deg_u[a]
    }

    pub fn node_degrees(&self) -> &[f64] {
        &self.deg_v
    }

    pub fn attr_degrees(&self) -> &[f64] {
        &self.deg_u
    }

    /// `(attribute, weight)` pairs incident to node `v`, by attribute id.
    pub fn node_edges(&self, v: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.node_offsets[v]..self.node_offsets[v + 1];
        self.node_attrs[r.clone()]
            .iter()
            .copied()
            .zip(self.node_weights[r].iter().copied())
    }

    /// `(node, weight)` pairs incident to attribute `a`, by node id.
    pub fn attr_edges(&self, a: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.attr_offsets[a]..self.attr_offsets[a + 1];
        self.attr_nodes[r.clone()]
            .iter()
            .copied()
            .zip(self.attr_weights[r].iter().copied())
    }

    /// Every edge as `(attribute, node, weight)`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_v).flat_map(move |v| self.node_edges(v).map(move |(a, w)| (a, v, w)))
    }

    /// Original feature column of each retained attribute.
    pub fn column_map(&self) -> &[usize] {
        &self.column_map
    }

    pub fn stats(&self) -> BipartiteStats {
        self.stats
    }

    /// Smallest edge weight.
    pub fn min_weight(&self) -> Option<f64> {
        self.node_weights.iter().copied().reduce(f64::min)
    }
}

/// Projects `h` onto a node-attribute bipartite graph with `w(a_j, v_i) =
/// h[i][j]`. Negative entries are clamped to zero (and counted), all-zero
/// columns are removed, and single-node columns follow `opts.singleton`.
pub fn build_bipartite(h: &Matrix, opts: &BipartiteOptions) -> Result<BipartiteGraph> {
    h.check_finite("bipartite input")?;
    if let SingletonPolicy::DownWeight(f) = opts.singleton {
        if !(f.is_finite() && f > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "singleton down-weight factor must be positive, got {f}"
            )));
        }
    }
    let (n, k) = h.shape();
    let mut stats = BipartiteStats::default();
    let mut col_nnz = vec![0usize; k];
    for i in 0..n {
        for (j, &v) in h.row(i).iter().enumerate() {
            if v < 0.0 {
                stats.clamped_negatives += 1;
            } else if v > 0.0 {
                col_nnz[j] += 1;
            }
        }
    }
    if stats.clamped_negatives > 0 {
        log::warn!(
            "clamped {} negative feature entries to zero for the bipartite graph",
            stats.clamped_negatives
        );
    }

    let mut new_id = vec![usize::MAX; k];
    let mut column_map = Vec::new();
    let mut down_weight = vec![1.0; k];
    for j in 0..k {
        match col_nnz[j] {
            0 => stats.zero_columns += 1,
            1 => {
                stats.singleton_columns += 1;
                match opts.singleton {
                    SingletonPolicy::Drop => continue,
                    SingletonPolicy::DownWeight(f) => down_weight[j] = f,
                    SingletonPolicy::Keep => {}
                }
                new_id[j] = column_map.len();
                column_map.push(j);
            }
            _ => {
                new_id[j] = column_map.len();
                column_map.push(j);
            }
        }
    }
    if column_map.is_empty() {
        return Err(Error::EmptyAttributeSet);
    }

    let mut kept = Vec::new();
    for i in 0..n {
        for (j, &v) in h.row(i).iter().enumerate() {
            if v > 0.0 && new_id[j] != usize::MAX {
                kept.push((new_id[j], i, v * down_weight[j]));
            }
        }
    }
    Ok(BipartiteGraph::assemble(
        n,
        column_map.len(),
        &kept,
        column_map,
        stats,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_column_is_removed() {
        let h = Matrix::from_rows(&[[1.0, 0.0, 2.0], [3.0, 0.0, 0.5]]);
        let g = build_bipartite(&h, &BipartiteOptions::default()).unwrap();
        assert_eq!(g.n_u(), 2);
        assert_eq!(g.column_map(), &[0, 2]);
        assert_eq!(g.stats().zero_columns, 1);
    }

    #[test]
    fn singleton_column_is_dropped() {
        let h = Matrix::from_rows(&[[1.0, 4.0], [1.0, 0.0], [1.0, 0.0]]);
        let g = build_bipartite(&h, &BipartiteOptions::default()).unwrap();
        assert_eq!(g.column_map(), &[0]);
        assert_eq!(g.stats().singleton_columns, 1);
    }

    #[test]
    fn singleton_column_can_be_down_weighted() {
        let h = Matrix::from_rows(&[[1.0, 4.0], [1.0, 0.0]]);
        let opts = BipartiteOptions {
            singleton: SingletonPolicy::DownWeight(DEFAULT_DOWN_WEIGHT),
        };
        let g = build_bipartite(&h, &opts).unwrap();
        assert_eq!(g.n_u(), 2);
        let w: Vec<_> = g.node_edges(0).collect();
        assert_eq!(w, vec![(0, 1.0), (1, 4.0 * DEFAULT_DOWN_WEIGHT)]);
    }

    #[test]
    fn all_singletons_is_an_error() {
        let h = Matrix::identity(2);
        assert!(matches!(
            build_bipartite(&h, &BipartiteOptions::default()),
            Err(Error::EmptyAttributeSet)
        ));
    }

    #[test]
    fn negatives_are_clamped_and_weights_are_exact() {
        let h = Matrix::from_rows(&[[0.3, -1.0], [0.7, 2.0], [0.0, 5.0]]);
        let g = build_bipartite(&h, &BipartiteOptions::default()).unwrap();
        assert_eq!(g.stats().clamped_negatives, 1);
        let edges: Vec<_> = g.edges().collect();
        assert_eq!(
            edges,
            vec![(0, 0, 0.3), (0, 1, 0.7), (1, 1, 2.0), (1, 2, 5.0)]
        );
        assert_eq!(g.node_degree(1), 2.7);
        assert_eq!(g.attr_degree(1), 7.0);
        let back: Vec<_> = g.attr_edges(1).collect();
        assert_eq!(back, vec![(1, 2.0), (2, 5.0)]);
    }

    #[test]
    fn from_edges_validates() {
        assert!(BipartiteGraph::from_edges(1, 1, &[(0, 0, -1.0)]).is_err());
        assert!(BipartiteGraph::from_edges(1, 2, &[(0, 0, 1.0)]).is_err());
        assert!(BipartiteGraph::from_edges(1, 1, &[(0, 0, 1.0), (0, 0, 2.0)]).is_err());
        let g = BipartiteGraph::from_edges(2, 1, &[(0, 0, 1.0), (0, 1, 1.0)]).unwrap();
        assert_eq!(g.attr_degree(0), 2.0);
    }
}
