//! Turning PPR score tables into co-augmented graphs.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::ScoreTable;
use crate::error::{Error, Result};
use crate::graph::SparseGraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Knn,
    EdgeMod,
}

/// Neighbor count for the KNN strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnnSize {
    /// Pick the `K` whose symmetrized graph has the edge count closest to
    /// the original's.
    Auto,
    Fixed(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionConfig {
    pub strategy: Strategy,
    pub k: KnnSize,
    pub k_add: usize,
    pub k_del: usize,
}

impl Default for ReconstructionConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Knn,
            k: KnnSize::Auto,
            k_add: 2,
            k_del: 1,
        }
    }
}

pub fn reconstruct(
    original: &SparseGraph,
    scores: &ScoreTable,
    cfg: &ReconstructionConfig,
) -> Result<SparseGraph> {
    if scores.n() != original.n() {
        return Err(Error::shape("reconstruct", original.n(), scores.n()));
    }
    match cfg.strategy {
        Strategy::Knn => {
            if scores.is_empty() {
                return Err(Error::InvalidConfig("empty PPR score table".into()));
            }
            let k = match cfg.k {
                KnnSize::Auto => auto_k(scores, original.num_edges()),
                KnnSize::Fixed(k) => k,
            };
            knn_graph(scores, k)
        }
        Strategy::EdgeMod => edge_mod_graph(original, scores, cfg.k_add, cfg.k_del),
    }
}

fn knn_pairs(scores: &ScoreTable, k: usize) -> HashSet<(usize, usize)> {
    let mut pairs = HashSet::new();
    for s in 0..scores.n() {
        for &(t, _) in scores.row(s).iter().take(k) {
            pairs.insert((s.min(t), s.max(t)));
        }
    }
    pairs
}

/// Each node keeps its top-`k` targets; the directed picks are unioned
/// into an undirected unit-weight graph.
pub fn knn_graph(scores: &ScoreTable, k: usize) -> Result<SparseGraph> {
    let short = (0..scores.n()).filter(|&s| scores.row(s).len() < k).count();
    if short > 0 {
        log::warn!(
            "{short} nodes have fewer than K = {k} PPR candidates; their picks were clipped"
        );
    }
    let mut pairs: Vec<_> = knn_pairs(scores, k).into_iter().collect();
    pairs.sort_unstable();
    SparseGraph::from_edges(scores.n(), pairs.into_iter().map(|(u, v)| (u, v, 1.0)))
}

/// The `K ≥ 1` whose KNN graph's edge count is closest to `target_edges`;
/// ties go to the smaller `K`.
pub fn auto_k(scores: &ScoreTable, target_edges: usize) -> usize {
    let max_k = (0..scores.n())
        .map(|s| scores.row(s).len())
        .max()
        .unwrap_or(0);
    let mut pairs = HashSet::new();
    let mut best = (usize::MAX, 1);
    for k in 1..=max_k.max(1) {
        for s in 0..scores.n() {
            if let Some(&(t, _)) = scores.row(s).get(k - 1) {
                pairs.insert((s.min(t), s.max(t)));
            }
        }
        let gap = pairs.len().abs_diff(target_edges);
        if gap < best.0 {
            best = (gap, k);
        }
        if pairs.len() >= target_edges {
            break;
        }
    }
    best.1
}

/// Adds each node's `k_add` best-scoring non-neighbors and removes an
/// existing edge when it is among the `k_del` lowest-scoring neighbors of
/// both endpoints. Retained edges keep their weight; added edges get
/// weight 1. No node loses more than `k_del` edges.
pub fn edge_mod_graph(
    original: &SparseGraph,
    scores: &ScoreTable,
    k_add: usize,
    k_del: usize,
) -> Result<SparseGraph> {
    let n = original.n();
    let mut add: HashSet<(usize, usize)> = HashSet::new();
    let mut short = 0usize;
    for u in 0..n {
        let picks: Vec<usize> = scores
            .row(u)
            .iter()
            .map(|e| e.0)
            .filter(|&v| v != u && !original.has_edge(u, v))
            .take(k_add)
            .collect();
        short += usize::from(picks.len() < k_add);
        for v in picks {
            add.insert((u.min(v), u.max(v)));
        }
    }
    if short > 0 && k_add > 0 {
        log::warn!("{short} nodes had fewer than k_add = {k_add} candidates");
    }

    let mut marked: Vec<HashSet<usize>> = vec![HashSet::new(); n];
    if k_del > 0 {
        for (u, marks) in marked.iter_mut().enumerate() {
            let mut nbrs: Vec<(usize, f64)> = original
                .neighbors(u)
                .map(|(v, _)| (v, scores.get(u, v)))
                .collect();
            // lowest score first; among equals the larger id goes first
            nbrs.sort_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
            marks.extend(nbrs.iter().take(k_del).map(|e| e.0));
        }
    }

    let mut edges: Vec<(usize, usize, f64)> = original
        .edges()
        .filter(|&(u, v, _)| !(marked[u].contains(&v) && marked[v].contains(&u)))
        .collect();
    edges.extend(add.into_iter().map(|(u, v)| (u, v, 1.0)));
    edges.sort_by_key(|e| (e.0, e.1));
    SparseGraph::from_edges(n, edges)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(rows: Vec<Vec<(usize, f64)>>) -> ScoreTable {
        ScoreTable::from_rows(rows, 256)
    }

    #[test]
    fn zero_modifications_is_identity() {
        let g = SparseGraph::from_edges(4, [(0, 1, 1.0), (1, 2, 2.5), (2, 3, 1.0)]).unwrap();
        let scores = table(vec![
            vec![(2, 0.3)],
            vec![(3, 0.2)],
            vec![(0, 0.1)],
            vec![(1, 0.4)],
        ]);
        let cfg = ReconstructionConfig {
            strategy: Strategy::EdgeMod,
            k: KnnSize::Auto,
            k_add: 0,
            k_del: 0,
        };
        assert_eq!(reconstruct(&g, &scores, &cfg).unwrap(), g);
    }

    #[test]
    fn knn_picks_top_target_and_symmetrizes() {
        let scores = table(vec![vec![(1, 0.5), (2, 0.1)], vec![], vec![]]);
        let g = knn_graph(&scores, 1).unwrap();
        assert!(g.has_edge(0, 1) && g.has_edge(1, 0));
        assert!(!g.has_edge(0, 2));
        assert_eq!(g.num_edges(), 1);
    }

    #[test]
    fn knn_ties_prefer_smaller_id() {
        let scores = table(vec![vec![(2, 0.5), (1, 0.5)], vec![], vec![]]);
        let g = knn_graph(&scores, 1).unwrap();
        assert!(g.has_edge(0, 1) && !g.has_edge(0, 2));
    }

    #[test]
    fn deletion_needs_both_endpoints() {
        // path 0-1-2; node 1 ranks 0 lowest, node 0 has only one neighbor
        let g = SparseGraph::from_edges(3, [(0, 1, 1.0), (1, 2, 1.0)]).unwrap();
        let scores = table(vec![vec![], vec![(2, 0.9), (0, 0.1)], vec![(1, 0.5)]]);
        let out = edge_mod_graph(&g, &scores, 0, 1).unwrap();
        assert!(!out.has_edge(0, 1));
        assert!(out.has_edge(1, 2));
    }

    #[test]
    fn addition_from_either_endpoint() {
        let g = SparseGraph::from_edges(3, [(0, 1, 1.0)]).unwrap();
        let scores = table(vec![vec![], vec![], vec![(0, 0.7)]]);
        let out = edge_mod_graph(&g, &scores, 1, 0).unwrap();
        assert!(out.has_edge(0, 2) && out.has_edge(2, 0));
    }

    #[test]
    fn auto_k_tracks_edge_count() {
        let rows: Vec<Vec<(usize, f64)>> = (0..10)
            .map(|s| {
                (0..10)
                    .filter(|&t| t != s)
                    .map(|t| (t, 1.0 / (1 + (s + 10 - t) % 10) as f64))
                    .collect()
            })
            .collect();
        let scores = table(rows);
        let k = auto_k(&scores, 10);
        let g = knn_graph(&scores, k).unwrap();
        assert!(
            g.num_edges().abs_diff(10) <= 2,
            "k={k} edges={}",
            g.num_edges()
        );
    }

    #[test]
    fn empty_table_is_an_error_for_knn() {
        let g = SparseGraph::from_edges(2, [(0, 1, 1.0)]).unwrap();
        let scores = table(vec![vec![], vec![]]);
        assert!(reconstruct(&g, &scores, &ReconstructionConfig::default()).is_err());
    }
}
