//! Intra-set forward push: approximate personalized PageRank over the node
//! side of a bipartite graph.
//!
//! A push at node `v` keeps `α · r(v)` as score, sends the remaining
//! `(1 − α) · r(v)` to `v`'s attributes in proportion to edge weight, and
//! drains every touched attribute straight back onto its nodes. Residue
//! therefore never rests on the attribute side between pushes, and decay
//! is applied once per node → attribute → node round trip.
//!
//! Invariants at return: `r(v) ≤ r_max · d(v)` for every node, all score
//! and residue mass sums to one, and scores never exceed the exact values.

use std::collections::VecDeque;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::BipartiteGraph;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PprConfig {
    /// Teleport (stop) probability `α ∈ (0, 1)`.
    pub alpha: f64,
    /// Push threshold on `r(v) / d(v)`.
    pub r_max: f64,
}

impl PprConfig {
    pub fn homophilous() -> Self {
        Self {
            alpha: 0.2,
            r_max: 1e-6,
        }
    }

    pub fn heterophilic() -> Self {
        Self {
            alpha: 0.5,
            r_max: 1e-6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if !(self.r_max > 0.0 && self.r_max.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "r_max must be positive, got {}",
                self.r_max
            )));
        }
        Ok(())
    }
}

impl Default for PprConfig {
    fn default() -> Self {
        Self::homophilous()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PprResult {
    pub source: usize,
    /// Nonzero scores `π̂(v)`, sorted by node id.
    pub pi_hat: Vec<(usize, f64)>,
    /// Nonzero residues `r(v)` on the node side, sorted by node id.
    pub residue: Vec<(usize, f64)>,
    pub pushes: u64,
}

impl PprResult {
    pub fn score(&self, v: usize) -> f64 {
        lookup(&self.pi_hat, v)
    }

    pub fn residue_at(&self, v: usize) -> f64 {
        lookup(&self.residue, v)
    }

    pub fn dense_scores(&self, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        for &(v, s) in &self.pi_hat {
            out[v] = s;
        }
        out
    }

    /// `Σ π̂ + Σ r`.
    pub fn total_mass(&self) -> f64 {
        self.pi_hat.iter().map(|e| e.1).sum::<f64>() + self.residue.iter().map(|e| e.1).sum::<f64>()
    }
}

fn lookup(entries: &[(usize, f64)], v: usize) -> f64 {
    entries
        .binary_search_by_key(&v, |e| e.0)
        .map_or(0.0, |i| entries[i].1)
}

/// Upper bound on pushes from the usual accounting: every push on a node
/// with positive degree retires more than `α · r_max · d_min` mass.
pub fn push_budget(g: &BipartiteGraph, cfg: &PprConfig) -> u64 {
    let d_min = g
        .node_degrees()
        .iter()
        .copied()
        .filter(|&d| d > 0.0)
        .fold(f64::INFINITY, f64::min);
    if !d_min.is_finite() {
        return 1;
    }
    let bound = 1.0 / (cfg.alpha * cfg.r_max * d_min);
    if bound >= u64::MAX as f64 / 2.0 {
        u64::MAX / 2
    } else {
        bound.floor() as u64 + 1
    }
}

/// Reusable per-thread buffers for [`push_ppr`].
#[derive(Debug, Default)]
pub struct PushWorkspace {
    pi: Vec<f64>,
    residue: Vec<f64>,
    queued: Vec<bool>,
    seen: Vec<bool>,
    touched: Vec<usize>,
    queue: VecDeque<usize>,
}

impl PushWorkspace {
    pub fn new(n_v: usize) -> Self {
        Self {
            pi: vec![0.0; n_v],
            residue: vec![0.0; n_v],
            queued: vec![false; n_v],
            seen: vec![false; n_v],
            touched: Vec::new(),
            queue: VecDeque::new(),
        }
    }

    fn ensure(&mut self, n_v: usize) {
        if self.pi.len() != n_v {
            *self = Self::new(n_v);
        }
    }

    #[inline]
    fn touch(&mut self, v: usize) {
        if !self.seen[v] {
            self.seen[v] = true;
            self.touched.push(v);
        }
    }

    fn drain_result(&mut self, source: usize, pushes: u64) -> PprResult {
        self.touched.sort_unstable();
        let mut pi_hat = Vec::new();
        let mut residue = Vec::new();
        for &v in &self.touched {
            if self.pi[v] != 0.0 {
                pi_hat.push((v, self.pi[v]));
            }
            if self.residue[v] != 0.0 {
                residue.push((v, self.residue[v]));
            }
            self.pi[v] = 0.0;
            self.residue[v] = 0.0;
            self.seen[v] = false;
            self.queued[v] = false;
        }
        self.touched.clear();
        self.queue.clear();
        PprResult {
            source,
            pi_hat,
            residue,
            pushes,
        }
    }
}

pub fn push_ppr(g: &BipartiteGraph, source: usize, cfg: &PprConfig) -> Result<PprResult> {
    let mut ws = PushWorkspace::new(g.n_v());
    push_ppr_with(g, source, cfg, &mut ws)
}

pub fn push_ppr_with(
    g: &BipartiteGraph,
    source: usize,
    cfg: &PprConfig,
    ws: &mut PushWorkspace,
) -> Result<PprResult> {
    cfg.validate()?;
    if source >= g.n_v() {
        return Err(Error::NodeOutOfRange {
            id: source,
            n: g.n_v(),
        });
    }
    ws.ensure(g.n_v());
    let deg_v = g.node_degrees();
    let deg_u = g.attr_degrees();
    let budget = push_budget(g, cfg);
    let mut pushes = 0u64;

    ws.residue[source] = 1.0;
    ws.touch(source);
    ws.queue.push_back(source);
    ws.queued[source] = true;

    while let Some(v) = ws.queue.pop_front() {
        ws.queued[v] = false;
        let r = ws.residue[v];
        if !(r > cfg.r_max * deg_v[v]) {
            continue;
        }
        pushes += 1;
        if pushes > budget {
            ws.drain_result(source, pushes);
            return Err(Error::PushBudget(budget));
        }
        ws.residue[v] = 0.0;
        if deg_v[v] == 0.0 {
            // No attributes: the walk can only stop here.
            ws.pi[v] += r;
            continue;
        }
        ws.pi[v] += cfg.alpha * r;
        // Spreading to an attribute and draining it are fused: attribute
        // residue is zero before every push, so the amount drained from `a`
        // equals the amount just sent to it.
        for (a, w_va) in g.node_edges(v) {
            let r_a = (1.0 - cfg.alpha) * w_va / deg_v[v] * r;
            for (vi, w_ia) in g.attr_edges(a) {
                ws.residue[vi] += w_ia / deg_u[a] * r_a;
                ws.touch(vi);
                if !ws.queued[vi] && ws.residue[vi] > cfg.r_max * deg_v[vi] {
                    ws.queued[vi] = true;
                    ws.queue.push_back(vi);
                }
            }
        }
    }
    Ok(ws.drain_result(source, pushes))
}

/// Per-source candidate lists: the highest-scoring other nodes for every
/// source, sorted by descending score with ties broken by smaller id.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    rows: Vec<Vec<(usize, f64)>>,
    pub total_pushes: u64,
}

pub const DEFAULT_TOP_T: usize = 256;

impl ScoreTable {
    /// Builds a table from unsorted rows; each row is sorted, stripped of
    /// its own source and non-positive scores, and cut to `top_t`.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>, top_t: usize) -> Self {
        let rows = rows
            .into_iter()
            .enumerate()
            .map(|(s, mut row)| {
                row.retain(|&(v, score)| v != s && score > 0.0);
                sort_candidates(&mut row);
                row.truncate(top_t);
                row
            })
            .collect();
        Self {
            rows,
            total_pushes: 0,
        }
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, source: usize) -> &[(usize, f64)] {
        &self.rows[source]
    }

    /// Score of `target` from `source`, zero when not retained.
    pub fn get(&self, source: usize, target: usize) -> f64 {
        self.rows[source]
            .iter()
            .find(|e| e.0 == target)
            .map_or(0.0, |e| e.1)
    }

    pub fn is_empty(&self) -> bool {
        self.rows.iter().all(|r| r.is_empty())
    }

    /// `source<TAB>target<TAB>score` lines sorted by source, then by
    /// descending score.
    pub fn to_tsv(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        for (s, row) in self.rows.iter().enumerate() {
            for &(t, score) in row {
                writeln!(out, "{s}\t{t}\t{score}").unwrap();
            }
        }
        out
    }
}

pub(crate) fn sort_candidates(row: &mut [(usize, f64)]) {
    row.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
}

type Candidates = Vec<(usize, f64)>;

/// Runs [`push_ppr`] from every node and keeps the top `top_t` targets of
/// each. `workers = 0` uses rayon's global pool. Sources are independent,
/// so the table does not depend on the worker count.
pub fn ppr_all_sources(
    g: &BipartiteGraph,
    cfg: &PprConfig,
    top_t: usize,
    workers: usize,
) -> Result<ScoreTable> {
    cfg.validate()?;
    let run = || -> Result<Vec<(Candidates, u64)>> {
        (0..g.n_v())
            .into_par_iter()
            .map_init(
                || PushWorkspace::new(g.n_v()),
                |ws, s| {
                    let res = push_ppr_with(g, s, cfg, ws)?;
                    let mut row = res.pi_hat;
                    row.retain(|&(v, score)| v != s && score > 0.0);
                    sort_candidates(&mut row);
                    row.truncate(top_t);
                    Ok((row, res.pushes))
                },
            )
            .collect()
    };
    let results = if workers == 0 {
        run()?
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::Internal(format!("thread pool: {e}")))?
            .install(run)?
    };
    let total_pushes = results.iter().map(|r| r.1).sum();
    Ok(ScoreTable {
        rows: results.into_iter().map(|r| r.0).collect(),
        total_pushes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(alpha: f64, r_max: f64) -> PprConfig {
        PprConfig { alpha, r_max }
    }

    #[test]
    fn single_pair_collects_all_mass() {
        let g = BipartiteGraph::from_edges(1, 1, &[(0, 0, 1.0)]).unwrap();
        let res = push_ppr(&g, 0, &cfg(0.2, 1e-9)).unwrap();
        assert!((res.score(0) - 1.0).abs() < 1e-8);
        assert!((res.total_mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn shared_attribute_pair() {
        let g = BipartiteGraph::from_edges(2, 1, &[(0, 0, 1.0), (0, 1, 1.0)]).unwrap();
        let res = push_ppr(&g, 0, &cfg(0.2, 1e-10)).unwrap();
        assert!((res.score(0) - 0.6).abs() < 1e-8);
        assert!((res.score(1) - 0.4).abs() < 1e-8);
        assert!(res.score(0) <= 0.6 + 1e-12 && res.score(1) <= 0.4 + 1e-12);
    }

    #[test]
    fn isolated_source_absorbs() {
        // node 1 has no attributes
        let g = BipartiteGraph::from_edges(3, 1, &[(0, 0, 1.0), (0, 2, 1.0)]).unwrap();
        let res = push_ppr(&g, 1, &cfg(0.2, 1e-6)).unwrap();
        assert_eq!(res.pi_hat, vec![(1, 1.0)]);
        assert!(res.residue.is_empty());
        assert_eq!(res.pushes, 1);
    }

    #[test]
    fn rejects_out_of_range_and_bad_config() {
        let g = BipartiteGraph::from_edges(1, 1, &[(0, 0, 1.0)]).unwrap();
        assert!(push_ppr(&g, 1, &cfg(0.2, 1e-6)).is_err());
        assert!(push_ppr(&g, 0, &cfg(1.0, 1e-6)).is_err());
        assert!(push_ppr(&g, 0, &cfg(0.2, 0.0)).is_err());
    }

    #[test]
    fn residues_respect_threshold() {
        let edges = [
            (0, 0, 1.0),
            (0, 1, 2.0),
            (1, 1, 1.0),
            (1, 2, 0.5),
            (2, 2, 1.0),
            (2, 0, 3.0),
        ];
        let g = BipartiteGraph::from_edges(3, 3, &edges).unwrap();
        let c = cfg(0.15, 1e-4);
        let res = push_ppr(&g, 2, &c).unwrap();
        for &(v, r) in &res.residue {
            assert!(r <= c.r_max * g.node_degree(v));
        }
        assert!((res.total_mass() - 1.0).abs() < 1e-12);
        assert!(res.pushes <= push_budget(&g, &c));
    }

    #[test]
    fn workspace_reuse_matches_fresh_runs() {
        let edges = [
            (0, 0, 1.0),
            (0, 1, 2.0),
            (1, 1, 1.0),
            (1, 2, 0.5),
            (2, 2, 1.0),
            (2, 0, 3.0),
        ];
        let g = BipartiteGraph::from_edges(3, 3, &edges).unwrap();
        let c = cfg(0.2, 1e-7);
        let mut ws = PushWorkspace::new(3);
        for s in [0, 1, 2, 0] {
            assert_eq!(
                push_ppr_with(&g, s, &c, &mut ws).unwrap(),
                push_ppr(&g, s, &c).unwrap()
            );
        }
    }

    #[test]
    fn score_table_excludes_source_and_sorts() {
        let t = ScoreTable::from_rows(vec![vec![(0, 0.9), (2, 0.1), (1, 0.1)], vec![], vec![]], 8);
        assert_eq!(t.row(0), &[(1, 0.1), (2, 0.1)]);
        assert_eq!(t.to_tsv(), "0\t1\t0.1\n0\t2\t0.1\n");
    }
}
