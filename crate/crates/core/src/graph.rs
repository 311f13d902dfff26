//! Undirected weighted graphs and the symmetric GCN propagation matrix.
//!
//! [`SparseGraph`] stores both directions of every edge in CSR form with
//! neighbors sorted by id, so iteration order (and therefore every floating
//! point reduction downstream) is fixed by construction.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct SparseGraph {
    n: usize,
    offsets: Vec<usize>,
    targets: Vec<usize>,
    weights: Vec<f64>,
    degree: Vec<f64>,
}

impl SparseGraph {
    /// Builds a graph from undirected edges, each listed once in either
    /// orientation. Duplicates (including `(v, u)` after `(u, v)`),
    /// self-loops and non-positive weights are rejected.
    pub fn from_edges<I>(n: usize, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize, f64)>,
    {
        let mut directed: Vec<(usize, usize, f64)> = Vec::new();
        for (u, v, w) in edges {
            for id in [u, v] {
                if id >= n {
                    return Err(Error::NodeOutOfRange { id, n });
                }
            }
            if u == v {
                return Err(Error::SelfLoop(u));
            }
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::BadWeight { u, v, w });
            }
            directed.push((u, v, w));
            directed.push((v, u, w));
        }
        directed.sort_by_key(|e| (e.0, e.1));
        for pair in directed.windows(2) {
            if pair[0].0 == pair[1].0 && pair[0].1 == pair[1].1 {
                let (u, v) = (pair[0].0.min(pair[0].1), pair[0].0.max(pair[0].1));
                return Err(Error::DuplicateEdge(u, v));
            }
        }
        Ok(Self::from_sorted_directed(n, &directed))
    }

    fn from_sorted_directed(n: usize, directed: &[(usize, usize, f64)]) -> Self {
        let mut offsets = vec![0usize; n + 1];
        for &(u, _, _) in directed {
            offsets[u + 1] += 1;
        }
        for i in 0..n {
            offsets[i + 1] += offsets[i];
        }
        let targets = directed.iter().map(|e| e.1).collect();
        let weights: Vec<f64> = directed.iter().map(|e| e.2).collect();
        let degree = (0..n)
            .map(|u| weights[offsets[u]..offsets[u + 1]].iter().sum())
            .collect();
        Self {
            n,
            offsets,
            targets,
            weights,
            degree,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of undirected edges.
    pub fn num_edges(&self) -> usize {
        self.targets.len() / 2
    }

    /// Weighted degree `d(u)`.
    pub fn degree(&self, u: usize) -> f64 {
        self.degree[u]
    }

    pub fn degrees(&self) -> &[f64] {
        &self.degree
    }

    /// Unweighted neighbor count.
    pub fn neighbor_count(&self, u: usize) -> usize {
        self.offsets[u + 1] - self.offsets[u]
    }

    pub fn neighbors(&self, u: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.offsets[u]..self.offsets[u + 1];
        self.targets[r.clone()]
            .iter()
            .copied()
            .zip(self.weights[r].iter().copied())
    }

    pub fn edge_weight(&self, u: usize, v: usize) -> Option<f64> {
        let r = self.offsets[u]..self.offsets[u + 1];
        self.targets[r.clone()]
            .binary_search(&v)
            .ok()
            .map(|i| self.weights[r.start + i])
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.edge_weight(u, v).is_some()
    }

    /// Undirected edges with `u < v`, sorted by `(u, v)`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |u| {
            self.neighbors(u)
                .filter(move |&(v, _)| u < v)
                .map(move |(v, w)| (u, v, w))
        })
    }

    /// Relabels node `i` as `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.n {
            return Err(Error::shape("permute", self.n, perm.len()));
        }
        Self::from_edges(self.n, self.edges().map(|(u, v, w)| (perm[u], perm[v], w)))
    }

    /// Fraction of edges whose endpoints share a label, over edges with
    /// both endpoints labeled. `None` when no such edge exists.
    pub fn edge_homophily(&self, labels: &[Option<usize>]) -> Option<f64> {
        let (mut same, mut total) = (0usize, 0usize);
        for (u, v, _) in self.edges() {
            if let (Some(a), Some(b)) = (labels[u], labels[v]) {
                total += 1;
                same += usize::from(a == b);
            }
        }
        (total > 0).then(|| same as f64 / total as f64)
    }

    /// Canonical edge-list text: one `u<TAB>v` line per undirected edge
    /// with `u < v`, sorted, plus a third weight field when it is not 1.
    pub fn to_edge_list(&self) -> String {
        let mut out = String::new();
        for (u, v, w) in self.edges() {
            if w == 1.0 {
                writeln!(out, "{u}\t{v}").unwrap();
            } else {
                writeln!(out, "{u}\t{v}\t{w}").unwrap();
            }
        }
        out
    }

    pub fn write_edge_list(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_edge_list().as_bytes())
            .map_err(|e| Error::io(path, e))
    }

    /// Parses an edge list whose node ids are already dense integers in
    /// `[0, n)`.
    pub fn parse_edge_list(text: &str, n: usize, path: &Path) -> Result<Self> {
        let raw = parse_raw_edges(text, path)?;
        let mut edges = Vec::with_capacity(raw.len());
        let mut seen = HashMap::with_capacity(raw.len());
        for e in raw {
            let parse_id = |tok: &str| -> Result<usize> {
                let id: usize = tok.parse().map_err(|_| Error::Parse {
                    path: path.to_path_buf(),
                    line: e.line,
                    msg: format!("node id {tok:?} is not a non-negative integer"),
                })?;
                if id >= n {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        line: e.line,
                        msg: format!("node id {id} out of range for {n} nodes"),
                    });
                }
                Ok(id)
            };
            let (u, v) = (parse_id(&e.u)?, parse_id(&e.v)?);
            check_edge_line(&mut seen, u, v, e.line, path)?;
            edges.push((u, v, e.w));
        }
        Self::from_edges(n, edges)
    }

    pub fn read_edge_list(path: &Path, n: usize) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_edge_list(&text, n, path)
    }

    /// Reads an edge list with arbitrary node tokens. Ids are assigned in
    /// order of first appearance.
    pub fn read_edge_list_remapped(path: &Path) -> Result<(Self, NodeIdMap)> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let raw = parse_raw_edges(&text, path)?;
        let mut map = NodeIdMap::default();
        let mut edges = Vec::with_capacity(raw.len());
        let mut seen = HashMap::with_capacity(raw.len());
        for e in raw {
            let u = map.intern(&e.u);
            let v = map.intern(&e.v);
            check_edge_line(&mut seen, u, v, e.line, path)?;
            edges.push((u, v, e.w));
        }
        let g = Self::from_edges(map.len(), edges)?;
        Ok((g, map))
    }
}

/// Mapping from dense node ids back to the tokens used in an input file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NodeIdMap {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl NodeIdMap {
    fn intern(&mut self, tok: &str) -> usize {
        if let Some(&id) = self.index.get(tok) {
            return id;
        }
        let id = self.tokens.len();
        self.tokens.push(tok.to_string());
        self.index.insert(tok.to_string(), id);
        id
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// `id<TAB>token` lines.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for (i, t) in self.tokens.iter().enumerate() {
            writeln!(out, "{i}\t{t}").unwrap();
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

struct RawEdge {
    u: String,
    v: String,
    w: f64,
    line: usize,
}

fn parse_raw_edges(text: &str, path: &Path) -> Result<Vec<RawEdge>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let trimmed = line.trim_end_matches('\r');
        if trimmed.trim().is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split('\t').collect();
        let err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            msg,
        };
        let w = match fields.len() {
            2 => 1.0,
            3 => fields[2]
                .parse::<f64>()
                .map_err(|_| err(format!("weight {:?} is not a number", fields[2])))?,
            k => {
                return Err(err(format!(
                    "expected 2 or 3 tab-separated fields, found {k}"
                )))
            }
        };
        if !(w.is_finite() && w > 0.0) {
            return Err(err(format!("weight {w} must be positive and finite")));
        }
        out.push(RawEdge {
            u: fields[0].to_string(),
            v: fields[1].to_string(),
            w,
            line: line_no,
        });
    }
    Ok(out)
}

fn check_edge_line(
    seen: &mut HashMap<(usize, usize), usize>,
    u: usize,
    v: usize,
    line: usize,
    path: &Path,
) -> Result<()> {
    let err = |msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    if u == v {
        return Err(err(format!("self-loop on node {u}")));
    }
    if let Some(first) = seen.insert((u.min(v), u.max(v)), line) {
        return Err(err(format!(
            "duplicate edge ({u}, {v}), first seen on line {first}"
        )));
    }
    Ok(())
}

/// `Ã = D̂^{-1/2} (A + I) D̂^{-1/2}` in CSR form, self-loops included.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency {
    n: usize,
    offsets: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

/// Symmetric GCN normalization with one self-loop per node and weighted
/// degrees.
pub fn normalize(g: &SparseGraph) -> Result<NormalizedAdjacency> {
    if g.n() == 0 {
        return Err(Error::EmptyGraph);
    }
    let n = g.n();
    let inv_sqrt: Vec<f64> = g.degrees().iter().map(|d| 1.0 / (d + 1.0).sqrt()).collect();
    let mut offsets = Vec::with_capacity(n + 1);
    let mut cols = Vec::with_capacity(g.targets.len() + n);
    let mut vals = Vec::with_capacity(g.targets.len() + n);
    offsets.push(0);
    for u in 0..n {
        let mut self_done = false;
        for (v, w) in g.neighbors(u) {
            if !self_done && v > u {
                cols.push(u);
                vals.push(inv_sqrt[u] * inv_sqrt[u]);
                self_done = true;
            }
            cols.push(v);
            vals.push(w * inv_sqrt[u] * inv_sqrt[v]);
        }
        if !self_done {
            cols.push(u);
            vals.push(inv_sqrt[u] * inv_sqrt[u]);
        }
        offsets.push(cols.len());
    }
    Ok(NormalizedAdjacency {
        n,
        offsets,
        cols,
        vals,
    })
}

impl NormalizedAdjacency {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, u: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.offsets[u]..self.offsets[u + 1];
        self.cols[r.clone()]
            .iter()
            .copied()
            .zip(self.vals[r].iter().copied())
    }

    pub fn get(&self, u: usize, v: usize) -> f64 {
        let r = self.offsets[u]..self.offsets[u + 1];
        match self.cols[r.clone()].binary_search(&v) {
            Ok(i) => self.vals[r.start + i],
            Err(_) => 0.0,
        }
    }

    /// Exact sparse-dense product `Ã · x`. Rows are computed independently,
    /// each with a fixed left-to-right reduction, so the result does not
    /// depend on how rows are scheduled across threads.
    pub fn spmm(&self, x: &Matrix) -> Result<Matrix> {
        if x.rows() != self.n {
            return Err(Error::shape("spmm", format!("{} rows", self.n), x.rows()));
        }
        let k = x.cols();
        let mut out = Matrix::zeros(self.n, k);
        if k == 0 {
            return Ok(out);
        }
        let fill = |(u, out_row): (usize, &mut [f64])| {
            for (v, a) in self.row(u) {
                for (o, &b) in out_row.iter_mut().zip(x.row(v)) {
                    *o += a * b;
                }
            }
        };
        if self.nnz() * k >= PARALLEL_THRESHOLD {
            out.as_mut_slice()
                .par_chunks_mut(k)
                .enumerate()
                .for_each(fill);
        } else {
            out.as_mut_slice().chunks_mut(k).enumerate().for_each(fill);
        }
        Ok(out)
    }

    /// Power-iteration estimate of the spectral norm (largest absolute
    /// eigenvalue, since `Ã` is symmetric).
    pub fn spectral_norm_estimate(&self, iters: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = Matrix::from_fn(self.n, 1, |_, _| rng.random::<f64>() - 0.5);
        let mut est = 0.0;
        for _ in 0..iters {
            let nv = v.frobenius_norm();
            if nv == 0.0 {
                return 0.0;
            }
            v.scale(1.0 / nv);
            let w = self.spmm(&v).expect("shape is fixed");
            est = w.frobenius_norm();
            v = w;
        }
        est
    }
}

const PARALLEL_THRESHOLD: usize = 1 << 18;

#[cfg(test)]
mod tests {
    use super::*;

    fn path2() -> SparseGraph {
        SparseGraph::from_edges(2, [(0, 1, 1.0)]).unwrap()
    }

    #[test]
    fn isolated_node_normalizes_to_one() {
        let g = SparseGraph::from_edges(1, []).unwrap();
        let a = normalize(&g).unwrap();
        assert_eq!(a.get(0, 0), 1.0);
    }

    #[test]
    fn two_node_path() {
        let a = normalize(&path2()).unwrap();
        for u in 0..2 {
            for v in 0..2 {
                assert!((a.get(u, v) - 0.5).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn triangle_is_uniform_third() {
        let g = SparseGraph::from_edges(3, [(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0)]).unwrap();
        let a = normalize(&g).unwrap();
        for u in 0..3 {
            for v in 0..3 {
                assert!((a.get(u, v) - 1.0 / 3.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn empty_graph_is_rejected() {
        let g = SparseGraph::from_edges(0, []).unwrap();
        assert!(matches!(normalize(&g), Err(Error::EmptyGraph)));
    }

    #[test]
    fn spmm_on_isolated_nodes_is_identity() {
        let g = SparseGraph::from_edges(3, []).unwrap();
        let a = normalize(&g).unwrap();
        let x = Matrix::from_rows(&[[1.0, -2.0], [0.5, 3.0], [7.0, 0.0]]);
        assert_eq!(a.spmm(&x).unwrap(), x);
    }

    #[test]
    fn spmm_two_node_path() {
        let a = normalize(&path2()).unwrap();
        let y = a.spmm(&Matrix::identity(2)).unwrap();
        assert!(y.max_abs_diff(&Matrix::from_rows(&[[0.5, 0.5], [0.5, 0.5]])) < 1e-15);
    }

    #[test]
    fn spmm_rejects_wrong_rows() {
        let a = normalize(&path2()).unwrap();
        assert!(a.spmm(&Matrix::zeros(3, 1)).is_err());
    }

    #[test]
    fn construction_rejects_bad_edges() {
        assert!(matches!(
            SparseGraph::from_edges(2, [(0, 1, 1.0), (1, 0, 1.0)]),
            Err(Error::DuplicateEdge(0, 1))
        ));
        assert!(matches!(
            SparseGraph::from_edges(2, [(1, 1, 1.0)]),
            Err(Error::SelfLoop(1))
        ));
        assert!(matches!(
            SparseGraph::from_edges(2, [(0, 2, 1.0)]),
            Err(Error::NodeOutOfRange { id: 2, n: 2 })
        ));
        assert!(matches!(
            SparseGraph::from_edges(2, [(0, 1, 0.0)]),
            Err(Error::BadWeight { .. })
        ));
    }

    #[test]
    fn weighted_degree_is_used() {
        let g = SparseGraph::from_edges(2, [(0, 1, 3.0)]).unwrap();
        let a = normalize(&g).unwrap();
        assert!((a.get(0, 1) - 3.0 / 4.0).abs() < 1e-15);
        assert!((a.get(0, 0) - 1.0 / 4.0).abs() < 1e-15);
    }

    #[test]
    fn edge_list_parse_errors_name_the_line() {
        let p = Path::new("edges.tsv");
        let err = SparseGraph::parse_edge_list("0\t1\n# c\na\tb\tc\td\n", 3, p).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let err = SparseGraph::parse_edge_list("0\t1\n1\t0\n", 3, p).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn edge_list_round_trip_is_byte_exact() {
        let text = "0\t1\n0\t3\t0.25\n1\t2\n2\t3\t1e-7\n";
        let g = SparseGraph::parse_edge_list(text, 4, Path::new("x")).unwrap();
        let out = g.to_edge_list();
        let g2 = SparseGraph::parse_edge_list(&out, 4, Path::new("x")).unwrap();
        assert_eq!(g, g2);
        assert_eq!(out, g2.to_edge_list());
    }

    #[test]
    fn remapped_loader_assigns_first_appearance_ids() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.tsv");
        std::fs::write(&p, "paperB\tpaperA\npaperA\tpaperC\n").unwrap();
        let (g, map) = SparseGraph::read_edge_list_remapped(&p).unwrap();
        assert_eq!(map.token(0), "paperB");
        assert_eq!(map.id("paperC"), Some(2));
        assert!(g.has_edge(0, 1) && g.has_edge(1, 2) && !g.has_edge(0, 2));
    }
}
