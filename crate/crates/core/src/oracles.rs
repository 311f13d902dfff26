//! Brute-force reference computations used by tests, the acceptance suite
//! and `selftest`.
//!
//! None of these share kernels with the production path: dense algebra goes
//! through `nalgebra`, paths are enumerated explicitly, and gradients come
//! from central differences. Everything sits behind an [`OracleBudget`] and
//! refuses inputs that would take too long.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::ait::BipartiteGraph;
use crate::error::{Error, Result};
use crate::graph::{NormalizedAdjacency, SparseGraph};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleBudget {
    /// Largest node count accepted by the dense node-level oracles.
    pub max_dense_dim: usize,
    /// Largest `n_v + n_u` accepted by the dense bipartite PPR.
    pub max_bipartite_dim: usize,
    /// Largest number of walks `enumerate_paths` will visit.
    pub max_paths: u64,
    /// Central-difference step.
    pub fd_step: f64,
}

impl Default for OracleBudget {
    fn default() -> Self {
        Self {
            max_dense_dim: 2000,
            max_bipartite_dim: 5000,
            max_paths: 10_000_000,
            fd_step: 1e-5,
        }
    }
}

impl OracleBudget {
    pub fn validate(&self) -> Result<()> {
        if self.max_dense_dim == 0 || self.max_bipartite_dim == 0 || self.max_paths == 0 {
            return Err(Error::InvalidConfig(
                "oracle budget limits must be positive".into(),
            ));
        }
        if !(1e-8..=1e-3).contains(&self.fd_step) {
            return Err(Error::InvalidConfig(format!(
                "fd_step must lie in [1e-8, 1e-3], got {}",
                self.fd_step
            )));
        }
        Ok(())
    }

    fn check_dim(&self, dim: usize, what: &str) -> Result<()> {
        self.check_cap(dim, self.max_dense_dim, what)
    }

    fn check_cap(&self, dim: usize, cap: usize, what: &str) -> Result<()> {
        self.validate()?;
        if dim > cap {
            return Err(Error::BudgetExceeded(format!(
                "{what}: dense dimension {dim} exceeds cap {cap}"
            )));
        }
        Ok(())
    }
}

fn to_dense(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

fn from_dense(m: &DMatrix<f64>) -> Matrix {
    Matrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

fn densify_adjacency(adj: &NormalizedAdjacency) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(adj.n(), adj.n());
    for u in 0..adj.n() {
        for (v, w) in adj.row(u) {
            a[(u, v)] = w;
        }
    }
    a
}

/// `D̂^{-1/2} (A + I) D̂^{-1/2}` assembled densely from the edge list.
pub fn dense_normalized_adjacency(g: &SparseGraph, budget: &OracleBudget) -> Result<Matrix> {
    budget.check_dim(g.n(), "dense normalization")?;
    let n = g.n();
    let mut a = DMatrix::<f64>::identity(n, n);
    for (u, v, w) in g.edges() {
        a[(u, v)] += w;
        a[(v, u)] += w;
    }
    let d: Vec<f64> = (0..n).map(|i| a.row(i).sum()).collect();
    let scale =
        DMatrix::from_diagonal(&DVector::from_iterator(n, d.iter().map(|x| 1.0 / x.sqrt())));
    Ok(from_dense(&(&scale * a * &scale)))
}

/// `β (I − (1 − β) Ã)⁻¹ X` by LU factorization.
pub fn dense_fixed_point(
    x: &Matrix,
    adj: &NormalizedAdjacency,
    beta: f64,
    budget: &OracleBudget,
) -> Result<Matrix> {
    budget.check_dim(adj.n(), "fixed point")?;
    if x.rows() != adj.n() {
        return Err(Error::shape("fixed point", adj.n(), x.rows()));
    }
    let n = adj.n();
    let system = DMatrix::<f64>::identity(n, n) - densify_adjacency(adj) * (1.0 - beta);
    let rhs = to_dense(x) * beta;
    let sol = system
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Internal("singular fixed-point system".into()))?;
    Ok(from_dense(&sol))
}

/// Dense two-hop PPR over the node side. Nodes without attributes get a
/// self-loop in the transition so their mass stays put, matching the
/// absorbing convention of the push.
pub fn dense_two_hop_ppr(
    g: &BipartiteGraph,
    source: usize,
    alpha: f64,
    iters: usize,
    budget: &OracleBudget,
) -> Result<Vec<f64>> {
    budget.check_cap(g.n_v() + g.n_u(), budget.max_bipartite_dim, "bipartite PPR")?;
    if source >= g.n_v() {
        return Err(Error::NodeOutOfRange {
            id: source,
            n: g.n_v(),
        });
    }
    let (nv, nu) = (g.n_v(), g.n_u());
    let mut w = DMatrix::<f64>::zeros(nv, nu);
    for (a, v, weight) in g.edges() {
        w[(v, a)] = weight;
    }
    let mut to_attr = w.clone();
    for i in 0..nv {
        let s = to_attr.row(i).sum();
        if s > 0.0 {
            to_attr.row_mut(i).scale_mut(1.0 / s);
        }
    }
    let mut to_node = w.transpose();
    for a in 0..nu {
        let s = to_node.row(a).sum();
        if s > 0.0 {
            to_node.row_mut(a).scale_mut(1.0 / s);
        }
    }
    let mut t = to_attr * to_node;
    for i in 0..nv {
        if t.row(i).sum() == 0.0 {
            t[(i, i)] = 1.0;
        }
    }
    let tt = t.transpose();
    let mut walk = DVector::<f64>::zeros(nv);
    walk[source] = 1.0;
    let mut pi = DVector::<f64>::zeros(nv);
    let mut weight = alpha;
    for _ in 0..iters {
        pi += &walk * weight;
        walk = &tt * walk;
        weight *= 1.0 - alpha;
    }
    Ok(pi.iter().copied().collect())
}

/// Number of alternating walks `source → a₁ → v₁ → … → a_c → target` of
/// length `2c`. Vertices may repeat.
pub fn enumerate_paths(
    g: &BipartiteGraph,
    source: usize,
    target: usize,
    c: usize,
    budget: &OracleBudget,
) -> Result<u64> {
    budget.validate()?;
    for id in [source, target] {
        if id >= g.n_v() {
            return Err(Error::NodeOutOfRange { id, n: g.n_v() });
        }
    }
    let node_nbrs: Vec<Vec<usize>> = (0..g.n_v())
        .map(|v| g.node_edges(v).map(|e| e.0).collect())
        .collect();
    let attr_nbrs: Vec<Vec<usize>> = (0..g.n_u())
        .map(|a| g.attr_edges(a).map(|e| e.0).collect())
        .collect();

    let mut visited = 0u64;
    let mut count = 0u64;
    // explicit stack of (node, round trips taken)
    let mut stack = vec![(source, 0usize)];
    while let Some((v, depth)) = stack.pop() {
        visited += 1;
        if visited > budget.max_paths {
            return Err(Error::BudgetExceeded(format!(
                "path enumeration visited more than {} walk prefixes",
                budget.max_paths
            )));
        }
        if depth == c {
            count += u64::from(v == target);
            continue;
        }
        for &a in &node_nbrs[v] {
            for &next in &attr_nbrs[a] {
                stack.push((next, depth + 1));
            }
        }
    }
    Ok(count)
}

/// Central-difference gradient of `f` at `params`.
pub fn finite_diff_grad(
    mut f: impl FnMut(&[f64]) -> f64,
    params: &[f64],
    fd_step: f64,
) -> Result<Vec<f64>> {
    if !(1e-8..=1e-3).contains(&fd_step) {
        return Err(Error::InvalidConfig(format!(
            "fd_step {fd_step} outside [1e-8, 1e-3]"
        )));
    }
    let mut p = params.to_vec();
    let mut grad = Vec::with_capacity(p.len());
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + fd_step;
        let up = f(&p);
        p[i] = orig - fd_step;
        let down = f(&p);
        p[i] = orig;
        if !(up.is_finite() && down.is_finite()) {
            return Err(Error::NonFinite(format!(
                "finite-difference evaluation at coordinate {i}"
            )));
        }
        grad.push((up - down) / (2.0 * fd_step));
    }
    Ok(grad)
}

/// Output of the dense two-layer GCN reference.
#[derive(Debug, Clone)]
pub struct DenseGcnOutput {
    pub hidden: Matrix,
    pub logits: Matrix,
    pub probs: Matrix,
    pub z: Matrix,
}

/// `hidden = ReLU((Ã X) W1)`, `logits = (Ã hidden) W2`, row softmax,
/// `z = hidden W_proj`, all without dropout. Multiplication order differs
/// from the production path on purpose.
pub fn dense_gcn_forward(
    adj: &NormalizedAdjacency,
    x: &Matrix,
    w1: &Matrix,
    w2: &Matrix,
    w_proj: &Matrix,
    budget: &OracleBudget,
) -> Result<DenseGcnOutput> {
    budget.check_dim(adj.n(), "dense GCN")?;
    let a = densify_adjacency(adj);
    let hidden = (&a * to_dense(x) * to_dense(w1)).map(|v| v.max(0.0));
    let logits = &a * &hidden * to_dense(w2);
    let mut probs = logits.clone();
    for i in 0..probs.nrows() {
        let m = probs.row(i).max();
        let mut row = probs.row_mut(i);
        row.apply(|v| *v = (*v - m).exp());
        let s = row.sum();
        row.scale_mut(1.0 / s);
    }
    let z = &hidden * to_dense(w_proj);
    Ok(DenseGcnOutput {
        hidden: from_dense(&hidden),
        logits: from_dense(&logits),
        probs: from_dense(&probs),
        z: from_dense(&z),
    })
}

/// Dense `Ã · X`.
pub fn dense_spmm(adj: &NormalizedAdjacency, x: &Matrix, budget: &OracleBudget) -> Result<Matrix> {
    budget.check_dim(adj.n(), "dense product")?;
    Ok(from_dense(&(densify_adjacency(adj) * to_dense(x))))
}

/// Largest absolute eigenvalue of the normalized adjacency, from a full
/// symmetric eigendecomposition, along with the largest asymmetry
/// `|Ã_uv − Ã_vu|`.
pub fn dense_spectral_radius(
    adj: &NormalizedAdjacency,
    budget: &OracleBudget,
) -> Result<(f64, f64)> {
    budget.check_dim(adj.n(), "dense eigendecomposition")?;
    let a = densify_adjacency(adj);
    let asym = (&a - a.transpose()).amax();
    let eig = nalgebra::SymmetricEigen::new(a);
    Ok((eig.eigenvalues.amax(), asym))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fd_of_square() {
        let g = finite_diff_grad(|w| w[0] * w[0], &[3.0], 1e-5).unwrap();
        assert!((g[0] - 6.0).abs() < 1e-6);
    }

    #[test]
    fn fd_of_dead_relu() {
        let g = finite_diff_grad(|w| w[0].max(0.0), &[-0.5], 1e-5).unwrap();
        assert!(g[0].abs() < 1e-9);
    }

    #[test]
    fn fd_step_is_bounded() {
        assert!(finite_diff_grad(|w| w[0], &[0.0], 1e-2).is_err());
    }

    #[test]
    fn path_counts() {
        let pair = BipartiteGraph::from_edges(2, 1, &[(0, 0, 1.0), (0, 1, 1.0)]).unwrap();
        let b = OracleBudget::default();
        assert_eq!(enumerate_paths(&pair, 0, 1, 1, &b).unwrap(), 1);

        let split =
            BipartiteGraph::from_edges(4, 2, &[(0, 0, 1.0), (0, 1, 1.0), (1, 2, 1.0), (1, 3, 1.0)])
                .unwrap();
        assert_eq!(enumerate_paths(&split, 0, 3, 2, &b).unwrap(), 0);

        let mut full = Vec::new();
        for a in 0..3 {
            for v in 0..3 {
                full.push((a, v, 1.0));
            }
        }
        let k33 = BipartiteGraph::from_edges(3, 3, &full).unwrap();
        assert_eq!(enumerate_paths(&k33, 0, 2, 1, &b).unwrap(), 3);
        // two round trips: 3 attrs · 3 nodes · 3 attrs
        assert_eq!(enumerate_paths(&k33, 0, 2, 2, &b).unwrap(), 27);
    }

    #[test]
    fn path_budget_is_enforced() {
        let mut full = Vec::new();
        for a in 0..4 {
            for v in 0..4 {
                full.push((a, v, 1.0));
            }
        }
        let g = BipartiteGraph::from_edges(4, 4, &full).unwrap();
        let b = OracleBudget {
            max_paths: 100,
            ..OracleBudget::default()
        };
        assert!(matches!(
            enumerate_paths(&g, 0, 1, 3, &b),
            Err(Error::BudgetExceeded(_))
        ));
    }

    #[test]
    fn two_hop_ppr_closed_form() {
        let g = BipartiteGraph::from_edges(2, 1, &[(0, 0, 1.0), (0, 1, 1.0)]).unwrap();
        let pi = dense_two_hop_ppr(&g, 0, 0.2, 400, &OracleBudget::default()).unwrap();
        assert!((pi[0] - 0.6).abs() < 1e-14);
        assert!((pi[1] - 0.4).abs() < 1e-14);

        let single = BipartiteGraph::from_edges(1, 1, &[(0, 0, 1.0)]).unwrap();
        let pi = dense_two_hop_ppr(&single, 0, 0.2, 400, &OracleBudget::default()).unwrap();
        assert!((pi[0] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn dense_caps_are_enforced() {
        let g = BipartiteGraph::from_edges(2, 1, &[(0, 0, 1.0), (0, 1, 1.0)]).unwrap();
        let b = OracleBudget {
            max_bipartite_dim: 2,
            ..OracleBudget::default()
        };
        assert!(matches!(
            dense_two_hop_ppr(&g, 0, 0.2, 10, &b),
            Err(Error::BudgetExceeded(_))
        ));
    }
}
