//! Topology-enriched attributes: residual multi-hop feature propagation.
//!
//! Each step mixes one round of neighborhood averaging with a fixed share
//! of the raw features,
//!
//! ```text
//! X⁽ˡ⁾ = (1 − β) · Ã · X⁽ˡ⁻¹⁾ + β · X,    X⁽⁰⁾ = X
//! ```
//!
//! which contracts towards `X* = β (I − (1 − β) Ã)⁻¹ X` at rate `(1 − β)`
//! whenever `‖Ã‖ ≤ 1`. The production path always runs exactly `h` steps;
//! [`fixed_point`] is a dense verification oracle.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::NormalizedAdjacency;
use crate::matrix::Matrix;
use crate::oracles::{self, OracleBudget};

/// Upper end of the accepted propagation depth. Depths this large are only
/// useful for convergence experiments.
pub const MAX_STEPS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TeaConfig {
    /// Propagation steps `h`.
    pub h: usize,
    /// Residual coefficient `β ∈ [0, 1]`.
    pub beta: f64,
}

impl TeaConfig {
    pub fn homophilous() -> Self {
        Self { h: 2, beta: 0.3 }
    }

    pub fn heterophilic() -> Self {
        Self { h: 2, beta: 0.5 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::InvalidConfig(format!(
                "beta must lie in [0, 1], got {}",
                self.beta
            )));
        }
        if self.h > MAX_STEPS {
            return Err(Error::InvalidConfig(format!(
                "h must be at most {MAX_STEPS}, got {}",
                self.h
            )));
        }
        Ok(())
    }
}

impl Default for TeaConfig {
    fn default() -> Self {
        Self::homophilous()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnrichedFeatures {
    pub h_matrix: Matrix,
    pub steps_run: usize,
}

pub fn propagate(
    x: &Matrix,
    adj: &NormalizedAdjacency,
    cfg: TeaConfig,
) -> Result<EnrichedFeatures> {
    let mut last = None;
    propagate_each(x, adj, cfg, |_, xl| last = Some(xl.clone()))?;
    Ok(EnrichedFeatures {
        h_matrix: last.unwrap_or_else(|| x.clone()),
        steps_run: cfg.h,
    })
}

/// Runs the propagation and hands every iterate `X⁽ˡ⁾`, `l = 0..=h`, to
/// `visit`.
pub fn propagate_each(
    x: &Matrix,
    adj: &NormalizedAdjacency,
    cfg: TeaConfig,
    mut visit: impl FnMut(usize, &Matrix),
) -> Result<()> {
    cfg.validate()?;
    if x.rows() != adj.n() {
        return Err(Error::shape(
            "tea::propagate",
            format!("{} rows", adj.n()),
            x.rows(),
        ));
    }
    x.check_finite("TEA input features")?;

    let mut cur = x.clone();
    visit(0, &cur);
    for l in 1..=cfg.h {
        let mut next = adj.spmm(&cur)?;
        for (o, &x0) in next.as_mut_slice().iter_mut().zip(x.as_slice()) {
            *o = (1.0 - cfg.beta) * *o + cfg.beta * x0;
        }
        cur = next;
        visit(l, &cur);
    }
    Ok(())
}

/// Closed-form limit of the propagation, by dense linear solve. Refuses
/// graphs above `budget.max_dense_dim` nodes.
pub fn fixed_point(
    x: &Matrix,
    adj: &NormalizedAdjacency,
    beta: f64,
    budget: &OracleBudget,
) -> Result<Matrix> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "fixed point needs beta in (0, 1], got {beta}"
        )));
    }
    oracles::dense_fixed_point(x, adj, beta, budget)
}

/// Expected same-class share after `l` residual steps, by the recursion
/// `p_l = β + (1 − β) p_{l−1}`.
pub fn homophily_schedule(p0: f64, beta: f64, l: usize) -> f64 {
    let mut p = p0;
    for _ in 0..l {
        p = beta + (1.0 - beta) * p;
    }
    p
}

/// `1 − (1 − β)^l (1 − p0)`.
pub fn homophily_closed_form(p0: f64, beta: f64, l: usize) -> f64 {
    1.0 - (1.0 - beta).powi(l as i32) * (1.0 - p0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{normalize, SparseGraph};

    fn path2() -> NormalizedAdjacency {
        normalize(&SparseGraph::from_edges(2, [(0, 1, 1.0)]).unwrap()).unwrap()
    }

    #[test]
    fn beta_one_keeps_features() {
        let x = Matrix::from_rows(&[[1.0, 2.0], [3.0, -4.0]]);
        let out = propagate(&x, &path2(), TeaConfig { h: 7, beta: 1.0 }).unwrap();
        assert_eq!(out.h_matrix, x);
        assert_eq!(out.steps_run, 7);
    }

    #[test]
    fn zero_steps_is_identity() {
        let x = Matrix::from_rows(&[[1.0, 2.0], [3.0, -4.0]]);
        let out = propagate(&x, &path2(), TeaConfig { h: 0, beta: 0.3 }).unwrap();
        assert_eq!(out.h_matrix, x);
    }

    #[test]
    fn one_step_on_two_node_path() {
        let out = propagate(
            &Matrix::identity(2),
            &path2(),
            TeaConfig { h: 1, beta: 0.5 },
        )
        .unwrap();
        let expect = Matrix::from_rows(&[[0.75, 0.25], [0.25, 0.75]]);
        assert!(out.h_matrix.max_abs_diff(&expect) < 1e-15);
    }

    #[test]
    fn rejects_bad_input() {
        let a = path2();
        assert!(propagate(&Matrix::zeros(3, 1), &a, TeaConfig::default()).is_err());
        let nan = Matrix::from_rows(&[[f64::NAN], [0.0]]);
        assert!(matches!(
            propagate(&nan, &a, TeaConfig::default()),
            Err(Error::NonFinite(_))
        ));
        assert!(propagate(&Matrix::zeros(2, 1), &a, TeaConfig { h: 1, beta: 1.5 }).is_err());
    }

    #[test]
    fn fixed_point_examples() {
        let budget = OracleBudget::default();
        let x = Matrix::from_rows(&[[1.0, 2.0], [3.0, -4.0]]);
        let same = fixed_point(&x, &path2(), 1.0, &budget).unwrap();
        assert!(same.max_abs_diff(&x) < 1e-15);

        let star = fixed_point(&Matrix::identity(2), &path2(), 0.5, &budget).unwrap();
        let expect = Matrix::from_rows(&[[0.75, 0.25], [0.25, 0.75]]);
        assert!(star.max_abs_diff(&expect) < 1e-14);
        assert!(fixed_point(&x, &path2(), 0.0, &budget).is_err());
    }

    #[test]
    fn homophily_examples() {
        assert!((homophily_schedule(0.2, 0.3, 1) - 0.44).abs() < 1e-15);
        for l in [0, 1, 5, 40] {
            assert_eq!(homophily_schedule(1.0, 0.37, l), 1.0);
        }
        assert!((1.0 - homophily_schedule(0.2, 0.3, 200)).abs() < 1e-12);
    }
}
