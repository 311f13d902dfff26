//! Path-counting lower bound on bipartite PPR scores.
//!
//! For a target reachable from the source by alternating walks of length
//! `2c`, every such walk contributes at least `(w_min² / (d_max^V d_max^U))^c`
//! transition probability, so
//!
//! ```text
//! π(target) ≥ α (1 − α)^{2c} · |P_2c| · (w_min² / (d_max^V · d_max^U))^c
//! ```
//!
//! The push applies decay once per two-hop round trip, so its exact scores
//! carry `(1 − α)^c ≥ (1 − α)^{2c}` and the bound stays valid (if loose).

use serde::{Deserialize, Serialize};

use super::BipartiteGraph;
use crate::error::{Error, Result};
use crate::oracles::{self, OracleBudget};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LowerBoundCertificate {
    pub source: usize,
    pub target: usize,
    pub c: usize,
    pub alpha: f64,
    pub path_count: u64,
    pub w_min: f64,
    pub d_max_v: f64,
    pub d_max_u: f64,
    pub bound: f64,
}

impl LowerBoundCertificate {
    /// The bound recomputed from the stored fields.
    pub fn recompute(&self) -> f64 {
        bound_formula(
            self.alpha,
            self.c,
            self.path_count,
            self.w_min,
            self.d_max_v,
            self.d_max_u,
        )
    }
}

fn bound_formula(alpha: f64, c: usize, paths: u64, w_min: f64, d_max_v: f64, d_max_u: f64) -> f64 {
    let per_round_trip = w_min * w_min / (d_max_v * d_max_u);
    alpha * (1.0 - alpha).powi(2 * c as i32) * paths as f64 * per_round_trip.powi(c as i32)
}

/// Enumerates every alternating walk `source → a₁ → v₁ → … → a_c → target`
/// and evaluates the bound. Meant for small graphs and `c ≤ 3`.
pub fn lower_bound(
    g: &BipartiteGraph,
    source: usize,
    target: usize,
    c: usize,
    alpha: f64,
    budget: &OracleBudget,
) -> Result<LowerBoundCertificate> {
    if c == 0 {
        return Err(Error::InvalidConfig("c must be at least 1".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    let path_count = oracles::enumerate_paths(g, source, target, c, budget)?;
    let w_min = g.min_weight().unwrap_or(0.0);
    let d_max_v = g.node_degrees().iter().copied().fold(0.0, f64::max);
    let d_max_u = g.attr_degrees().iter().copied().fold(0.0, f64::max);
    let bound = if path_count == 0 {
        0.0
    } else {
        bound_formula(alpha, c, path_count, w_min, d_max_v, d_max_u)
    };
    Ok(LowerBoundCertificate {
        source,
        target,
        c,
        alpha,
        path_count,
        w_min,
        d_max_v,
        d_max_u,
        bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shared_attribute_pair_bound() {
        let g = BipartiteGraph::from_edges(2, 1, &[(0, 0, 1.0), (0, 1, 1.0)]).unwrap();
        let cert = lower_bound(&g, 0, 1, 1, 0.2, &OracleBudget::default()).unwrap();
        assert_eq!(cert.path_count, 1);
        assert_eq!((cert.w_min, cert.d_max_v, cert.d_max_u), (1.0, 1.0, 2.0));
        assert!((cert.bound - 0.064).abs() < 1e-15);
        assert_eq!(cert.bound, cert.recompute());
        assert!(0.4 >= cert.bound);
    }

    #[test]
    fn unreachable_target_gives_zero() {
        let g =
            BipartiteGraph::from_edges(4, 2, &[(0, 0, 1.0), (0, 1, 1.0), (1, 2, 1.0), (1, 3, 1.0)])
                .unwrap();
        let cert = lower_bound(&g, 0, 3, 1, 0.2, &OracleBudget::default()).unwrap();
        assert_eq!(cert.path_count, 0);
        assert_eq!(cert.bound, 0.0);
    }

    #[test]
    fn c_zero_is_rejected() {
        let g = BipartiteGraph::from_edges(1, 1, &[(0, 0, 1.0)]).unwrap();
        assert!(lower_bound(&g, 0, 0, 0, 0.2, &OracleBudget::default()).is_err());
    }
}
