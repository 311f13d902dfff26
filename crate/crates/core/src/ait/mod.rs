//! Attribute-informed topology: bipartite projection of enriched features,
//! intra-set push PPR, the path-counting lower bound, and graph
//! reconstruction from PPR scores.

mod bipartite;
mod bound;
mod push;
mod reconstruct;

pub use bipartite::{
    build_bipartite, BipartiteGraph, BipartiteOptions, BipartiteStats, SingletonPolicy,
    DEFAULT_DOWN_WEIGHT,
};
pub use bound::{lower_bound, LowerBoundCertificate};
pub use push::{
    ppr_all_sources, push_budget, push_ppr, push_ppr_with, PprConfig, PprResult, PushWorkspace,
    ScoreTable, DEFAULT_TOP_T,
};
pub use reconstruct::{
    auto_k, edge_mod_graph, knn_graph, reconstruct, KnnSize, ReconstructionConfig, Strategy,
};

use crate::error::Result;
use crate::oracles::{self, OracleBudget};

/// Dense reference scores `π = α Σ_k (1 − α)^k (M_VU M_UV)^k e_s` by power
/// iteration; truncation error is at most `(1 − α)^iters`.
pub fn ppr_oracle(
    g: &BipartiteGraph,
    source: usize,
    alpha: f64,
    iters: usize,
    budget: &OracleBudget,
) -> Result<Vec<f64>> {
    oracles::dense_two_hop_ppr(g, source, alpha, iters, budget)
}
