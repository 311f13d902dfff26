//! Co-augmentation of topology and attributes for semi-supervised node
//! classification.
//!
//! The pipeline has three stages:
//!
//! 1. [`tea`] enriches node features by residual propagation over the
//!    normalized adjacency.
//! 2. [`ait`] projects the enriched features onto a node–attribute
//!    bipartite graph, scores node pairs with a two-hop personalized
//!    PageRank push, and rebuilds co-augmented graphs from those scores.
//! 3. [`gnn`] trains one GCN encoder over the original and co-augmented
//!    graphs with supervised, consistency and prototype-alignment losses.
//!
//! [`pipeline`] chains the stages under one flat [`pipeline::RunConfig`],
//! and [`data_io`] reads and writes datasets and run artifacts.
//! [`oracles`] holds dense reference implementations used to check the
//! sparse production code.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ait;
pub mod data_io;
pub mod error;
pub mod gnn;
pub mod graph;
pub mod instances;
pub mod labels;
pub mod matrix;
pub mod oracles;
pub mod pipeline;
pub mod selftest;
pub mod tea;

pub use error::{Error, Result};
pub use graph::{normalize, NormalizedAdjacency, SparseGraph};
pub use labels::{LabelSet, Split};
pub use matrix::{FeatureMatrix, Matrix};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/propagation.md")]
    mod propagation {}
    #[doc = include_str!("../../../book/src/bipartite.md")]
    mod bipartite {}
    #[doc = include_str!("../../../book/src/reconstruction.md")]
    mod reconstruction {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/runs.md")]
    mod runs {}
}
