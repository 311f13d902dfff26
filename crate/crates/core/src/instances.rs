//! Seeded random instances for property checks.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::ait::BipartiteGraph;
use crate::error::Result;
use crate::graph::SparseGraph;
use crate::labels::{LabelSet, Split};
use crate::matrix::Matrix;

/// Erdős–Rényi graph with edge weights drawn from `[0.5, 2)`.
pub fn random_graph(n: usize, p: f64, rng: &mut impl Rng) -> SparseGraph {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.random::<f64>() < p {
                edges.push((u, v, rng.random_range(0.5..2.0)));
            }
        }
    }
    SparseGraph::from_edges(n, edges).expect("generated edges are valid")
}

/// Entries uniform in `[lo, hi)`.
pub fn random_matrix(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut impl Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(lo..hi))
}

/// Random bipartite graph in which every attribute has at least one edge.
/// Weights are drawn from `[0.1, 1)`.
pub fn random_bipartite(
    n_v: usize,
    n_u: usize,
    density: f64,
    rng: &mut impl Rng,
) -> BipartiteGraph {
    let mut edges = Vec::new();
    for a in 0..n_u {
        let mut any = false;
        for v in 0..n_v {
            if rng.random::<f64>() < density {
                edges.push((a, v, rng.random_range(0.1..1.0)));
                any = true;
            }
        }
        if !any {
            edges.push((a, rng.random_range(0..n_v), rng.random_range(0.1..1.0)));
        }
    }
    BipartiteGraph::from_edges(n_v, n_u, &edges).expect("generated edges are valid")
}

/// Random labels over `c` classes with `train_per_class` training nodes per
/// class; every other labeled node is split evenly between val and test.
pub fn random_labels(
    n: usize,
    c: usize,
    train_per_class: usize,
    rng: &mut impl Rng,
) -> Result<LabelSet> {
    let mut labels: Vec<usize> = (0..n).map(|i| i % c).collect();
    labels.shuffle(rng);
    let mut splits = vec![Split::Test; n];
    let mut taken = vec![0usize; c];
    let mut flip = false;
    for i in 0..n {
        let y = labels[i];
        if taken[y] < train_per_class {
            taken[y] += 1;
            splits[i] = Split::Train;
        } else {
            splits[i] = if flip { Split::Val } else { Split::Test };
            flip = !flip;
        }
    }
    LabelSet::new(labels.into_iter().map(Some).collect(), splits, c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bipartite_has_no_empty_attributes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g = random_bipartite(5, 20, 0.05, &mut rng);
        assert!(g.attr_degrees().iter().all(|&d| d > 0.0));
    }

    #[test]
    fn labels_cover_every_class_in_train() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let l = random_labels(30, 3, 2, &mut rng).unwrap();
        assert_eq!(l.indices(Split::Train).len(), 6);
        for c in 0..3 {
            assert!(l
                .indices(Split::Train)
                .iter()
                .any(|&i| l.label(i) == Some(c)));
        }
    }
}
