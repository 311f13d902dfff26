//! Single-channel GCN forward pass and its backward pass.

use std::borrow::Cow;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Gradients, ModelParams};
use crate::error::{Error, Result};
use crate::graph::NormalizedAdjacency;
use crate::matrix::Matrix;

/// What one channel produced.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelOutput {
    /// Post-ReLU hidden layer, before dropout.
    pub hidden: Matrix,
    pub logits: Matrix,
    pub probs: Matrix,
    /// Projected embeddings used by the prototype losses.
    pub z: Matrix,
    /// Parameter version this output was computed from.
    pub params_version: u64,
}

/// Forward state kept for backpropagation.
#[derive(Debug, Clone)]
pub(crate) struct ChannelCache {
    pub out: ChannelOutput,
    /// Inverted-dropout multipliers for the input and hidden layers
    /// (`None` when the rate is zero).
    mask_x: Option<Matrix>,
    mask_h: Option<Matrix>,
}

fn dropout_mask(rows: usize, cols: usize, rate: f64, rng: &mut ChaCha8Rng) -> Matrix {
    let keep = 1.0 / (1.0 - rate);
    Matrix::from_fn(rows, cols, |_, _| {
        if rng.random::<f64>() < rate {
            0.0
        } else {
            keep
        }
    })
}

pub(crate) fn softmax_in_place(m: &mut Matrix) {
    for i in 0..m.rows() {
        let row = m.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

pub(crate) fn forward_channel(
    adj: &NormalizedAdjacency,
    x: &Matrix,
    params: &ModelParams,
    dropout: f64,
    seed: u64,
) -> Result<ChannelCache> {
    if !(0.0..1.0).contains(&dropout) {
        return Err(Error::InvalidConfig(format!(
            "dropout must lie in [0, 1), got {dropout}"
        )));
    }
    if x.rows() != adj.n() {
        return Err(Error::shape("GCN input rows", adj.n(), x.rows()));
    }
    if x.cols() != params.input_dim() {
        return Err(Error::shape(
            "GCN input width",
            params.input_dim(),
            x.cols(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mask_x, mask_h) = if dropout > 0.0 {
        let mx = dropout_mask(x.rows(), x.cols(), dropout, &mut rng);
        let mh = dropout_mask(x.rows(), params.hidden_dim(), dropout, &mut rng);
        (Some(mx), Some(mh))
    } else {
        (None, None)
    };

    let x_in: Cow<Matrix> = match &mask_x {
        Some(m) => Cow::Owned(x.hadamard(m)),
        None => Cow::Borrowed(x),
    };
    let pre = adj.spmm(&x_in.matmul(&params.w1)?)?;
    let hidden = pre.map(|v| v.max(0.0));
    let h_in: Cow<Matrix> = match &mask_h {
        Some(m) => Cow::Owned(hidden.hadamard(m)),
        None => Cow::Borrowed(&hidden),
    };
    let logits = adj.spmm(&h_in.matmul(&params.w2)?)?;
    let mut probs = logits.clone();
    softmax_in_place(&mut probs);
    let z = hidden.matmul(&params.w_proj)?;
    logits.check_finite("logits")?;
    Ok(ChannelCache {
        out: ChannelOutput {
            hidden,
            logits,
            probs,
            z,
            params_version: params.version(),
        },
        mask_x,
        mask_h,
    })
}

/// Runs the two-layer encoder on one adjacency. With `dropout = 0` the
/// result is deterministic and independent of `seed`.
pub fn gcn_forward(
    adj: &NormalizedAdjacency,
    x: &Matrix,
    params: &ModelParams,
    dropout: f64,
    seed: u64,
) -> Result<ChannelOutput> {
    forward_channel(adj, x, params, dropout, seed).map(|c| c.out)
}

/// Accumulates this channel's parameter gradients given upstream
/// gradients on the logits and (optionally) on `z`.
pub(crate) fn backward_channel(
    adj: &NormalizedAdjacency,
    x: &Matrix,
    params: &ModelParams,
    cache: &ChannelCache,
    d_logits: &Matrix,
    d_z: Option<&Matrix>,
    grads: &mut Gradients,
) -> Result<()> {
    if cache.out.params_version != params.version() {
        return Err(Error::Internal(format!(
            "channel computed with parameter version {} but backward sees {}",
            cache.out.params_version,
            params.version()
        )));
    }
    let hidden = &cache.out.hidden;
    // logits = Ã (H_drop W2), Ã symmetric
    let d_hw = adj.spmm(d_logits)?;
    let h_in: Cow<Matrix> = match &cache.mask_h {
        Some(m) => Cow::Owned(hidden.hadamard(m)),
        None => Cow::Borrowed(hidden),
    };
    grads.w2.add_scaled(&h_in.t_matmul(&d_hw)?, 1.0);
    let mut d_hidden = d_hw.matmul_t(&params.w2)?;
    if let Some(m) = &cache.mask_h {
        d_hidden = d_hidden.hadamard(m);
    }
    if let Some(dz) = d_z {
        grads.w_proj.add_scaled(&hidden.t_matmul(dz)?, 1.0);
        d_hidden.add_scaled(&dz.matmul_t(&params.w_proj)?, 1.0);
    }
    // ReLU: hidden > 0 exactly where the pre-activation was positive
    for (g, &h) in d_hidden.as_mut_slice().iter_mut().zip(hidden.as_slice()) {
        if h <= 0.0 {
            *g = 0.0;
        }
    }
    let d_xw = adj.spmm(&d_hidden)?;
    let x_in: Cow<Matrix> = match &cache.mask_x {
        Some(m) => Cow::Owned(x.hadamard(m)),
        None => Cow::Borrowed(x),
    };
    grads.w1.add_scaled(&x_in.t_matmul(&d_xw)?, 1.0);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{normalize, SparseGraph};
    use crate::oracles::{dense_gcn_forward, OracleBudget};

    fn setup() -> (NormalizedAdjacency, Matrix, ModelParams) {
        let g = SparseGraph::from_edges(4, [(0, 1, 1.0), (1, 2, 1.0), (2, 3, 2.0)]).unwrap();
        let x = Matrix::from_fn(4, 3, |i, j| ((i * 3 + j) as f64 * 0.37).sin());
        (normalize(&g).unwrap(), x, ModelParams::init(3, 5, 2, 2, 11))
    }

    #[test]
    fn matches_dense_oracle_without_dropout() {
        let (adj, x, p) = setup();
        let out = gcn_forward(&adj, &x, &p, 0.0, 0).unwrap();
        let dense =
            dense_gcn_forward(&adj, &x, &p.w1, &p.w2, &p.w_proj, &OracleBudget::default()).unwrap();
        assert!(out.logits.max_abs_diff(&dense.logits) < 1e-12);
        assert!(out.probs.max_abs_diff(&dense.probs) < 1e-12);
        assert!(out.z.max_abs_diff(&dense.z) < 1e-12);
    }

    #[test]
    fn probabilities_are_rows_of_a_simplex() {
        let (adj, x, p) = setup();
        let out = gcn_forward(&adj, &x, &p, 0.5, 3).unwrap();
        for i in 0..4 {
            let s: f64 = out.probs.row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn dropout_is_seeded() {
        let (adj, x, p) = setup();
        let a = gcn_forward(&adj, &x, &p, 0.5, 3).unwrap();
        let b = gcn_forward(&adj, &x, &p, 0.5, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn wrong_width_is_rejected() {
        let (adj, _, p) = setup();
        let x = Matrix::zeros(4, 2);
        assert!(matches!(
            gcn_forward(&adj, &x, &p, 0.0, 0),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
