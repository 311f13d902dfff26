//! Loss terms and their local gradients.
//!
//! Each public `loss_*` function returns the scalar value only. The
//! `pub(crate)` companions return gradients with respect to their direct
//! inputs; the objective chains them back to the parameters.

use serde::{Deserialize, Serialize};

use super::forward::softmax_in_place;
use crate::error::{Error, Result};
use crate::labels::{LabelSet, Split};
use crate::matrix::{dot, norm, Matrix};

/// Floor applied to the true-class probability before taking its log.
pub const PROB_FLOOR: f64 = 1e-12;

/// How a per-node loss is reduced over nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    #[default]
    Mean,
    Sum,
}

/// Row-wise softmax, stabilized by subtracting each row's maximum.
pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    softmax_in_place(&mut out);
    out
}

fn train_nodes(probs: &Matrix, labels: &LabelSet) -> Result<Vec<(usize, usize)>> {
    if probs.rows() != labels.len() {
        return Err(Error::shape(
            "probabilities vs labels",
            labels.len(),
            probs.rows(),
        ));
    }
    let nodes: Vec<(usize, usize)> = (0..labels.len())
        .filter_map(|i| labels.train_label(i).map(|y| (i, y)))
        .collect();
    if nodes.is_empty() {
        return Err(Error::EmptySplit("train"));
    }
    if let Some(&(i, y)) = nodes.iter().find(|&&(_, y)| y >= probs.cols()) {
        return Err(Error::InvalidLabels(format!(
            "node {i} has class {y} but the model predicts {} classes",
            probs.cols()
        )));
    }
    Ok(nodes)
}

/// Cross-entropy of `probs` on the training nodes.
pub fn loss_ce(probs: &Matrix, labels: &LabelSet, reduction: Reduction) -> Result<f64> {
    let nodes = train_nodes(probs, labels)?;
    let mut clamped = 0usize;
    let mut total = 0.0;
    for &(i, y) in &nodes {
        let p = probs.get(i, y);
        if p < PROB_FLOOR {
            clamped += 1;
        }
        total -= p.max(PROB_FLOOR).ln();
    }
    if clamped > 0 {
        log::warn!("{clamped} true-class probabilities clamped to {PROB_FLOOR:e}");
    }
    Ok(match reduction {
        Reduction::Mean => total / nodes.len() as f64,
        Reduction::Sum => total,
    })
}

/// Gradient of [`loss_ce`] with respect to the logits, scaled by `scale`.
pub(crate) fn ce_grad_logits(
    probs: &Matrix,
    labels: &LabelSet,
    reduction: Reduction,
    scale: f64,
) -> Result<Matrix> {
    let nodes = train_nodes(probs, labels)?;
    let norm = match reduction {
        Reduction::Mean => nodes.len() as f64,
        Reduction::Sum => 1.0,
    };
    let mut g = Matrix::zeros(probs.rows(), probs.cols());
    for &(i, y) in &nodes {
        let row = g.row_mut(i);
        row.copy_from_slice(probs.row(i));
        row[y] -= 1.0;
        for v in row.iter_mut() {
            *v *= scale / norm;
        }
    }
    Ok(g)
}

/// Mean of the channel probability matrices, optionally sharpened by
/// raising to `1 / temperature` and renormalizing each row.
pub fn aggregate_predictions(probs: &[&Matrix], sharpen: Option<f64>) -> Result<Matrix> {
    let first = probs
        .first()
        .ok_or_else(|| Error::InvalidConfig("no channels to aggregate".into()))?;
    let mut agg = Matrix::zeros(first.rows(), first.cols());
    for p in probs {
        if p.shape() != first.shape() {
            return Err(Error::shape(
                "aggregate_predictions",
                format!("{:?}", first.shape()),
                format!("{:?}", p.shape()),
            ));
        }
        agg.add_scaled(p, 1.0 / probs.len() as f64);
    }
    if let Some(t) = sharpen {
        if !(t > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "sharpening temperature must be positive, got {t}"
            )));
        }
        for i in 0..agg.rows() {
            let row = agg.row_mut(i);
            for v in row.iter_mut() {
                *v = v.powf(1.0 / t);
            }
            let s: f64 = row.iter().sum();
            for v in row.iter_mut() {
                *v /= s;
            }
        }
    }
    Ok(agg)
}

/// `(1/S) Σ_s Σ_i ‖y_agg[i] − probs_s[i]‖²`, with `y_agg` held constant.
pub fn loss_consistency(channel_probs: &[&Matrix], y_agg: &Matrix) -> Result<f64> {
    if channel_probs.is_empty() {
        return Err(Error::InvalidConfig(
            "consistency loss needs at least one augmented channel".into(),
        ));
    }
    let mut total = 0.0;
    for p in channel_probs {
        if p.shape() != y_agg.shape() {
            return Err(Error::shape(
                "loss_consistency",
                format!("{:?}", y_agg.shape()),
                format!("{:?}", p.shape()),
            ));
        }
        total += p
            .as_slice()
            .iter()
            .zip(y_agg.as_slice())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
    }
    Ok(total / channel_probs.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PrototypeOptions {
    /// Unlabeled nodes whose top probability falls below this are left out.
    pub t_min: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Assignment {
    pub class: usize,
    pub t: f64,
    pub labeled: bool,
}

/// Confidence-weighted class centroids of the projected embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct Prototypes {
    /// `c × d_p`; rows of invalid classes are zero.
    pub p: Matrix,
    /// Per-class total confidence `Σ t_i`.
    pub counts: Vec<f64>,
    /// False for classes no node was assigned to.
    pub valid: Vec<bool>,
    pub(crate) assignment: Vec<Option<Assignment>>,
}

impl Prototypes {
    pub fn num_classes(&self) -> usize {
        self.p.rows()
    }

    /// Builds prototypes directly from rows, all marked valid. Used when
    /// treating prototypes as free parameters.
    pub fn from_matrix(p: Matrix) -> Self {
        let c = p.rows();
        Self {
            p,
            counts: vec![1.0; c],
            valid: vec![true; c],
            assignment: Vec::new(),
        }
    }
}

/// Training nodes go to their label with weight 1; every other node goes
/// to its predicted class with weight equal to the predicted probability.
pub fn allocate_prototypes(
    z: &Matrix,
    probs: &Matrix,
    labels: &LabelSet,
    opts: &PrototypeOptions,
) -> Result<Prototypes> {
    if z.rows() != probs.rows() || z.rows() != labels.len() {
        return Err(Error::shape(
            "allocate_prototypes rows",
            z.rows(),
            probs.rows(),
        ));
    }
    let c = probs.cols();
    let mut p = Matrix::zeros(c, z.cols());
    let mut counts = vec![0.0; c];
    let mut assignment = Vec::with_capacity(z.rows());
    for i in 0..z.rows() {
        let a = match labels.train_label(i) {
            Some(y) if y < c => Some(Assignment {
                class: y,
                t: 1.0,
                labeled: true,
            }),
            Some(y) => {
                return Err(Error::InvalidLabels(format!(
                    "node {i} has class {y} but only {c} classes exist"
                )))
            }
            None => {
                let class = probs.argmax_row(i);
                let t = probs.get(i, class);
                match opts.t_min {
                    Some(min) if t < min => None,
                    _ => Some(Assignment {
                        class,
                        t,
                        labeled: false,
                    }),
                }
            }
        };
        if let Some(a) = a {
            counts[a.class] += a.t;
            for (dst, &src) in p.row_mut(a.class).iter_mut().zip(z.row(i)) {
                *dst += a.t * src;
            }
        }
        assignment.push(a);
    }
    let valid: Vec<bool> = counts.iter().map(|&t| t > 0.0).collect();
    for j in 0..c {
        if valid[j] {
            let t = counts[j];
            for v in p.row_mut(j) {
                *v /= t;
            }
        }
    }
    Ok(Prototypes {
        p,
        counts,
        valid,
        assignment,
    })
}

/// Cosine similarity; 0 when either vector has zero norm.
pub fn cosine(u: &[f64], v: &[f64]) -> f64 {
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        0.0
    } else {
        dot(u, v) / (nu * nv)
    }
}

/// Adds `g · ∂cos(u, v)/∂u` into `out`.
fn add_cosine_grad(u: &[f64], v: &[f64], g: f64, out: &mut [f64]) {
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 || g == 0.0 {
        return;
    }
    let cos = dot(u, v) / (nu * nv);
    for ((o, &ui), &vi) in out.iter_mut().zip(u).zip(v) {
        *o += g * (vi / (nu * nv) - cos * ui / (nu * nu));
    }
}

fn log_sum_exp_excluding(vals: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = vals.clone().fold(f64::NEG_INFINITY, f64::max);
    max + vals.map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn mutually_valid(p: &Prototypes, pp: &Prototypes) -> Result<Vec<usize>> {
    if p.p.shape() != pp.p.shape() {
        return Err(Error::shape(
            "loss_dpa prototypes",
            format!("{:?}", p.p.shape()),
            format!("{:?}", pp.p.shape()),
        ));
    }
    Ok((0..p.num_classes())
        .filter(|&j| p.valid[j] && pp.valid[j])
        .collect())
}

/// Symmetric prototype contrast: each prototype should be closest (in
/// cosine) to its own class's counterpart in the other channel.
pub fn loss_dpa(p: &Prototypes, p_prime: &Prototypes, tau: f64) -> Result<f64> {
    dpa_gradients(p, p_prime, tau).map(|(l, _, _)| l)
}

/// Value of [`loss_dpa`] and its gradients with respect to `p.p` and
/// `p_prime.p`.
pub fn dpa_gradients(
    p: &Prototypes,
    p_prime: &Prototypes,
    tau: f64,
) -> Result<(f64, Matrix, Matrix)> {
    if !(tau > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "tau must be positive, got {tau}"
        )));
    }
    let classes = mutually_valid(p, p_prime)?;
    let mut gp = Matrix::zeros(p.p.rows(), p.p.cols());
    let mut gpp = Matrix::zeros(p.p.rows(), p.p.cols());
    let cv = classes.len();
    if cv < 2 {
        log::warn!("prototype alignment skipped: only {cv} class(es) valid in both channels");
        return Ok((0.0, gp, gpp));
    }
    // s[a][b] = cos(p_{J[a]}, p'_{J[b]}) / tau over the valid classes J
    let s: Vec<Vec<f64>> = classes
        .iter()
        .map(|&j| {
            classes
                .iter()
                .map(|&q| cosine(p.p.row(j), p_prime.p.row(q)) / tau)
                .collect()
        })
        .collect();
    let others = |a: usize| (0..cv).filter(move |&b| b != a);
    let row_lse: Vec<f64> = (0..cv)
        .map(|a| log_sum_exp_excluding(others(a).map(|b| s[a][b])))
        .collect();
    let col_lse: Vec<f64> = (0..cv)
        .map(|b| log_sum_exp_excluding(others(b).map(|a| s[a][b])))
        .collect();

    let mut sum = 0.0;
    for a in 0..cv {
        sum += 2.0 * s[a][a] - row_lse[a] - col_lse[a];
    }
    let scale = 1.0 / (2.0 * cv as f64);
    let loss = -scale * sum;

    // dL/ds: diagonal −1/c'; off-diagonal gets the row softmax from its
    // own row term and the column softmax from its column's term
    for a in 0..cv {
        for b in 0..cv {
            let ds = if a == b {
                -2.0 * scale
            } else {
                scale * ((s[a][b] - row_lse[a]).exp() + (s[a][b] - col_lse[b]).exp())
            };
            let g = ds / tau;
            let (j, q) = (classes[a], classes[b]);
            add_cosine_grad(p.p.row(j), p_prime.p.row(q), g, gp.row_mut(j));
            add_cosine_grad(p_prime.p.row(q), p.p.row(j), g, gpp.row_mut(q));
        }
    }
    Ok((loss, gp, gpp))
}

/// Chains a gradient on the prototype matrix back to the embeddings and
/// to the probabilities that set each unlabeled node's weight. Returns
/// `dZ` and `(node, class, dt)` triples for the probability path.
pub(crate) fn prototype_backward(
    protos: &Prototypes,
    z: &Matrix,
    g_p: &Matrix,
) -> (Matrix, Vec<(usize, usize, f64)>) {
    let mut dz = Matrix::zeros(z.rows(), z.cols());
    let mut dt = Vec::new();
    for (i, a) in protos.assignment.iter().enumerate() {
        let Some(a) = a else { continue };
        let j = a.class;
        if !protos.valid[j] {
            continue;
        }
        let total = protos.counts[j];
        let g = g_p.row(j);
        for (d, &gv) in dz.row_mut(i).iter_mut().zip(g) {
            *d = a.t / total * gv;
        }
        if !a.labeled {
            let mut acc = 0.0;
            for ((&gv, &zv), &pv) in g.iter().zip(z.row(i)).zip(protos.p.row(j)) {
                acc += gv * (zv - pv);
            }
            dt.push((i, j, acc / total));
        }
    }
    (dz, dt)
}

/// Gradient on logits from a gradient on softmax outputs.
pub(crate) fn softmax_backward(probs: &Matrix, g: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(probs.rows(), probs.cols());
    for i in 0..probs.rows() {
        let (p, gi) = (probs.row(i), g.row(i));
        let inner = dot(p, gi);
        for ((o, &pv), &gv) in out.row_mut(i).iter_mut().zip(p).zip(gi) {
            *o = pv * (gv - inner);
        }
    }
    out
}

/// Fraction of labeled nodes in `split` whose argmax matches the label.
pub(crate) fn accuracy(probs: &Matrix, labels: &LabelSet, split: Split) -> Result<f64> {
    let nodes: Vec<(usize, usize)> = labels
        .indices(split)
        .into_iter()
        .filter_map(|i| labels.label(i).map(|y| (i, y)))
        .collect();
    if nodes.is_empty() {
        return Err(Error::EmptySplit(split.as_str()));
    }
    let hits = nodes
        .iter()
        .filter(|&&(i, y)| probs.argmax_row(i) == y)
        .count();
    Ok(hits as f64 / nodes.len() as f64)
}
