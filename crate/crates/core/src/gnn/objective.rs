//! The combined objective over the original and augmented channels.

use serde::{Deserialize, Serialize};

use super::forward::{backward_channel, forward_channel, ChannelCache, ChannelOutput};
use super::loss::{
    aggregate_predictions, allocate_prototypes, ce_grad_logits, dpa_gradients, loss_ce,
    loss_consistency, prototype_backward, softmax_backward, PrototypeOptions, Prototypes,
    Reduction,
};
use super::{derive_seed, Gradients, ModelParams};
use crate::error::{Error, Result};
use crate::graph::NormalizedAdjacency;
use crate::labels::LabelSet;
use crate::matrix::Matrix;

/// Weights on the loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Cross-entropy on the original channel. 1 in every training run;
    /// other values exist for checking terms in isolation.
    pub ce: f64,
    /// Cross-entropy on the augmented channels.
    pub ce_aug: f64,
    /// Consistency with the aggregated prediction.
    pub co: f64,
    /// Prototype alignment.
    pub dpa: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            ce: 1.0,
            ce_aug: 1.0,
            co: 0.5,
            dpa: 0.1,
        }
    }
}

impl LossWeights {
    /// Auxiliary weights zeroed, leaving the single-channel objective.
    pub fn zero() -> Self {
        Self {
            ce: 1.0,
            ce_aug: 0.0,
            co: 0.0,
            dpa: 0.0,
        }
    }

    pub fn as_tuple(&self) -> (f64, f64, f64) {
        (self.ce_aug, self.co, self.dpa)
    }

    /// Weight 1 on `term` (`ce`, `ce_aug`, `co` or `dpa`), 0 elsewhere.
    pub fn only(term: &str) -> Option<Self> {
        let mut w = Self {
            ce: 0.0,
            ..Self::zero()
        };
        match term {
            "ce" => w.ce = 1.0,
            "ce_aug" => w.ce_aug = 1.0,
            "co" => w.co = 1.0,
            "dpa" => w.dpa = 1.0,
            _ => return None,
        }
        Some(w)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    pub weights: LossWeights,
    /// Temperature of the prototype contrast.
    pub tau: f64,
    pub ce_reduction: Reduction,
    /// `Sum` adds the consistency penalty over all nodes; `Mean` divides
    /// that sum by the node count so it stays on the scale of the
    /// cross-entropy.
    pub co_reduction: Reduction,
    /// Sharpening temperature for the aggregated prediction; `None` keeps
    /// the plain mean.
    pub sharpen: Option<f64>,
    pub prototypes: PrototypeOptions,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            tau: 0.5,
            ce_reduction: Reduction::Mean,
            co_reduction: Reduction::Mean,
            sharpen: None,
            prototypes: PrototypeOptions::default(),
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        let w = self.weights;
        for (name, v) in [
            ("ce weight", w.ce),
            ("lambda_ce_aug", w.ce_aug),
            ("lambda_co", w.co),
            ("lambda_dpa", w.dpa),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "tau must be positive, got {}",
                self.tau
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub ce: f64,
    pub ce_aug: f64,
    pub co: f64,
    pub dpa: f64,
    pub total: f64,
    pub lambdas: (f64, f64, f64),
}

impl LossBreakdown {
    fn new(ce: f64, ce_aug: f64, co: f64, dpa: f64, w: LossWeights) -> Self {
        Self {
            ce,
            ce_aug,
            co,
            dpa,
            total: w.ce * ce + w.ce_aug * ce_aug + w.co * co + w.dpa * dpa,
            lambdas: w.as_tuple(),
        }
    }
}

fn co_norm(cfg: &ObjectiveConfig, n: usize) -> f64 {
    match cfg.co_reduction {
        Reduction::Mean => n as f64,
        Reduction::Sum => 1.0,
    }
}

/// Everything [`backward`] needs from a forward pass.
#[derive(Debug)]
pub struct ForwardCache<'a> {
    adjs: Vec<&'a NormalizedAdjacency>,
    x: &'a Matrix,
    labels: &'a LabelSet,
    cfg: ObjectiveConfig,
    channels: Vec<ChannelCache>,
    y_agg: Matrix,
    prototypes: Vec<Prototypes>,
}

impl ForwardCache<'_> {
    /// Channel 0 is the original graph; the rest follow the augmented list.
    pub fn outputs(&self) -> impl Iterator<Item = &ChannelOutput> {
        self.channels.iter().map(|c| &c.out)
    }

    pub fn y_agg(&self) -> &Matrix {
        &self.y_agg
    }

    /// Empty when there are no augmented channels.
    pub fn prototypes(&self) -> &[Prototypes] {
        &self.prototypes
    }
}

/// Runs every channel with the shared parameters and evaluates the loss.
/// Channel `i` draws its dropout masks from `derive_seed(seed, i)`.
#[allow(clippy::too_many_arguments)]
pub fn forward_all<'a>(
    params: &ModelParams,
    original: &'a NormalizedAdjacency,
    augmented: &[&'a NormalizedAdjacency],
    x: &'a Matrix,
    labels: &'a LabelSet,
    cfg: &ObjectiveConfig,
    dropout: f64,
    seed: u64,
) -> Result<(LossBreakdown, ForwardCache<'a>)> {
    forward_impl(
        params, original, augmented, x, labels, cfg, dropout, seed, None,
    )
}

/// [`forward_all`] with the aggregated prediction pinned to `y_agg`.
///
/// The aggregated prediction is a constant as far as gradients go, so a
/// finite-difference check of [`backward`] must hold it fixed while the
/// parameters move.
#[allow(clippy::too_many_arguments)]
pub fn forward_all_with_target<'a>(
    params: &ModelParams,
    original: &'a NormalizedAdjacency,
    augmented: &[&'a NormalizedAdjacency],
    x: &'a Matrix,
    labels: &'a LabelSet,
    cfg: &ObjectiveConfig,
    y_agg: &Matrix,
) -> Result<(LossBreakdown, ForwardCache<'a>)> {
    forward_impl(
        params,
        original,
        augmented,
        x,
        labels,
        cfg,
        0.0,
        0,
        Some(y_agg),
    )
}

#[allow(clippy::too_many_arguments)]
fn forward_impl<'a>(
    params: &ModelParams,
    original: &'a NormalizedAdjacency,
    augmented: &[&'a NormalizedAdjacency],
    x: &'a Matrix,
    labels: &'a LabelSet,
    cfg: &ObjectiveConfig,
    dropout: f64,
    seed: u64,
    pinned: Option<&Matrix>,
) -> Result<(LossBreakdown, ForwardCache<'a>)> {
    cfg.validate()?;
    params.check_finite()?;
    if labels.len() != original.n() {
        return Err(Error::shape("labels vs graph", original.n(), labels.len()));
    }
    let mut adjs = vec![original];
    adjs.extend_from_slice(augmented);
    for a in &adjs[1..] {
        if a.n() != original.n() {
            return Err(Error::shape("augmented graph nodes", original.n(), a.n()));
        }
    }
    let channels = adjs
        .iter()
        .enumerate()
        .map(|(i, adj)| forward_channel(adj, x, params, dropout, derive_seed(seed, i as u64)))
        .collect::<Result<Vec<_>>>()?;
    if channels
        .iter()
        .any(|c| c.out.params_version != params.version())
    {
        return Err(Error::Internal(
            "channels saw different parameter versions".into(),
        ));
    }

    let probs: Vec<&Matrix> = channels.iter().map(|c| &c.out.probs).collect();
    let ce = loss_ce(probs[0], labels, cfg.ce_reduction)?;
    let s = augmented.len();
    let y_agg = match pinned {
        Some(t) if t.shape() != probs[0].shape() => {
            return Err(Error::shape(
                "pinned y_agg",
                format!("{:?}", probs[0].shape()),
                format!("{:?}", t.shape()),
            ))
        }
        Some(t) => t.clone(),
        None => aggregate_predictions(&probs, cfg.sharpen)?,
    };
    let (mut ce_aug, mut co, mut dpa) = (0.0, 0.0, 0.0);
    let mut prototypes = Vec::new();
    if s > 0 {
        for p in &probs[1..] {
            ce_aug += loss_ce(p, labels, cfg.ce_reduction)? / s as f64;
        }
        co = loss_consistency(&probs[1..], &y_agg)? / co_norm(cfg, y_agg.rows());
        for c in &channels {
            prototypes.push(allocate_prototypes(
                &c.out.z,
                &c.out.probs,
                labels,
                &cfg.prototypes,
            )?);
        }
        for pr in &prototypes[1..] {
            dpa += dpa_gradients(&prototypes[0], pr, cfg.tau)?.0 / s as f64;
        }
    }
    let breakdown = LossBreakdown::new(ce, ce_aug, co, dpa, cfg.weights);
    let cache = ForwardCache {
        adjs,
        x,
        labels,
        cfg: *cfg,
        channels,
        y_agg,
        prototypes,
    };
    Ok((breakdown, cache))
}

/// Analytic gradient of the total loss with respect to every parameter.
pub fn backward(params: &ModelParams, cache: &ForwardCache<'_>) -> Result<Gradients> {
    let cfg = &cache.cfg;
    let w = cfg.weights;
    let n_ch = cache.channels.len();
    let s = n_ch - 1;
    let mut grads = Gradients::zeros_like(params);

    // gradients on each channel's prototype matrix
    let mut g_protos: Vec<Option<Matrix>> = vec![None; n_ch];
    if s > 0 && w.dpa != 0.0 {
        let base = &cache.prototypes[0];
        let mut g0 = Matrix::zeros(base.p.rows(), base.p.cols());
        for (i, pr) in cache.prototypes.iter().enumerate().skip(1) {
            let (_, ga, gb) = dpa_gradients(base, pr, cfg.tau)?;
            g0.add_scaled(&ga, w.dpa / s as f64);
            let mut gb = gb;
            gb.scale(w.dpa / s as f64);
            g_protos[i] = Some(gb);
        }
        g_protos[0] = Some(g0);
    }

    for (i, ch) in cache.channels.iter().enumerate() {
        let augmented = i > 0;
        let ce_scale = if augmented { w.ce_aug / s as f64 } else { w.ce };
        let co_active = augmented && w.co != 0.0;
        if ce_scale == 0.0 && !co_active && g_protos[i].is_none() {
            continue;
        }
        let probs = &ch.out.probs;
        let mut d_logits = if ce_scale != 0.0 {
            ce_grad_logits(probs, cache.labels, cfg.ce_reduction, ce_scale)?
        } else {
            Matrix::zeros(probs.rows(), probs.cols())
        };
        let mut d_probs: Option<Matrix> = None;
        if co_active {
            let mut g = probs.sub(&cache.y_agg);
            g.scale(2.0 * w.co / (s as f64 * co_norm(cfg, probs.rows())));
            d_probs = Some(g);
        }
        let mut d_z = None;
        if let Some(gp) = &g_protos[i] {
            let (dz, dt) = prototype_backward(&cache.prototypes[i], &ch.out.z, gp);
            let g = d_probs.get_or_insert_with(|| Matrix::zeros(probs.rows(), probs.cols()));
            for (node, class, v) in dt {
                g.set(node, class, g.get(node, class) + v);
            }
            d_z = Some(dz);
        }
        if let Some(g) = &d_probs {
            d_logits.add_scaled(&softmax_backward(probs, g), 1.0);
        }
        backward_channel(
            cache.adjs[i],
            cache.x,
            params,
            ch,
            &d_logits,
            d_z.as_ref(),
            &mut grads,
        )?;
    }
    grads.check_finite()?;
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{normalize, SparseGraph};
    use crate::labels::Split;

    fn instance() -> (
        NormalizedAdjacency,
        NormalizedAdjacency,
        Matrix,
        LabelSet,
        ModelParams,
    ) {
        let g = SparseGraph::from_edges(
            6,
            [
                (0, 1, 1.0),
                (1, 2, 1.0),
                (2, 3, 1.0),
                (3, 4, 1.0),
                (4, 5, 1.0),
            ],
        )
        .unwrap();
        let h = SparseGraph::from_edges(6, [(0, 2, 1.0), (1, 3, 1.0), (2, 4, 1.0), (3, 5, 1.0)])
            .unwrap();
        let x = Matrix::from_fn(6, 4, |i, j| ((i * 4 + j) as f64 * 0.53).cos());
        let labels = LabelSet::new(
            vec![Some(0), Some(1), Some(2), Some(0), None, None],
            vec![
                Split::Train,
                Split::Train,
                Split::Train,
                Split::Val,
                Split::None,
                Split::None,
            ],
            3,
        )
        .unwrap();
        let params = ModelParams::init(4, 5, 3, 3, 2);
        (
            normalize(&g).unwrap(),
            normalize(&h).unwrap(),
            x,
            labels,
            params,
        )
    }

    #[test]
    fn total_is_weighted_sum() {
        let (a, b, x, labels, p) = instance();
        let cfg = ObjectiveConfig::default();
        let (l, _) = forward_all(&p, &a, &[&b], &x, &labels, &cfg, 0.0, 0).unwrap();
        let expect = l.ce + 1.0 * l.ce_aug + 0.5 * l.co + 0.1 * l.dpa;
        assert!((l.total - expect).abs() < 1e-12);
    }

    #[test]
    fn identical_channels_agree() {
        let (a, _, x, labels, p) = instance();
        let (l, _) = forward_all(
            &p,
            &a,
            &[&a],
            &x,
            &labels,
            &ObjectiveConfig::default(),
            0.0,
            0,
        )
        .unwrap();
        assert_eq!(l.ce, l.ce_aug);
        assert!(l.co.abs() < 1e-30);
    }

    #[test]
    fn zero_weights_leave_plain_cross_entropy() {
        let (a, b, x, labels, p) = instance();
        let cfg = ObjectiveConfig {
            weights: LossWeights::zero(),
            ..Default::default()
        };
        let (l, _) = forward_all(&p, &a, &[&b], &x, &labels, &cfg, 0.0, 0).unwrap();
        assert_eq!(l.total, l.ce);
    }

    #[test]
    fn stale_cache_is_rejected() {
        let (a, b, x, labels, mut p) = instance();
        let cfg = ObjectiveConfig::default();
        let (_, cache) = forward_all(&p, &a, &[&b], &x, &labels, &cfg, 0.0, 0).unwrap();
        let flat = p.to_flat();
        p.set_flat(&flat).unwrap();
        assert!(matches!(backward(&p, &cache), Err(Error::Internal(_))));
    }

    fn fd_check(cfg: ObjectiveConfig) -> f64 {
        let (a, b, x, labels, p) = instance();
        let (_, cache) = forward_all(&p, &a, &[&b, &a], &x, &labels, &cfg, 0.0, 0).unwrap();
        let analytic = backward(&p, &cache).unwrap().to_flat();
        let target = cache.y_agg().clone();
        let numeric = crate::oracles::finite_diff_grad(
            |w| {
                let mut q = p.clone();
                q.set_flat(w).unwrap();
                forward_all_with_target(&q, &a, &[&b, &a], &x, &labels, &cfg, &target)
                    .unwrap()
                    .0
                    .total
            },
            &p.to_flat(),
            1e-5,
        )
        .unwrap();
        analytic
            .iter()
            .zip(&numeric)
            .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-6))
            .fold(0.0, f64::max)
    }

    #[test]
    fn combined_gradient_matches_finite_differences() {
        let err = fd_check(ObjectiveConfig::default());
        assert!(err < 1e-4, "max relative error {err}");
        let heavy = ObjectiveConfig {
            weights: LossWeights {
                ce: 1.0,
                ce_aug: 0.7,
                co: 2.0,
                dpa: 1.5,
            },
            ce_reduction: Reduction::Sum,
            co_reduction: Reduction::Sum,
            ..Default::default()
        };
        let err = fd_check(heavy);
        assert!(err < 1e-4, "max relative error {err}");
    }
}
