//! Full-batch training, plain-GCN baseline, and evaluation.

use serde::{Deserialize, Serialize};

use super::forward::{backward_channel, forward_channel, gcn_forward};
use super::loss::{accuracy, ce_grad_logits, loss_ce};
use super::objective::{backward, forward_all, LossBreakdown, ObjectiveConfig};
use super::{derive_seed, Gradients, ModelParams};
use crate::error::{Error, Result};
use crate::graph::NormalizedAdjacency;
use crate::labels::{LabelSet, Split};
use crate::matrix::Matrix;

/// Which channel(s) produce predictions at evaluation time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionMode {
    #[default]
    Original,
    /// Mean of the probabilities from all channels.
    Ensemble,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// 0 disables momentum.
    pub momentum: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    pub hidden: usize,
    pub proj: usize,
    pub seed: u64,
    pub objective: ObjectiveConfig,
    pub prediction: PredictionMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 5e-4,
            dropout: 0.5,
            hidden: 64,
            proj: 32,
            seed: 0,
            objective: ObjectiveConfig::default(),
            prediction: PredictionMode::Original,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "lr must be positive, got {}",
                self.lr
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "weight_decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidConfig(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        if self.hidden == 0 || self.proj == 0 {
            return Err(Error::InvalidConfig(
                "hidden and proj widths must be positive".into(),
            ));
        }
        self.objective.validate()
    }

    /// The initial parameters a run with this config starts from.
    pub fn init_params(&self, input_dim: usize, classes: usize) -> ModelParams {
        ModelParams::init(
            input_dim,
            self.hidden,
            classes,
            self.proj,
            derive_seed(self.seed, u64::MAX),
        )
    }
}

/// Gradient descent with optional heavy-ball momentum and L2 decay.
#[derive(Debug, Clone)]
pub struct Optimizer {
    lr: f64,
    momentum: f64,
    weight_decay: f64,
    velocity: Option<[Matrix; 3]>,
}

impl Optimizer {
    pub fn new(lr: f64, momentum: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            momentum,
            weight_decay,
            velocity: None,
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &Gradients) {
        let g = grads.tensors();
        let (lr, mu, wd) = (self.lr, self.momentum, self.weight_decay);
        let vel = self
            .velocity
            .get_or_insert_with(|| g.map(|m| Matrix::zeros(m.rows(), m.cols())));
        for ((w, g), v) in params.tensors_mut().into_iter().zip(g).zip(vel.iter_mut()) {
            for ((wi, &gi), vi) in w
                .as_mut_slice()
                .iter_mut()
                .zip(g.as_slice())
                .zip(v.as_mut_slice())
            {
                let step = gi + wd * *wi;
                if mu > 0.0 {
                    *vi = mu * *vi + step;
                    *wi -= lr * *vi;
                } else {
                    *wi -= lr * step;
                }
            }
        }
    }
}

/// Features, labels and the adjacencies one training run sees.
#[derive(Debug, Clone)]
pub struct TrainData<'a> {
    pub x: &'a Matrix,
    pub labels: &'a LabelSet,
    pub original: &'a NormalizedAdjacency,
    pub augmented: Vec<&'a NormalizedAdjacency>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Loss of the parameters going into this epoch's update.
    pub loss: LossBreakdown,
    /// Accuracies after the update, without dropout.
    pub train_acc: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum TrainStatus {
    Completed,
    /// Training stopped because the loss or a gradient became non-finite.
    Diverged {
        epoch: usize,
    },
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the best validation epoch (ties go to the earlier
    /// epoch), or the initial parameters when no epoch ran.
    pub params: ModelParams,
    pub history: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub status: TrainStatus,
}

impl TrainOutcome {
    /// Metric history as CSV.
    pub fn history_csv(&self) -> String {
        let mut out = String::from("epoch,ce,ce_aug,co,dpa,total,train_acc,val_acc\n");
        for r in &self.history {
            let l = &r.loss;
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.epoch, l.ce, l.ce_aug, l.co, l.dpa, l.total, r.train_acc, r.val_acc
            ));
        }
        out
    }
}

fn check_data(x: &Matrix, labels: &LabelSet, adj: &NormalizedAdjacency) -> Result<()> {
    if x.rows() != adj.n() || labels.len() != adj.n() {
        return Err(Error::shape(
            "training data rows",
            adj.n(),
            format!("features {}, labels {}", x.rows(), labels.len()),
        ));
    }
    if labels.indices(Split::Train).is_empty() {
        return Err(Error::EmptySplit("train"));
    }
    Ok(())
}

struct Tracker {
    history: Vec<EpochRecord>,
    best: Option<(usize, f64, ModelParams)>,
    has_val: bool,
}

impl Tracker {
    fn new(labels: &LabelSet) -> Self {
        Self {
            history: Vec::new(),
            best: None,
            has_val: labels
                .indices(Split::Val)
                .iter()
                .any(|&i| labels.label(i).is_some()),
        }
    }

    fn record(
        &mut self,
        epoch: usize,
        loss: LossBreakdown,
        params: &ModelParams,
        adj: &NormalizedAdjacency,
        x: &Matrix,
        labels: &LabelSet,
    ) -> Result<()> {
        let probs = gcn_forward(adj, x, params, 0.0, 0)?.probs;
        let train_acc = accuracy(&probs, labels, Split::Train)?;
        let val_acc = if self.has_val {
            accuracy(&probs, labels, Split::Val)?
        } else {
            f64::NAN
        };
        self.history.push(EpochRecord {
            epoch,
            loss,
            train_acc,
            val_acc,
        });
        let better = match &self.best {
            None => true,
            Some((_, best, _)) => self.has_val && val_acc > *best,
        };
        if better {
            self.best = Some((epoch, val_acc, params.clone()));
        }
        if !self.has_val {
            // without a validation split the latest epoch wins
            self.best = Some((epoch, val_acc, params.clone()));
        }
        Ok(())
    }

    fn finish(self, init: ModelParams, status: TrainStatus) -> TrainOutcome {
        let (best_epoch, params) = match self.best {
            Some((e, _, p)) => (Some(e), p),
            None => (None, init),
        };
        TrainOutcome {
            params,
            history: self.history,
            best_epoch,
            status,
        }
    }
}

/// Trains the shared encoder on the combined objective.
pub fn train(data: &TrainData<'_>, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_data(data.x, data.labels, data.original)?;
    let init = cfg.init_params(data.x.cols(), data.labels.num_classes());
    let mut params = init.clone();
    let mut opt = Optimizer::new(cfg.lr, cfg.momentum, cfg.weight_decay);
    let mut tracker = Tracker::new(data.labels);
    for epoch in 1..=cfg.epochs {
        let (loss, cache) = forward_all(
            &params,
            data.original,
            &data.augmented,
            data.x,
            data.labels,
            &cfg.objective,
            cfg.dropout,
            derive_seed(cfg.seed, epoch as u64),
        )?;
        if !loss.total.is_finite() {
            log::error!("loss became non-finite at epoch {epoch}");
            return Ok(tracker.finish(init, TrainStatus::Diverged { epoch }));
        }
        let grads = match backward(&params, &cache) {
            Ok(g) => g,
            Err(Error::NonFinite(what)) => {
                log::error!("non-finite gradient ({what}) at epoch {epoch}");
                return Ok(tracker.finish(init, TrainStatus::Diverged { epoch }));
            }
            Err(e) => return Err(e),
        };
        drop(cache);
        opt.step(&mut params, &grads);
        tracker.record(epoch, loss, &params, data.original, data.x, data.labels)?;
    }
    Ok(tracker.finish(init, TrainStatus::Completed))
}

/// A standalone single-channel GCN trained on cross-entropy alone. Uses
/// the same initialization and dropout streams as [`train`]'s original
/// channel, so zero auxiliary weights reproduce it exactly.
pub fn train_plain_gcn(
    x: &Matrix,
    labels: &LabelSet,
    adj: &NormalizedAdjacency,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_data(x, labels, adj)?;
    let init = cfg.init_params(x.cols(), labels.num_classes());
    let mut params = init.clone();
    let mut opt = Optimizer::new(cfg.lr, cfg.momentum, cfg.weight_decay);
    let mut tracker = Tracker::new(labels);
    let weights = cfg.objective.weights;
    for epoch in 1..=cfg.epochs {
        let seed = derive_seed(derive_seed(cfg.seed, epoch as u64), 0);
        let ch = forward_channel(adj, x, &params, cfg.dropout, seed)?;
        let ce = loss_ce(&ch.out.probs, labels, cfg.objective.ce_reduction)?;
        if !ce.is_finite() {
            return Ok(tracker.finish(init, TrainStatus::Diverged { epoch }));
        }
        let d_logits = ce_grad_logits(&ch.out.probs, labels, cfg.objective.ce_reduction, 1.0)?;
        let mut grads = Gradients::zeros_like(&params);
        backward_channel(adj, x, &params, &ch, &d_logits, None, &mut grads)?;
        if grads.check_finite().is_err() {
            return Ok(tracker.finish(init, TrainStatus::Diverged { epoch }));
        }
        opt.step(&mut params, &grads);
        let loss = LossBreakdown {
            ce,
            ce_aug: 0.0,
            co: 0.0,
            dpa: 0.0,
            total: ce,
            lambdas: weights.as_tuple(),
        };
        tracker.record(epoch, loss, &params, adj, x, labels)?;
    }
    Ok(tracker.finish(init, TrainStatus::Completed))
}

/// Class probabilities from one adjacency, without dropout.
pub fn predict(params: &ModelParams, adj: &NormalizedAdjacency, x: &Matrix) -> Result<Matrix> {
    Ok(gcn_forward(adj, x, params, 0.0, 0)?.probs)
}

/// Accuracy of the original-channel prediction on `split`.
pub fn evaluate(
    params: &ModelParams,
    adj: &NormalizedAdjacency,
    x: &Matrix,
    labels: &LabelSet,
    split: Split,
) -> Result<f64> {
    accuracy(&predict(params, adj, x)?, labels, split)
}

/// Accuracy of the channel-averaged prediction on `split`.
pub fn evaluate_ensemble(
    params: &ModelParams,
    adjs: &[&NormalizedAdjacency],
    x: &Matrix,
    labels: &LabelSet,
    split: Split,
) -> Result<f64> {
    let first = adjs
        .first()
        .ok_or_else(|| Error::InvalidConfig("ensemble needs at least one graph".into()))?;
    let mut mean = predict(params, first, x)?;
    for adj in &adjs[1..] {
        mean.add_scaled(&predict(params, adj, x)?, 1.0);
    }
    mean.scale(1.0 / adjs.len() as f64);
    accuracy(&mean, labels, split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{normalize, SparseGraph};

    fn toy() -> (NormalizedAdjacency, Matrix, LabelSet) {
        // two cliques of 10 with features pointing at their class
        let mut edges = Vec::new();
        for block in 0..2 {
            for i in 0..10 {
                for j in i + 1..10 {
                    edges.push((block * 10 + i, block * 10 + j, 1.0));
                }
            }
        }
        edges.push((0, 10, 1.0));
        let g = SparseGraph::from_edges(20, edges).unwrap();
        let x = Matrix::from_fn(20, 2, |i, j| if (i / 10) == j { 1.0 } else { 0.1 });
        let labels: Vec<Option<usize>> = (0..20).map(|i| Some(i / 10)).collect();
        let splits = (0..20)
            .map(|i| match i % 10 {
                0..=3 => Split::Train,
                4..=6 => Split::Val,
                _ => Split::Test,
            })
            .collect();
        (
            normalize(&g).unwrap(),
            x,
            LabelSet::new(labels, splits, 2).unwrap(),
        )
    }

    #[test]
    fn zero_epochs_returns_init() {
        let (adj, x, labels) = toy();
        let cfg = TrainConfig {
            epochs: 0,
            ..Default::default()
        };
        let out = train(
            &TrainData {
                x: &x,
                labels: &labels,
                original: &adj,
                augmented: vec![&adj],
            },
            &cfg,
        )
        .unwrap();
        assert_eq!(out.params, cfg.init_params(2, 2));
        assert!(out.history.is_empty());
        assert_eq!(out.best_epoch, None);
    }

    #[test]
    fn separable_toy_is_learned() {
        let (adj, x, labels) = toy();
        let cfg = TrainConfig {
            epochs: 100,
            dropout: 0.0,
            lr: 0.05,
            hidden: 8,
            proj: 4,
            ..Default::default()
        };
        let out = train(
            &TrainData {
                x: &x,
                labels: &labels,
                original: &adj,
                augmented: vec![&adj],
            },
            &cfg,
        )
        .unwrap();
        assert_eq!(out.status, TrainStatus::Completed);
        assert_eq!(
            evaluate(&out.params, &adj, &x, &labels, Split::Test).unwrap(),
            1.0
        );
    }

    #[test]
    fn ensemble_of_one_equals_original() {
        let (adj, x, labels) = toy();
        let p = TrainConfig::default().init_params(2, 2);
        let a = evaluate(&p, &adj, &x, &labels, Split::Val).unwrap();
        let b = evaluate_ensemble(&p, &[&adj], &x, &labels, Split::Val).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn history_csv_has_header_and_rows() {
        let (adj, x, labels) = toy();
        let cfg = TrainConfig {
            epochs: 3,
            ..Default::default()
        };
        let out = train_plain_gcn(&x, &labels, &adj, &cfg).unwrap();
        let csv = out.history_csv();
        assert!(csv.starts_with("epoch,ce,ce_aug,co,dpa,total,train_acc,val_acc\n"));
        assert_eq!(csv.lines().count(), 4);
    }
}
