//! End-to-end runs: augmentation preprocessing followed by training.
//!
//! [`RunConfig`] gathers every tunable under flat keys so a run can be
//! described by one JSON object and reproduced from it.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::ait::{
    build_bipartite, ppr_all_sources, reconstruct, BipartiteOptions, BipartiteStats, KnnSize,
    PprConfig, ReconstructionConfig, ScoreTable, SingletonPolicy, Strategy, DEFAULT_DOWN_WEIGHT,
};
use crate::data_io::Dataset;
use crate::error::{Error, Result};
use crate::gnn::{
    evaluate, evaluate_ensemble, train, train_plain_gcn, LossWeights, ModelParams, ObjectiveConfig,
    PredictionMode, PrototypeOptions, Reduction, TrainConfig, TrainData, TrainOutcome,
};
use crate::graph::{normalize, NormalizedAdjacency, SparseGraph};
use crate::labels::Split;
use crate::matrix::Matrix;
use crate::tea::{propagate, TeaConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SingletonMode {
    Drop,
    DownWeight,
    Keep,
}

/// Which features the encoder reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GnnInput {
    /// The raw feature matrix.
    #[default]
    Raw,
    /// The propagated features that also feed the bipartite graph.
    Enriched,
}

/// Every tunable of a run, under flat keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub h: usize,
    pub beta: f64,
    pub alpha: f64,
    pub r_max: f64,
    /// Candidates kept per PPR source.
    pub top_t: usize,
    pub singleton: SingletonMode,
    pub singleton_weight: f64,
    /// One augmented channel per entry.
    pub channels: Vec<Strategy>,
    /// KNN neighbor count; `None` matches the original edge count.
    pub k: Option<usize>,
    pub k_add: usize,
    pub k_del: usize,
    pub tau: f64,
    pub lambda_ce_aug: f64,
    pub lambda_co: f64,
    pub lambda_dpa: f64,
    pub ce_reduction: Reduction,
    pub co_reduction: Reduction,
    pub sharpen: Option<f64>,
    pub t_min: Option<f64>,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub hidden: usize,
    pub proj: usize,
    pub dropout: f64,
    pub seed: u64,
    pub gnn_input: GnnInput,
    pub prediction: PredictionMode,
    /// Forces a single PPR worker.
    pub deterministic: bool,
    /// PPR worker threads; 0 lets the thread pool decide.
    pub workers: usize,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let tea = TeaConfig::homophilous();
        let ppr = PprConfig::homophilous();
        let recon = ReconstructionConfig::default();
        let train = TrainConfig::default();
        let obj = train.objective;
        Self {
            h: tea.h,
            beta: tea.beta,
            alpha: ppr.alpha,
            r_max: ppr.r_max,
            top_t: crate::ait::DEFAULT_TOP_T,
            singleton: SingletonMode::Drop,
            singleton_weight: DEFAULT_DOWN_WEIGHT,
            channels: vec![Strategy::Knn, Strategy::EdgeMod],
            k: None,
            k_add: recon.k_add,
            k_del: recon.k_del,
            tau: obj.tau,
            lambda_ce_aug: obj.weights.ce_aug,
            lambda_co: obj.weights.co,
            lambda_dpa: obj.weights.dpa,
            ce_reduction: obj.ce_reduction,
            co_reduction: obj.co_reduction,
            sharpen: obj.sharpen,
            t_min: obj.prototypes.t_min,
            lr: train.lr,
            momentum: train.momentum,
            weight_decay: train.weight_decay,
            epochs: train.epochs,
            hidden: train.hidden,
            proj: train.proj,
            dropout: train.dropout,
            seed: train.seed,
            gnn_input: GnnInput::Raw,
            prediction: PredictionMode::Original,
            deterministic: false,
            workers: 0,
            data: None,
            out: None,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn tea(&self) -> TeaConfig {
        TeaConfig {
            h: self.h,
            beta: self.beta,
        }
    }

    pub fn ppr(&self) -> PprConfig {
        PprConfig {
            alpha: self.alpha,
            r_max: self.r_max,
        }
    }

    pub fn bipartite(&self) -> BipartiteOptions {
        BipartiteOptions {
            singleton: match self.singleton {
                SingletonMode::Drop => SingletonPolicy::Drop,
                SingletonMode::DownWeight => SingletonPolicy::DownWeight(self.singleton_weight),
                SingletonMode::Keep => SingletonPolicy::Keep,
            },
        }
    }

    pub fn reconstruction(&self, strategy: Strategy) -> ReconstructionConfig {
        ReconstructionConfig {
            strategy,
            k: self.k.map_or(KnnSize::Auto, KnnSize::Fixed),
            k_add: self.k_add,
            k_del: self.k_del,
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            lr: self.lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            dropout: self.dropout,
            hidden: self.hidden,
            proj: self.proj,
            seed: self.seed,
            objective: ObjectiveConfig {
                weights: LossWeights {
                    ce: 1.0,
                    ce_aug: self.lambda_ce_aug,
                    co: self.lambda_co,
                    dpa: self.lambda_dpa,
                },
                tau: self.tau,
                ce_reduction: self.ce_reduction,
                co_reduction: self.co_reduction,
                sharpen: self.sharpen,
                prototypes: PrototypeOptions { t_min: self.t_min },
            },
            prediction: self.prediction,
        }
    }

    pub fn effective_workers(&self) -> usize {
        if self.deterministic {
            1
        } else {
            self.workers
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.tea().validate()?;
        self.ppr().validate()?;
        self.train().validate()?;
        if self.top_t == 0 {
            return Err(Error::InvalidConfig("top_t must be positive".into()));
        }
        if self.k == Some(0) {
            return Err(Error::InvalidConfig("k must be positive".into()));
        }
        if !(self.singleton_weight > 0.0 && self.singleton_weight <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "singleton_weight must lie in (0, 1], got {}",
                self.singleton_weight
            )));
        }
        Ok(())
    }
}

/// Output of the preprocessing stage.
#[derive(Debug, Clone)]
pub struct Augmentation {
    pub enriched: Matrix,
    pub bipartite_stats: BipartiteStats,
    pub scores: ScoreTable,
    /// One graph per configured channel, in order.
    pub graphs: Vec<(Strategy, SparseGraph)>,
}

impl Augmentation {
    pub fn summary(&self, original: &SparseGraph) -> String {
        let mut s = format!(
            "original edges: {}\nclamped negatives: {}\nzero columns dropped: {}\nsingleton columns: {}\ntotal pushes: {}\n",
            original.num_edges(),
            self.bipartite_stats.clamped_negatives,
            self.bipartite_stats.zero_columns,
            self.bipartite_stats.singleton_columns,
            self.scores.total_pushes,
        );
        for (strategy, g) in &self.graphs {
            s.push_str(&format!(
                "{} edges: {}\n",
                strategy_name(*strategy),
                g.num_edges()
            ));
        }
        s
    }
}

pub fn strategy_name(s: Strategy) -> &'static str {
    match s {
        Strategy::Knn => "knn",
        Strategy::EdgeMod => "edgemod",
    }
}

/// Propagates features, scores node pairs on the bipartite projection and
/// builds one reconstructed graph per configured channel.
pub fn augment(ds: &Dataset, cfg: &RunConfig) -> Result<Augmentation> {
    cfg.validate()?;
    let adj = normalize(&ds.graph)?;
    let enriched = propagate(&ds.features, &adj, cfg.tea())?.h_matrix;
    let bip = build_bipartite(&enriched, &cfg.bipartite())?;
    let scores = ppr_all_sources(&bip, &cfg.ppr(), cfg.top_t, cfg.effective_workers())?;
    let graphs = cfg
        .channels
        .iter()
        .map(|&s| reconstruct(&ds.graph, &scores, &cfg.reconstruction(s)).map(|g| (s, g)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Augmentation {
        enriched,
        bipartite_stats: bip.stats(),
        scores,
        graphs,
    })
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub outcome: TrainOutcome,
    pub val_acc: f64,
    pub test_acc: f64,
}

fn encoder_input<'a>(
    ds: &'a Dataset,
    aug: Option<&'a Augmentation>,
    cfg: &RunConfig,
) -> Result<&'a Matrix> {
    match (cfg.gnn_input, aug) {
        (GnnInput::Raw, _) => Ok(&ds.features),
        (GnnInput::Enriched, Some(a)) => Ok(&a.enriched),
        (GnnInput::Enriched, None) => Err(Error::InvalidConfig(
            "enriched input needs an augmentation".into(),
        )),
    }
}

fn score(
    outcome: TrainOutcome,
    adjs: &[&NormalizedAdjacency],
    x: &Matrix,
    ds: &Dataset,
    mode: PredictionMode,
) -> Result<RunResult> {
    let acc = |split| match mode {
        PredictionMode::Original => evaluate(&outcome.params, adjs[0], x, &ds.labels, split),
        PredictionMode::Ensemble => evaluate_ensemble(&outcome.params, adjs, x, &ds.labels, split),
    };
    let val_acc = acc(Split::Val)?;
    let test_acc = acc(Split::Test)?;
    Ok(RunResult {
        outcome,
        val_acc,
        test_acc,
    })
}

/// Trains on the original graph plus every augmented channel.
pub fn train_with(ds: &Dataset, aug: &Augmentation, cfg: &RunConfig) -> Result<RunResult> {
    let x = encoder_input(ds, Some(aug), cfg)?;
    let graphs: Vec<&SparseGraph> = aug.graphs.iter().map(|(_, g)| g).collect();
    train_on_graphs(ds, x, &graphs, cfg)
}

/// Like [`train_with`] for augmented graphs that were computed earlier,
/// e.g. read back from edge files.
pub fn train_on_graphs(
    ds: &Dataset,
    x: &Matrix,
    graphs: &[&SparseGraph],
    cfg: &RunConfig,
) -> Result<RunResult> {
    cfg.validate()?;
    let original = normalize(&ds.graph)?;
    let augmented: Vec<NormalizedAdjacency> =
        graphs.iter().map(|g| normalize(g)).collect::<Result<_>>()?;
    let data = TrainData {
        x,
        labels: &ds.labels,
        original: &original,
        augmented: augmented.iter().collect(),
    };
    let outcome = train(&data, &cfg.train())?;
    let mut adjs = vec![&original];
    adjs.extend(augmented.iter());
    score(outcome, &adjs, x, ds, cfg.prediction)
}

/// Validation and test accuracy of trained parameters. Ensemble mode
/// averages over the original graph and `graphs`.
pub fn score_params(
    ds: &Dataset,
    params: &ModelParams,
    x: &Matrix,
    graphs: &[&SparseGraph],
    mode: PredictionMode,
) -> Result<(f64, f64)> {
    let original = normalize(&ds.graph)?;
    let augmented: Vec<NormalizedAdjacency> =
        graphs.iter().map(|g| normalize(g)).collect::<Result<_>>()?;
    let mut adjs = vec![&original];
    adjs.extend(augmented.iter());
    let acc = |split| match mode {
        PredictionMode::Original => evaluate(params, &original, x, &ds.labels, split),
        PredictionMode::Ensemble => evaluate_ensemble(params, &adjs, x, &ds.labels, split),
    };
    Ok((acc(Split::Val)?, acc(Split::Test)?))
}

/// Encoder input for `cfg` without running the full augmentation.
pub fn encoder_features(ds: &Dataset, cfg: &RunConfig) -> Result<Matrix> {
    match cfg.gnn_input {
        GnnInput::Raw => Ok(ds.features.clone()),
        GnnInput::Enriched => {
            Ok(propagate(&ds.features, &normalize(&ds.graph)?, cfg.tea())?.h_matrix)
        }
    }
}

/// Single-channel baseline on the original graph.
pub fn train_baseline(
    ds: &Dataset,
    cfg: &RunConfig,
    enriched: Option<&Augmentation>,
) -> Result<RunResult> {
    let original = normalize(&ds.graph)?;
    let x = encoder_input(ds, enriched, cfg)?;
    let outcome = train_plain_gcn(x, &ds.labels, &original, &cfg.train())?;
    score(outcome, &[&original], x, ds, PredictionMode::Original)
}
