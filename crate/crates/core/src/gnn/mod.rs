//! Dual-channel GCN with shared weights, trained on supervised,
//! consistency and prototype-alignment losses with hand-written
//! backpropagation.
//!
//! One two-layer GCN encoder is run over the original adjacency and over
//! each co-augmented adjacency. All channels read the same [`ModelParams`];
//! gradients from every channel accumulate into one [`Gradients`].

mod forward;
mod loss;
mod objective;
mod train;

pub use forward::{gcn_forward, ChannelOutput};
pub use loss::{
    aggregate_predictions, allocate_prototypes, cosine, dpa_gradients, loss_ce, loss_consistency,
    loss_dpa, softmax_rows, PrototypeOptions, Prototypes, Reduction,
};
pub use objective::{
    backward, forward_all, forward_all_with_target, ForwardCache, LossBreakdown, LossWeights,
    ObjectiveConfig,
};
pub use train::{
    evaluate, evaluate_ensemble, predict, train, train_plain_gcn, EpochRecord, Optimizer,
    PredictionMode, TrainConfig, TrainData, TrainOutcome, TrainStatus,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Encoder weights: `w1` (k × d_h), `w2` (d_h × c), `w_proj` (d_h × d_p).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    #[serde(with = "matrix_serde")]
    pub w1: Matrix,
    #[serde(with = "matrix_serde")]
    pub w2: Matrix,
    #[serde(with = "matrix_serde")]
    pub w_proj: Matrix,
    #[serde(skip)]
    version: u64,
}

impl ModelParams {
    pub fn new(w1: Matrix, w2: Matrix, w_proj: Matrix) -> Result<Self> {
        if w1.cols() != w2.rows() || w1.cols() != w_proj.rows() {
            return Err(Error::shape(
                "ModelParams",
                format!("hidden width {}", w1.cols()),
                format!("w2 rows {}, w_proj rows {}", w2.rows(), w_proj.rows()),
            ));
        }
        Ok(Self {
            w1,
            w2,
            w_proj,
            version: 0,
        })
    }

    /// Glorot-uniform initialization from a seeded generator.
    pub fn init(k: usize, hidden: usize, classes: usize, proj: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut glorot = |rows: usize, cols: usize| {
            let limit = (6.0 / (rows + cols) as f64).sqrt();
            Matrix::from_fn(rows, cols, |_, _| rng.random_range(-limit..limit))
        };
        let w1 = glorot(k, hidden);
        let w2 = glorot(hidden, classes);
        let w_proj = glorot(hidden, proj);
        Self {
            w1,
            w2,
            w_proj,
            version: 0,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.w2.cols()
    }

    pub fn proj_dim(&self) -> usize {
        self.w_proj.cols()
    }

    /// Bumped on every in-place update; channel outputs record the version
    /// they were computed from.
    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn num_params(&self) -> usize {
        self.w1.as_slice().len() + self.w2.as_slice().len() + self.w_proj.as_slice().len()
    }

    /// `w1`, `w2`, `w_proj` concatenated in row-major order.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        out.extend_from_slice(self.w1.as_slice());
        out.extend_from_slice(self.w2.as_slice());
        out.extend_from_slice(self.w_proj.as_slice());
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::shape(
                "ModelParams::set_flat",
                self.num_params(),
                flat.len(),
            ));
        }
        let (a, rest) = flat.split_at(self.w1.as_slice().len());
        let (b, c) = rest.split_at(self.w2.as_slice().len());
        self.w1.as_mut_slice().copy_from_slice(a);
        self.w2.as_mut_slice().copy_from_slice(b);
        self.w_proj.as_mut_slice().copy_from_slice(c);
        self.version += 1;
        Ok(())
    }

    pub fn check_finite(&self) -> Result<()> {
        self.w1.check_finite("w1")?;
        self.w2.check_finite("w2")?;
        self.w_proj.check_finite("w_proj")
    }

    pub(crate) fn tensors_mut(&mut self) -> [&mut Matrix; 3] {
        self.version += 1;
        [&mut self.w1, &mut self.w2, &mut self.w_proj]
    }
}

/// Gradients with the same shapes as [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w1: Matrix,
    pub w2: Matrix,
    pub w_proj: Matrix,
}

impl Gradients {
    pub fn zeros_like(p: &ModelParams) -> Self {
        Self {
            w1: Matrix::zeros(p.w1.rows(), p.w1.cols()),
            w2: Matrix::zeros(p.w2.rows(), p.w2.cols()),
            w_proj: Matrix::zeros(p.w_proj.rows(), p.w_proj.cols()),
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend_from_slice(self.w1.as_slice());
        out.extend_from_slice(self.w2.as_slice());
        out.extend_from_slice(self.w_proj.as_slice());
        out
    }

    pub fn check_finite(&self) -> Result<()> {
        for (name, m) in [
            ("grad w1", &self.w1),
            ("grad w2", &self.w2),
            ("grad w_proj", &self.w_proj),
        ] {
            m.check_finite(name)?;
        }
        Ok(())
    }

    pub(crate) fn tensors(&self) -> [&Matrix; 3] {
        [&self.w1, &self.w2, &self.w_proj]
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Derives an independent stream seed from `(base, index)`; used for
/// per-epoch and per-channel dropout masks.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    splitmix64(base ^ splitmix64(index.wrapping_add(1)))
}

mod matrix_serde {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::matrix::Matrix;

    #[derive(Serialize, Deserialize)]
    struct Repr {
        rows: usize,
        cols: usize,
        data: Vec<f64>,
    }

    pub fn serialize<S: Serializer>(m: &Matrix, s: S) -> Result<S::Ok, S::Error> {
        Repr {
            rows: m.rows(),
            cols: m.cols(),
            data: m.as_slice().to_vec(),
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Matrix, D::Error> {
        let r = Repr::deserialize(d)?;
        Matrix::from_vec(r.rows, r.cols, r.data).map_err(serde::de::Error::custom)
    }
}
