//! Desk-scale property suite backed by the dense oracles.
//!
//! Each check measures a quantity, compares it with a threshold and reports
//! the margin. [`Fault`] deliberately corrupts one computation so callers
//! can confirm the suite notices.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ait::{lower_bound, ppr_oracle, push_ppr, PprConfig};
use crate::error::{Error, Result};
use crate::gnn::{
    backward, cosine, dpa_gradients, forward_all, forward_all_with_target, gcn_forward, loss_dpa,
    train, train_plain_gcn, LossWeights, ModelParams, ObjectiveConfig, Prototypes, TrainConfig,
    TrainData,
};
use crate::graph::{normalize, NormalizedAdjacency};
use crate::instances::{random_bipartite, random_graph, random_labels, random_matrix};
use crate::labels::LabelSet;
use crate::matrix::Matrix;
use crate::oracles::{dense_gcn_forward, dense_spectral_radius, finite_diff_grad, OracleBudget};
use crate::tea::{
    fixed_point, homophily_closed_form, homophily_schedule, propagate_each, TeaConfig,
};

/// A deliberate bug for exercising the suite.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fault {
    /// Scales the analytic projection-weight gradient by 1.1.
    Gradient,
    /// Adds 1e-3 to every push estimate.
    Push,
    /// Runs propagation with the wrong residual coefficient.
    Tea,
}

impl Fault {
    pub fn parse(s: &str) -> Option<Fault> {
        match s {
            "gradient" => Some(Fault::Gradient),
            "push" => Some(Fault::Push),
            "tea" => Some(Fault::Tea),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SelftestOptions {
    pub seed: u64,
    pub fault: Option<Fault>,
}

/// How a measurement is compared with its threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Goal {
    AtMost,
    AtLeast,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub property: &'static str,
    pub measured: f64,
    pub threshold: f64,
    pub goal: Goal,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        match self.goal {
            Goal::AtMost => self.measured <= self.threshold,
            Goal::AtLeast => self.measured >= self.threshold,
        }
    }

    /// Distance to the threshold on the passing side; negative on failure.
    pub fn margin(&self) -> f64 {
        match self.goal {
            Goal::AtMost => self.threshold - self.measured,
            Goal::AtLeast => self.measured - self.threshold,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SelftestReport {
    pub checks: Vec<CheckResult>,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(CheckResult::passed)
    }

    pub fn failures(&self) -> Vec<&CheckResult> {
        self.checks.iter().filter(|c| !c.passed()).collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            let op = match c.goal {
                Goal::AtMost => "<=",
                Goal::AtLeast => ">=",
            };
            let _ = writeln!(
                out,
                "{} {:<28} {:.3e} {op} {:.3e}  margin {:+.3e}  ({})",
                if c.passed() { "PASS" } else { "FAIL" },
                c.name,
                c.measured,
                c.threshold,
                c.margin(),
                c.property
            );
        }
        out
    }
}

fn check(
    name: &'static str,
    property: &'static str,
    measured: f64,
    goal: Goal,
    threshold: f64,
) -> CheckResult {
    // NaN measurements must fail whichever way the comparison points
    let measured = if measured.is_nan() {
        match goal {
            Goal::AtMost => f64::INFINITY,
            Goal::AtLeast => f64::NEG_INFINITY,
        }
    } else {
        measured
    };
    CheckResult {
        name,
        property,
        measured,
        threshold,
        goal,
    }
}

/// Runs every check. Errors only on internal failures; a failing property
/// shows up in the report.
pub fn run_selftest(opts: &SelftestOptions) -> Result<SelftestReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let budget = OracleBudget::default();
    let fault = opts.fault;
    let mut checks = Vec::new();

    // normalized adjacency
    let mut radius: f64 = 0.0;
    let mut asym: f64 = 0.0;
    for _ in 0..5 {
        let g = random_graph(30, 0.15, &mut rng);
        let (r, a) = dense_spectral_radius(&normalize(&g)?, &budget)?;
        radius = radius.max(r);
        asym = asym.max(a);
    }
    checks.push(check(
        "adjacency_symmetric",
        "normalized adjacency is symmetric",
        asym,
        Goal::AtMost,
        1e-15,
    ));
    checks.push(check(
        "adjacency_spectral_radius",
        "spectral radius of the normalized adjacency",
        radius,
        Goal::AtMost,
        1.0 + 1e-9,
    ));

    // propagation contracts to the fixed point
    let mut contraction: f64 = f64::INFINITY;
    let mut fixed_err: f64 = 0.0;
    for &beta in &[0.1, 0.5, 0.9] {
        let g = random_graph(25, 0.2, &mut rng);
        let adj = normalize(&g)?;
        let x = random_matrix(25, 4, -1.0, 1.0, &mut rng);
        let star = fixed_point(&x, &adj, beta, &budget)?;
        let run_beta = if fault == Some(Fault::Tea) {
            beta * 0.5
        } else {
            beta
        };
        let e0 = x.sub(&star).frobenius_norm();
        propagate_each(
            &x,
            &adj,
            TeaConfig {
                h: 500,
                beta: run_beta,
            },
            |l, xl| {
                let err = xl.sub(&star).frobenius_norm();
                if l <= 50 {
                    let bound = (1.0 - beta).powi(l as i32) * e0 + 1e-9;
                    contraction = contraction.min(bound - err);
                }
                if l == 500 {
                    fixed_err = fixed_err.max(xl.max_abs_diff(&star));
                }
            },
        )?;
    }
    checks.push(check(
        "tea_contraction",
        "error shrinks by (1-beta) per step",
        contraction,
        Goal::AtLeast,
        0.0,
    ));
    checks.push(check(
        "tea_fixed_point",
        "500 steps reach the dense fixed point",
        fixed_err,
        Goal::AtMost,
        1e-9,
    ));

    let mut sched: f64 = 0.0;
    for _ in 0..200 {
        let (p0, beta, l) = (
            rng.random::<f64>(),
            rng.random::<f64>(),
            rng.random_range(0..60),
        );
        sched =
            sched.max((homophily_schedule(p0, beta, l) - homophily_closed_form(p0, beta, l)).abs());
    }
    checks.push(check(
        "homophily_schedule",
        "recursion equals closed form",
        sched,
        Goal::AtMost,
        1e-12,
    ));

    // push against the dense PPR
    let mut push_err: f64 = 0.0;
    let mut over: f64 = f64::NEG_INFINITY;
    let mut mass: f64 = 0.0;
    let mut bound_gap: f64 = f64::INFINITY;
    for _ in 0..10 {
        let (n_v, n_u) = (rng.random_range(2..40), rng.random_range(1..40));
        let g = random_bipartite(n_v, n_u, 0.15, &mut rng);
        let alpha = rng.random_range(0.1..0.9);
        let s = rng.random_range(0..n_v);
        let res = push_ppr(&g, s, &PprConfig { alpha, r_max: 1e-8 })?;
        let exact = ppr_oracle(&g, s, alpha, 2000, &budget)?;
        let shift = if fault == Some(Fault::Push) {
            1e-3
        } else {
            0.0
        };
        for (v, &pv) in exact.iter().enumerate() {
            let est = res.score(v) + shift;
            push_err = push_err.max((est - pv).abs());
            over = over.max(est - pv);
        }
        mass = mass.max((res.total_mass() - 1.0).abs());
        for c in 1..=2 {
            let t = rng.random_range(0..n_v);
            let cert = lower_bound(&g, s, t, c, alpha, &budget)?;
            if cert.path_count > 0 {
                bound_gap = bound_gap.min(exact[t] - cert.bound);
            }
        }
    }
    checks.push(check(
        "push_accuracy",
        "push matches dense PPR at r_max 1e-8",
        push_err,
        Goal::AtMost,
        1e-6,
    ));
    checks.push(check(
        "push_underestimates",
        "push never exceeds the exact score",
        over,
        Goal::AtMost,
        1e-12,
    ));
    checks.push(check(
        "push_mass",
        "estimate plus residue sums to one",
        mass,
        Goal::AtMost,
        1e-10,
    ));
    checks.push(check(
        "ppr_lower_bound",
        "exact PPR is at least the path bound",
        bound_gap,
        Goal::AtLeast,
        0.0,
    ));

    // encoder forward and gradients
    let n = 12;
    let g = random_graph(n, 0.3, &mut rng);
    let h = random_graph(n, 0.3, &mut rng);
    let (adj, adj2) = (normalize(&g)?, normalize(&h)?);
    let x = random_matrix(n, 5, -1.0, 1.0, &mut rng);
    let labels = random_labels(n, 3, 2, &mut rng)?;
    let params = ModelParams::init(5, 6, 3, 4, rng.random());
    let out = gcn_forward(&adj, &x, &params, 0.0, 0)?;
    let dense = dense_gcn_forward(&adj, &x, &params.w1, &params.w2, &params.w_proj, &budget)?;
    checks.push(check(
        "gcn_forward_dense",
        "sparse forward equals dense forward",
        out.probs.max_abs_diff(&dense.probs),
        Goal::AtMost,
        1e-12,
    ));
    let simplex = (0..n)
        .map(|i| (out.probs.row(i).iter().sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max);
    checks.push(check(
        "softmax_simplex",
        "probability rows sum to one",
        simplex,
        Goal::AtMost,
        1e-9,
    ));

    let cfg = ObjectiveConfig {
        weights: LossWeights {
            ce: 1.0,
            ce_aug: 0.8,
            co: 1.5,
            dpa: 1.0,
        },
        ..Default::default()
    };
    let grad_err =
        objective_gradient_error(&params, &adj, &[&adj2], &x, &labels, &cfg, &budget, fault)?;
    checks.push(check(
        "gradient_fd",
        "analytic gradient matches central differences",
        grad_err,
        Goal::AtMost,
        1e-4,
    ));

    // prototype alignment as free parameters
    let mut min_cos: f64 = f64::INFINITY;
    let mut min_margin: f64 = f64::INFINITY;
    for seed in 0..2 {
        let mut r = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(seed));
        let p = random_matrix(3, 16, -1.0, 1.0, &mut r);
        let q = random_matrix(3, 16, -1.0, 1.0, &mut r);
        let (p, q) = descend_dpa(p, q, 0.5, 0.5, 2000)?;
        let (c, m) = alignment_stats(&p, &q);
        min_cos = min_cos.min(c);
        min_margin = min_margin.min(m);
    }
    checks.push(check(
        "dpa_alignment",
        "same-class prototypes align",
        min_cos,
        Goal::AtLeast,
        0.99,
    ));
    checks.push(check(
        "dpa_separation",
        "cross-class cosine stays below same-class",
        min_margin,
        Goal::AtLeast,
        0.05,
    ));

    let base = Prototypes::from_matrix(random_matrix(4, 6, -1.0, 1.0, &mut rng));
    let other = Prototypes::from_matrix(random_matrix(4, 6, -1.0, 1.0, &mut rng));
    let mut scaled = base.clone();
    for v in scaled.p.row_mut(2) {
        *v *= 7.5;
    }
    let inv = (loss_dpa(&base, &other, 0.5)? - loss_dpa(&scaled, &other, 0.5)?).abs();
    checks.push(check(
        "cosine_scale_invariance",
        "scaling a prototype leaves the loss unchanged",
        inv,
        Goal::AtMost,
        1e-12,
    ));

    // zero auxiliary weights reproduce the single-channel trainer
    let tcfg = TrainConfig {
        epochs: 15,
        hidden: 6,
        proj: 4,
        seed: opts.seed,
        objective: ObjectiveConfig {
            weights: LossWeights::zero(),
            ..Default::default()
        },
        ..Default::default()
    };
    let dual = train(
        &TrainData {
            x: &x,
            labels: &labels,
            original: &adj,
            augmented: vec![&adj2],
        },
        &tcfg,
    )?;
    let plain = train_plain_gcn(&x, &labels, &adj, &tcfg)?;
    let mut diff: f64 = 0.0;
    for (a, b) in dual.history.iter().zip(&plain.history) {
        diff = diff
            .max((a.loss.total - b.loss.total).abs())
            .max((a.val_acc - b.val_acc).abs());
    }
    let pa = dual.params.to_flat();
    let pb = plain.params.to_flat();
    diff = diff.max(
        pa.iter()
            .zip(&pb)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max),
    );
    if dual.history.len() != plain.history.len() {
        diff = f64::INFINITY;
    }
    checks.push(check(
        "plain_gcn_equivalence",
        "zero auxiliary weights match the plain trainer",
        diff,
        Goal::AtMost,
        1e-10,
    ));

    Ok(SelftestReport { checks })
}

#[allow(clippy::too_many_arguments)]
fn objective_gradient_error(
    params: &ModelParams,
    adj: &NormalizedAdjacency,
    augmented: &[&NormalizedAdjacency],
    x: &Matrix,
    labels: &LabelSet,
    cfg: &ObjectiveConfig,
    budget: &OracleBudget,
    fault: Option<Fault>,
) -> Result<f64> {
    let (_, cache) = forward_all(params, adj, augmented, x, labels, cfg, 0.0, 0)?;
    let mut grads = backward(params, &cache)?;
    if fault == Some(Fault::Gradient) {
        grads.w_proj.scale(1.1);
    }
    let target = cache.y_agg().clone();
    let numeric = finite_diff_grad(
        |w| {
            let mut q = params.clone();
            q.set_flat(w).expect("same length");
            forward_all_with_target(&q, adj, augmented, x, labels, cfg, &target)
                .map(|r| r.0.total)
                .unwrap_or(f64::NAN)
        },
        &params.to_flat(),
        budget.fd_step,
    )?;
    Ok(max_relative_error(&grads.to_flat(), &numeric))
}

/// One row of [`gradient_check`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientCheck {
    /// `ce`, `ce_aug`, `co`, `dpa` or `combined`.
    pub term: &'static str,
    pub max_rel_error: f64,
}

/// Compares the analytic gradient with central differences on a random
/// two-augmented-channel instance, once per loss term in isolation and once
/// for a mixed objective. Dropout is off.
pub fn gradient_check(seed: u64) -> Result<Vec<GradientCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(8..16);
    let c = rng.random_range(2..5);
    let k = rng.random_range(3..7);
    let adjs = [
        normalize(&random_graph(n, 0.3, &mut rng))?,
        normalize(&random_graph(n, 0.3, &mut rng))?,
        normalize(&random_graph(n, 0.3, &mut rng))?,
    ];
    let x = random_matrix(n, k, -1.0, 1.0, &mut rng);
    let labels = random_labels(n, c, 1, &mut rng)?;
    let params = ModelParams::init(
        k,
        rng.random_range(3..8),
        c,
        rng.random_range(2..6),
        rng.random(),
    );
    let budget = OracleBudget::default();
    let mixed = LossWeights {
        ce: 1.0,
        ce_aug: 0.7,
        co: 1.3,
        dpa: 0.9,
    };
    let mut out = Vec::new();
    for (term, weights) in [
        ("ce", LossWeights::only("ce")),
        ("ce_aug", LossWeights::only("ce_aug")),
        ("co", LossWeights::only("co")),
        ("dpa", LossWeights::only("dpa")),
        ("combined", Some(mixed)),
    ] {
        let cfg = ObjectiveConfig {
            weights: weights.expect("known term"),
            ..Default::default()
        };
        let err = objective_gradient_error(
            &params,
            &adjs[0],
            &[&adjs[1], &adjs[2]],
            &x,
            &labels,
            &cfg,
            &budget,
            None,
        )?;
        out.push(GradientCheck {
            term,
            max_rel_error: err,
        });
    }
    Ok(out)
}

/// Largest `|a − b| / max(|a|, |b|, 1e-6)` over paired entries.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

/// Plain gradient descent on the prototype loss alone, treating both
/// prototype matrices as free parameters.
pub fn descend_dpa(
    mut p: Matrix,
    mut q: Matrix,
    tau: f64,
    lr: f64,
    steps: usize,
) -> Result<(Matrix, Matrix)> {
    if p.shape() != q.shape() {
        return Err(Error::shape(
            "descend_dpa",
            format!("{:?}", p.shape()),
            format!("{:?}", q.shape()),
        ));
    }
    for _ in 0..steps {
        let (_, gp, gq) = dpa_gradients(
            &Prototypes::from_matrix(p.clone()),
            &Prototypes::from_matrix(q.clone()),
            tau,
        )?;
        p.add_scaled(&gp, -lr);
        q.add_scaled(&gq, -lr);
    }
    Ok((p, q))
}

/// `(min_j cos(p_j, q_j), min_j [cos(p_j, q_j) − max_{k≠j} cos(p_j, q_k)])`.
pub fn alignment_stats(p: &Matrix, q: &Matrix) -> (f64, f64) {
    let c = p.rows();
    let mut min_cos = f64::INFINITY;
    let mut min_margin = f64::INFINITY;
    for j in 0..c {
        let own = cosine(p.row(j), q.row(j));
        let cross = (0..c)
            .filter(|&k| k != j)
            .map(|k| cosine(p.row(j), q.row(k)))
            .fold(f64::NEG_INFINITY, f64::max);
        min_cos = min_cos.min(own);
        min_margin = min_margin.min(own - cross);
    }
    (min_cos, min_margin)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_term_passes_gradient_check() {
        for row in gradient_check(3).unwrap() {
            assert!(row.max_rel_error < 1e-4, "{row:?}");
        }
    }

    #[test]
    fn clean_run_passes() {
        let report = run_selftest(&SelftestOptions::default()).unwrap();
        assert!(report.passed(), "{}", report.to_text());
    }

    #[test]
    fn each_fault_is_caught_by_its_check() {
        for (fault, name) in [
            (Fault::Gradient, "gradient_fd"),
            (Fault::Push, "push_accuracy"),
            (Fault::Tea, "tea_fixed_point"),
        ] {
            let report = run_selftest(&SelftestOptions {
                seed: 0,
                fault: Some(fault),
            })
            .unwrap();
            let failed: Vec<_> = report.failures().iter().map(|c| c.name).collect();
            assert!(failed.contains(&name), "{fault:?} -> {failed:?}");
        }
    }
}
