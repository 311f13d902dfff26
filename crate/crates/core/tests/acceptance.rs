//! Acceptance suite. Prints one PASS/FAIL/SKIP line per criterion and exits
//! nonzero if any criterion fails.
//!
//! Criterion 9 reads a converted Cora directory from `COATA_CORA_DIR` and
//! is skipped when the variable is unset.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use coata::ait::{lower_bound, ppr_oracle, push_ppr, PprConfig};
use coata::data_io::{generate_sbm, load_dataset, SbmSpec};
use coata::gnn::PredictionMode;
use coata::graph::normalize;
use coata::instances::{random_bipartite, random_graph, random_matrix};
use coata::oracles::{dense_fixed_point, OracleBudget};
use coata::pipeline::{augment, train_baseline, train_with, RunConfig};
use coata::selftest::{alignment_stats, descend_dpa, gradient_check};
use coata::tea::{homophily_closed_form, homophily_schedule, propagate_each, TeaConfig};

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

type Check = fn() -> Result<Outcome, Box<dyn std::error::Error>>;

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

/// Power-iteration count that truncates the PPR series below 1e-15.
fn oracle_iters(alpha: f64) -> usize {
    ((1e-15f64).ln() / (1.0 - alpha).ln()).ceil() as usize + 1
}

fn push_correctness() -> Result<Outcome, Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let budget = OracleBudget::default();
    let (mut err, mut over, mut mass): (f64, f64, f64) = (0.0, f64::NEG_INFINITY, 0.0);
    let start = Instant::now();
    for _ in 0..50 {
        let n_v = rng.random_range(2..200);
        let n_u = rng.random_range(1..=300 - n_v);
        let g = random_bipartite(n_v, n_u, rng.random_range(0.01..0.2), &mut rng);
        let alpha = rng.random_range(0.1..0.9);
        let s = rng.random_range(0..n_v);
        let res = push_ppr(&g, s, &PprConfig { alpha, r_max: 1e-8 })?;
        let exact = ppr_oracle(&g, s, alpha, oracle_iters(alpha), &budget)?;
        for (v, &p) in exact.iter().enumerate() {
            err = err.max((res.score(v) - p).abs());
            over = over.max(res.score(v) - p);
        }
        mass = mass.max((res.total_mass() - 1.0).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    Ok(verdict(
        err <= 1e-6 && over <= 1e-12 && mass <= 1e-10 && secs < 10.0,
        format!(
            "max error {err:.2e}, max overshoot {over:.2e}, mass defect {mass:.2e}, {secs:.2} s"
        ),
    ))
}

fn tea_convergence() -> Result<Outcome, Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let budget = OracleBudget::default();
    let mut worst_slack = f64::INFINITY;
    let mut worst_fixed: f64 = 0.0;
    for _ in 0..20 {
        let n = rng.random_range(5..60);
        let adj = normalize(&random_graph(n, rng.random_range(0.05..0.4), &mut rng))?;
        let x = random_matrix(n, rng.random_range(1..6), -1.0, 1.0, &mut rng);
        for beta in [0.1, 0.3, 0.5, 0.9] {
            let star = dense_fixed_point(&x, &adj, beta, &budget)?;
            let e0 = x.sub(&star).frobenius_norm();
            propagate_each(&x, &adj, TeaConfig { h: 500, beta }, |l, xl| {
                if l <= 50 {
                    let bound = (1.0 - beta).powi(l as i32) * e0 + 1e-9;
                    worst_slack = worst_slack.min(bound - xl.sub(&star).frobenius_norm());
                }
                if l == 500 {
                    worst_fixed = worst_fixed.max(xl.max_abs_diff(&star));
                }
            })?;
        }
    }
    Ok(verdict(
        worst_slack >= 0.0 && worst_fixed <= 1e-9,
        format!(
            "min slack to contraction bound {worst_slack:.2e}, step-500 error {worst_fixed:.2e}"
        ),
    ))
}

fn lower_bound_holds() -> Result<Outcome, Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let budget = OracleBudget::default();
    let (mut cases, mut violations, mut attempts) = (0, 0, 0);
    let mut min_gap = f64::INFINITY;
    while cases < 100 && attempts < 10_000 {
        attempts += 1;
        let g = random_bipartite(
            rng.random_range(2..25),
            rng.random_range(1..25),
            0.2,
            &mut rng,
        );
        let alpha = rng.random_range(0.1..0.9);
        let s = rng.random_range(0..g.n_v());
        let t = rng.random_range(0..g.n_v());
        let c = rng.random_range(1..=2);
        let cert = lower_bound(&g, s, t, c, alpha, &budget)?;
        if cert.path_count == 0 {
            continue;
        }
        cases += 1;
        let exact = ppr_oracle(&g, s, alpha, oracle_iters(alpha), &budget)?[t];
        min_gap = min_gap.min(exact - cert.bound);
        if exact < cert.bound {
            violations += 1;
        }
    }
    Ok(verdict(
        cases == 100 && violations == 0,
        format!("{cases} cases, {violations} violations, min gap {min_gap:.2e}"),
    ))
}

fn gradient_fidelity() -> Result<Outcome, Box<dyn std::error::Error>> {
    let mut worst: f64 = 0.0;
    let mut worst_term = "";
    for seed in 0..10 {
        for row in gradient_check(seed)? {
            if row.max_rel_error.is_nan() || row.max_rel_error > worst {
                worst = row.max_rel_error;
                worst_term = row.term;
            }
        }
    }
    Ok(verdict(
        worst <= 1e-4,
        format!("worst relative error {worst:.2e} ({worst_term})"),
    ))
}

fn prototype_alignment() -> Result<Outcome, Box<dyn std::error::Error>> {
    let (mut min_cos, mut min_margin) = (f64::INFINITY, f64::INFINITY);
    for seed in 0..5 {
        for c in [3, 8] {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random_matrix(c, 16, -1.0, 1.0, &mut rng);
            let q = random_matrix(c, 16, -1.0, 1.0, &mut rng);
            let (p, q) = descend_dpa(p, q, 0.5, 0.5, 2000)?;
            let (cos, margin) = alignment_stats(&p, &q);
            min_cos = min_cos.min(cos);
            min_margin = min_margin.min(margin);
        }
    }
    Ok(verdict(
        min_cos >= 0.99 && min_margin >= 0.05,
        format!("min same-class cosine {min_cos:.4}, min margin {min_margin:.4}"),
    ))
}

fn homophily_schedule_exact() -> Result<Outcome, Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let (p0, beta, l) = (
            rng.random::<f64>(),
            rng.random::<f64>(),
            rng.random_range(0..100),
        );
        worst =
            worst.max((homophily_schedule(p0, beta, l) - homophily_closed_form(p0, beta, l)).abs());
    }
    Ok(verdict(
        worst <= 1e-12,
        format!("max difference {worst:.2e}"),
    ))
}

/// Settings shared by the synthetic training criteria. The degree and
/// prototype weight were chosen on seeds 100..110, disjoint from the
/// seeds evaluated here.
fn sbm_config(seed: u64) -> RunConfig {
    RunConfig {
        seed,
        r_max: 1e-4,
        lambda_dpa: 1.0,
        prediction: PredictionMode::Ensemble,
        ..RunConfig::default()
    }
}

fn sbm_spec(seed: u64) -> SbmSpec {
    SbmSpec {
        n: 400,
        c: 2,
        feature_noise: 0.5,
        seed,
        ..SbmSpec::default()
    }
    .with_mixing(2.0, 0.2)
}

fn ablation_direction() -> Result<Outcome, Box<dyn std::error::Error>> {
    let mut sums = [0.0; 3];
    for seed in 0..5 {
        let ds = generate_sbm(&sbm_spec(seed))?;
        let cfg = sbm_config(seed);
        let aug = augment(&ds, &cfg)?;
        let plain = train_baseline(&ds, &cfg, None)?.test_acc;
        let no_dpa = train_with(
            &ds,
            &aug,
            &RunConfig {
                lambda_dpa: 0.0,
                ..cfg.clone()
            },
        )?
        .test_acc;
        let full = train_with(&ds, &aug, &cfg)?.test_acc;
        for (s, v) in sums.iter_mut().zip([plain, no_dpa, full]) {
            *s += v / 5.0;
        }
    }
    let [plain, no_dpa, full] = sums;
    Ok(verdict(
        full >= no_dpa && no_dpa >= plain && full - plain >= 0.01,
        format!(
            "mean test accuracy: full {full:.4}, without prototypes {no_dpa:.4}, plain {plain:.4}"
        ),
    ))
}

fn plain_equivalence() -> Result<Outcome, Box<dyn std::error::Error>> {
    let seed = 7;
    let ds = generate_sbm(&sbm_spec(seed))?;
    let cfg = RunConfig {
        lambda_ce_aug: 0.0,
        lambda_co: 0.0,
        lambda_dpa: 0.0,
        prediction: PredictionMode::Original,
        ..sbm_config(seed)
    };
    let aug = augment(&ds, &cfg)?;
    let dual = train_with(&ds, &aug, &cfg)?;
    let plain = train_baseline(&ds, &cfg, None)?;
    let (a, b) = (&dual.outcome.history, &plain.outcome.history);
    let mut worst = (dual.test_acc - plain.test_acc).abs();
    for (x, y) in a.iter().zip(b) {
        worst = worst
            .max((x.loss.total - y.loss.total).abs())
            .max((x.train_acc - y.train_acc).abs())
            .max((x.val_acc - y.val_acc).abs());
    }
    Ok(verdict(
        a.len() == b.len() && a.len() == cfg.epochs && worst <= 1e-10,
        format!(
            "{} epochs compared, max difference {worst:.2e}",
            a.len().min(b.len())
        ),
    ))
}

fn cora_sanity() -> Result<Outcome, Box<dyn std::error::Error>> {
    let Some(dir) = std::env::var_os("COATA_CORA_DIR").map(PathBuf::from) else {
        return Ok(Outcome::Skip("COATA_CORA_DIR not set".into()));
    };
    if !dir.is_dir() {
        return Ok(Outcome::Skip(format!("{} not found", dir.display())));
    }
    let ds = load_dataset(&dir)?;
    let mut mean = 0.0;
    for seed in 0..5 {
        let cfg = RunConfig {
            seed,
            ..RunConfig::default()
        };
        let aug = augment(&ds, &cfg)?;
        mean += train_with(&ds, &aug, &cfg)?.test_acc / 5.0;
    }
    Ok(verdict(
        mean >= 0.80,
        format!("mean test accuracy {mean:.4}"),
    ))
}

fn main() -> ExitCode {
    let criteria: [(&str, Check); 9] = [
        ("push PPR matches dense PPR", push_correctness),
        ("propagation contracts to its fixed point", tea_convergence),
        ("bipartite PPR lower bound", lower_bound_holds),
        (
            "analytic gradients match finite differences",
            gradient_fidelity,
        ),
        ("prototype alignment under descent", prototype_alignment),
        (
            "homophily recursion equals closed form",
            homophily_schedule_exact,
        ),
        ("ablation ordering on noisy SBM", ablation_direction),
        ("zero weights reproduce plain GCN", plain_equivalence),
        ("Cora accuracy band", cora_sanity),
    ];
    let only: Option<usize> = std::env::var("COATA_ACCEPTANCE_ONLY")
        .ok()
        .and_then(|s| s.parse().ok());
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let id = i + 1;
        if only.is_some_and(|o| o != id) {
            continue;
        }
        let start = Instant::now();
        let outcome = check().unwrap_or_else(|e| Outcome::Fail(format!("error: {e}")));
        let secs = start.elapsed().as_secs_f64();
        let (tag, detail) = match outcome {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Outcome::Skip(d) => ("SKIP", d),
        };
        println!("{tag} [{id}] {name}: {detail} ({secs:.1} s)");
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
