//! `coata` command-line driver.
//!
//! Exit codes: 0 on success, 1 for internal failures (including failed
//! checks and diverged training), 2 for bad usage or unreadable input.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use coata::ait::Strategy;
use coata::data_io::{embeddings_to_tsv, generate_sbm, load_dataset, write_text, Dataset, SbmSpec};
use coata::gnn::{gcn_forward, ModelParams, TrainStatus};
use coata::graph::{normalize, SparseGraph};
use coata::pipeline::{
    augment, encoder_features, score_params, strategy_name, train_on_graphs, train_with, RunConfig,
};
use coata::selftest::{gradient_check, run_selftest, Fault, SelftestOptions};

#[derive(Parser, Debug)]
#[command(name = "coata", version, about = "Co-augmented graph training")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// JSON run configuration; flags below override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Dataset directory.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Single-threaded, bit-reproducible run.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Worker threads for the PPR stage.
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build the augmented graphs and write them as edge lists.
    Augment,
    /// Train the dual-channel model.
    Train {
        /// Directory holding edge files from an earlier `augment`.
        #[arg(long)]
        augmented: Option<PathBuf>,
    },
    /// Score a saved checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Directory holding augmented edge files, for ensemble prediction.
        #[arg(long)]
        augmented: Option<PathBuf>,
    },
    /// Grid over alpha, beta and h.
    Sweep {
        #[arg(long, value_delimiter = ',')]
        alphas: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        betas: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        hs: Vec<usize>,
        /// Seeds per grid point, counting up from the configured seed.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
    },
    /// Compare analytic and numerical gradients on random instances.
    Gradcheck {
        #[arg(long, default_value_t = 10)]
        instances: u64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
    },
    /// Run the built-in property suite.
    Selftest {
        /// Corrupt one computation on purpose: gradient, push or tea.
        #[arg(long, value_parser = parse_fault)]
        inject_fault: Option<Fault>,
    },
    /// Write a planted-partition dataset.
    GenerateSbm {
        #[arg(long, default_value_t = 400)]
        nodes: usize,
        #[arg(long, default_value_t = 2)]
        classes: usize,
        #[arg(long, default_value_t = 4.0)]
        degree: f64,
        /// Fraction of inter-class edges.
        #[arg(long, default_value_t = 0.2)]
        inter: f64,
        #[arg(long, default_value_t = 8)]
        feature_dim: usize,
        #[arg(long, default_value_t = 0.5)]
        noise: f64,
    },
}

fn parse_fault(s: &str) -> Result<Fault, String> {
    Fault::parse(s).ok_or_else(|| format!("unknown fault `{s}` (expected gradient, push or tea)"))
}

#[derive(Debug)]
enum Failure {
    /// Bad usage or input; exit 2.
    Input(String),
    /// Exit 1.
    Internal(String),
}

impl From<coata::Error> for Failure {
    fn from(e: coata::Error) -> Self {
        use coata::Error as E;
        match e {
            E::Io { .. }
            | E::Parse { .. }
            | E::InvalidConfig(_)
            | E::InvalidLabels(_)
            | E::Json(_)
            | E::EmptyGraph
            | E::EmptySplit(_)
            | E::NodeOutOfRange { .. }
            | E::DuplicateEdge(..)
            | E::SelfLoop(_)
            | E::BadWeight { .. }
            | E::EmptyAttributeSet => Failure::Input(e.to_string()),
            other => Failure::Internal(other.to_string()),
        }
    }
}

type CliResult<T> = Result<T, Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Internal(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Augment => cmd_augment(&cli.common),
        Command::Train { augmented } => cmd_train(&cli.common, augmented.as_deref()),
        Command::Eval {
            checkpoint,
            augmented,
        } => cmd_eval(&cli.common, &checkpoint, augmented.as_deref()),
        Command::Sweep {
            alphas,
            betas,
            hs,
            seeds,
        } => cmd_sweep(&cli.common, alphas, betas, hs, seeds),
        Command::Gradcheck { instances, tol } => cmd_gradcheck(&cli.common, instances, tol),
        Command::Selftest { inject_fault } => cmd_selftest(&cli.common, inject_fault),
        Command::GenerateSbm {
            nodes,
            classes,
            degree,
            inter,
            feature_dim,
            noise,
        } => {
            let spec = SbmSpec {
                n: nodes,
                c: classes,
                feature_dim,
                feature_noise: noise,
                seed: cli.common.seed.unwrap_or(0),
                ..SbmSpec::default()
            }
            .with_mixing(degree, inter);
            let out = cli
                .common
                .out
                .ok_or_else(|| Failure::Input("--out is required".into()))?;
            let ds = generate_sbm(&spec)?;
            ds.save(&out)?;
            println!(
                "wrote {} nodes, {} edges to {}",
                ds.n(),
                ds.graph.num_edges(),
                out.display()
            );
            Ok(())
        }
    }
}

/// File config, then flag overrides.
fn resolve_config(common: &Common) -> CliResult<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
            RunConfig::from_json(&text)
                .map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?
        }
        None => RunConfig::default(),
    };
    if let Some(d) = &common.data {
        cfg.data = Some(d.clone());
    }
    if let Some(o) = &common.out {
        cfg.out = Some(o.clone());
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if common.deterministic {
        cfg.deterministic = true;
    }
    if let Some(w) = common.workers {
        cfg.workers = w;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load(cfg: &RunConfig) -> CliResult<Dataset> {
    let dir = cfg.data.as_ref().ok_or_else(|| {
        Failure::Input("no dataset given (use --data or the `data` config key)".into())
    })?;
    if !dir.is_dir() {
        return Err(Failure::Input(format!(
            "dataset directory not found: {}",
            dir.display()
        )));
    }
    Ok(load_dataset(dir)?)
}

fn out_dir(cfg: &RunConfig) -> CliResult<PathBuf> {
    let dir = cfg.out.clone().ok_or_else(|| {
        Failure::Input("no output directory given (use --out or the `out` config key)".into())
    })?;
    fs::create_dir_all(&dir).map_err(|e| Failure::Input(format!("{}: {e}", dir.display())))?;
    Ok(dir)
}

/// Runs with more than one worker are not bit-reproducible, so the
/// snapshot records the effective count.
fn write_config(dir: &Path, cfg: &RunConfig) -> CliResult<()> {
    Ok(write_text(&dir.join("config.json"), &cfg.to_json())?)
}

fn edge_file(dir: &Path, s: Strategy) -> PathBuf {
    dir.join(format!("augmented_edges.{}.tsv", strategy_name(s)))
}

fn read_augmented(dir: &Path, cfg: &RunConfig, n: usize) -> CliResult<Vec<SparseGraph>> {
    cfg.channels
        .iter()
        .map(|&s| {
            let path = edge_file(dir, s);
            if !path.is_file() {
                return Err(Failure::Input(format!(
                    "missing augmented edge file {}",
                    path.display()
                )));
            }
            Ok(SparseGraph::read_edge_list(&path, n)?)
        })
        .collect()
}

fn cmd_augment(common: &Common) -> CliResult<()> {
    let cfg = resolve_config(common)?;
    let ds = load(&cfg)?;
    let out = out_dir(&cfg)?;
    write_config(&out, &cfg)?;
    let aug = augment(&ds, &cfg)?;
    for (s, g) in &aug.graphs {
        g.write_edge_list(&edge_file(&out, *s))?;
    }
    print!("{}", aug.summary(&ds.graph));
    Ok(())
}

fn cmd_train(common: &Common, augmented: Option<&Path>) -> CliResult<()> {
    let cfg = resolve_config(common)?;
    let ds = load(&cfg)?;
    let out = out_dir(&cfg)?;
    write_config(&out, &cfg)?;
    let (result, x) = match augmented {
        Some(dir) => {
            let graphs = read_augmented(dir, &cfg, ds.n())?;
            let refs: Vec<&SparseGraph> = graphs.iter().collect();
            let x = encoder_features(&ds, &cfg)?;
            (train_on_graphs(&ds, &x, &refs, &cfg)?, x)
        }
        None => {
            let aug = augment(&ds, &cfg)?;
            for (s, g) in &aug.graphs {
                g.write_edge_list(&edge_file(&out, *s))?;
            }
            let x = encoder_features(&ds, &cfg)?;
            (train_with(&ds, &aug, &cfg)?, x)
        }
    };
    let outcome = &result.outcome;
    write_text(&out.join("metrics.csv"), &outcome.history_csv())?;
    let checkpoint = serde_json::to_string_pretty(&outcome.params)
        .map_err(|e| Failure::Internal(e.to_string()))?;
    write_text(&out.join("checkpoint.json"), &checkpoint)?;
    let z = gcn_forward(&normalize(&ds.graph)?, &x, &outcome.params, 0.0, 0)?.z;
    write_text(&out.join("embeddings.tsv"), &embeddings_to_tsv(&z))?;
    let summary = serde_json::json!({
        "dataset": ds.name,
        "provenance": ds.provenance,
        "epochs_run": outcome.history.len(),
        "best_epoch": outcome.best_epoch,
        "diverged_at": match outcome.status {
            TrainStatus::Completed => None,
            TrainStatus::Diverged { epoch } => Some(epoch),
        },
        "val_acc": result.val_acc,
        "test_acc": result.test_acc,
    });
    write_text(&out.join("summary.json"), &format!("{summary:#}\n"))?;
    println!(
        "val_acc {:.4}\ntest_acc {:.4}",
        result.val_acc, result.test_acc
    );
    if let TrainStatus::Diverged { epoch } = outcome.status {
        return Err(Failure::Internal(format!(
            "training diverged at epoch {epoch}"
        )));
    }
    Ok(())
}

fn cmd_eval(common: &Common, checkpoint: &Path, augmented: Option<&Path>) -> CliResult<()> {
    let cfg = resolve_config(common)?;
    let ds = load(&cfg)?;
    let text = fs::read_to_string(checkpoint)
        .map_err(|e| Failure::Input(format!("{}: {e}", checkpoint.display())))?;
    let params: ModelParams = serde_json::from_str(&text)
        .map_err(|e| Failure::Input(format!("{}: {e}", checkpoint.display())))?;
    let graphs = match augmented {
        Some(dir) => read_augmented(dir, &cfg, ds.n())?,
        None => Vec::new(),
    };
    let mode = if graphs.is_empty() {
        coata::gnn::PredictionMode::Original
    } else {
        cfg.prediction
    };
    let refs: Vec<&SparseGraph> = graphs.iter().collect();
    let x = encoder_features(&ds, &cfg)?;
    let (val, test) = score_params(&ds, &params, &x, &refs, mode)?;
    println!("val_acc {val:.4}\ntest_acc {test:.4}");
    Ok(())
}

fn cmd_sweep(
    common: &Common,
    alphas: Vec<f64>,
    betas: Vec<f64>,
    hs: Vec<usize>,
    seeds: u64,
) -> CliResult<()> {
    let base = resolve_config(common)?;
    let ds = load(&base)?;
    let out = out_dir(&base)?;
    write_config(&out, &base)?;
    let alphas = if alphas.is_empty() {
        vec![base.alpha]
    } else {
        alphas
    };
    let betas = if betas.is_empty() {
        vec![base.beta]
    } else {
        betas
    };
    let hs = if hs.is_empty() { vec![base.h] } else { hs };
    let mut csv = String::from("alpha,beta,h,seed,val_acc,test_acc\n");
    for &alpha in &alphas {
        for &beta in &betas {
            for &h in &hs {
                for seed in base.seed..base.seed + seeds {
                    let cfg = RunConfig {
                        alpha,
                        beta,
                        h,
                        seed,
                        ..base.clone()
                    };
                    cfg.validate()?;
                    let aug = augment(&ds, &cfg)?;
                    let r = train_with(&ds, &aug, &cfg)?;
                    let row = format!("{alpha},{beta},{h},{seed},{},{}\n", r.val_acc, r.test_acc);
                    print!("{row}");
                    csv.push_str(&row);
                }
            }
        }
    }
    Ok(write_text(&out.join("sweep.csv"), &csv)?)
}

fn cmd_gradcheck(common: &Common, instances: u64, tol: f64) -> CliResult<()> {
    let seed = common.seed.unwrap_or(0);
    let mut worst = 0.0_f64;
    for i in 0..instances {
        for row in gradient_check(seed + i)? {
            println!("instance {i} {:<8} {:.3e}", row.term, row.max_rel_error);
            worst = worst.max(row.max_rel_error);
        }
    }
    println!("worst relative error {worst:.3e} (tolerance {tol:e})");
    if worst.is_nan() || worst > tol {
        return Err(Failure::Internal(format!(
            "gradient check failed: {worst:.3e} > {tol:e}"
        )));
    }
    Ok(())
}

fn cmd_selftest(common: &Common, fault: Option<Fault>) -> CliResult<()> {
    let report = run_selftest(&SelftestOptions {
        seed: common.seed.unwrap_or(0),
        fault,
    })?;
    print!("{}", report.to_text());
    let failed: Vec<&str> = report.failures().iter().map(|c| c.name).collect();
    if failed.is_empty() {
        println!("all {} checks passed", report.checks.len());
        Ok(())
    } else {
        Err(Failure::Internal(format!(
            "failed checks: {}",
            failed.join(", ")
        )))
    }
}
