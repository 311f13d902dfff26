//! Dataset files, synthetic planted-partition graphs, and run artifacts.
//!
//! A dataset directory holds four plain-text files:
//!
//! | file | line format |
//! |------|-------------|
//! | `edges.tsv` | `u<TAB>v[<TAB>w]` |
//! | `features.tsv` | header `#n=<n> k=<k>`, then `node<TAB>dim<TAB>value` |
//! | `labels.tsv` | `node<TAB>class` |
//! | `splits.tsv` | `node<TAB>train\|val\|test` |
//!
//! A dense comma-separated `features.csv` (one row per node) may replace
//! `features.tsv`. Blank lines and lines starting with `#` are skipped
//! everywhere except the features header.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::SparseGraph;
use crate::labels::{LabelSet, Split};
use crate::matrix::Matrix;

/// A source file and the SHA-256 of its bytes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub graph: SparseGraph,
    pub features: Matrix,
    pub labels: LabelSet,
    pub provenance: Vec<Provenance>,
}

/// Published size of a benchmark graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KnownStats {
    pub name: &'static str,
    pub nodes: usize,
    pub edges: usize,
    pub classes: usize,
    pub features: usize,
}

pub const KNOWN_DATASETS: [KnownStats; 7] = [
    KnownStats {
        name: "cora",
        nodes: 2708,
        edges: 5429,
        classes: 7,
        features: 1433,
    },
    KnownStats {
        name: "citeseer",
        nodes: 3327,
        edges: 4732,
        classes: 6,
        features: 3703,
    },
    KnownStats {
        name: "pubmed",
        nodes: 19717,
        edges: 44338,
        classes: 3,
        features: 500,
    },
    KnownStats {
        name: "coauthor-cs",
        nodes: 18333,
        edges: 163788,
        classes: 15,
        features: 6805,
    },
    KnownStats {
        name: "coauthor-physics",
        nodes: 34493,
        edges: 495924,
        classes: 5,
        features: 8415,
    },
    KnownStats {
        name: "chameleon",
        nodes: 2277,
        edges: 36101,
        classes: 5,
        features: 2325,
    },
    KnownStats {
        name: "squirrel",
        nodes: 5201,
        edges: 217073,
        classes: 5,
        features: 2089,
    },
];

/// Looks up a benchmark by name, ignoring case, `_`/`-` and a few common
/// aliases.
pub fn known_stats(name: &str) -> Option<&'static KnownStats> {
    let key = name.to_ascii_lowercase().replace('_', "-");
    let key = match key.as_str() {
        "cs" => "coauthor-cs",
        "physics" | "phy" | "coauthor-phy" => "coauthor-physics",
        other => other,
    };
    KNOWN_DATASETS.iter().find(|s| s.name == key)
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.graph.n()
    }

    /// Differences between this dataset's shape and the published one.
    /// Empty when the name is not a known benchmark.
    pub fn stat_mismatches(&self) -> Vec<String> {
        let Some(k) = known_stats(&self.name) else {
            return Vec::new();
        };
        let mut out = Vec::new();
        let pairs = [
            ("nodes", k.nodes, self.n()),
            ("edges", k.edges, self.graph.num_edges()),
            ("classes", k.classes, self.labels.num_classes()),
            ("features", k.features, self.features.cols()),
        ];
        for (what, expected, actual) in pairs {
            if expected != actual {
                out.push(format!(
                    "{}: expected {expected} {what}, found {actual}",
                    k.name
                ));
            }
        }
        out
    }

    /// Writes the four canonical files into `dir`, creating it if needed.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.graph.write_edge_list(&dir.join("edges.tsv"))?;
        write_text(&dir.join("features.tsv"), &features_to_tsv(&self.features))?;
        let mut labels = String::new();
        let mut splits = String::new();
        for i in 0..self.n() {
            if let Some(y) = self.labels.label(i) {
                let _ = writeln!(labels, "{i}\t{y}");
            }
            let s = self.labels.split(i);
            if s != Split::None {
                let _ = writeln!(splits, "{i}\t{}", s.as_str());
            }
        }
        write_text(&dir.join("labels.tsv"), &labels)?;
        write_text(&dir.join("splits.tsv"), &splits)
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn provenance(path: &Path) -> Result<Provenance> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Provenance {
        path: path.to_path_buf(),
        sha256: sha256_hex(&bytes),
    })
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

/// Sparse triplet features, zero entries omitted, sorted by node then dim.
pub fn features_to_tsv(x: &Matrix) -> String {
    let mut out = format!("#n={} k={}\n", x.rows(), x.cols());
    for i in 0..x.rows() {
        for (j, &v) in x.row(i).iter().enumerate() {
            if v != 0.0 {
                let _ = writeln!(out, "{i}\t{j}\t{v}");
            }
        }
    }
    out
}

pub fn parse_features_tsv(text: &str, path: &Path) -> Result<Matrix> {
    let header = text.lines().next().unwrap_or("").trim();
    let (n, k) =
        parse_header(header).ok_or_else(|| parse_err(path, 1, "expected header `#n=<n> k=<k>`"))?;
    let mut x = Matrix::zeros(n, k);
    let mut seen = std::collections::HashSet::new();
    for (ln, line) in content_lines(text).filter(|&(ln, _)| ln > 1) {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 3 {
            return Err(parse_err(
                path,
                ln,
                format!("expected 3 fields, found {}", f.len()),
            ));
        }
        let i: usize = f[0]
            .parse()
            .map_err(|_| parse_err(path, ln, format!("bad node id `{}`", f[0])))?;
        let j: usize = f[1]
            .parse()
            .map_err(|_| parse_err(path, ln, format!("bad dimension `{}`", f[1])))?;
        let v: f64 = f[2]
            .parse()
            .map_err(|_| parse_err(path, ln, format!("bad value `{}`", f[2])))?;
        if i >= n || j >= k {
            return Err(parse_err(
                path,
                ln,
                format!("entry ({i}, {j}) outside {n} x {k}"),
            ));
        }
        if !v.is_finite() {
            return Err(parse_err(path, ln, "non-finite value"));
        }
        if !seen.insert((i, j)) {
            return Err(parse_err(path, ln, format!("duplicate entry ({i}, {j})")));
        }
        x.set(i, j, v);
    }
    Ok(x)
}

fn parse_header(line: &str) -> Option<(usize, usize)> {
    let rest = line.strip_prefix('#')?;
    let mut n = None;
    let mut k = None;
    for tok in rest.split_whitespace() {
        if let Some(v) = tok.strip_prefix("n=") {
            n = v.parse().ok();
        } else if let Some(v) = tok.strip_prefix("k=") {
            k = v.parse().ok();
        }
    }
    Some((n?, k?))
}

pub fn parse_features_csv(text: &str, path: &Path) -> Result<Matrix> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (ln, line) in content_lines(text) {
        let row = line
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| parse_err(path, ln, format!("bad value `{t}`")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(parse_err(
                    path,
                    ln,
                    format!("expected {} columns, found {}", first.len(), row.len()),
                ));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(parse_err(path, 0, "no feature rows"));
    }
    Ok(Matrix::from_rows(&rows))
}

fn parse_pairs<'a>(
    text: &'a str,
    path: &'a Path,
    n: usize,
) -> impl Iterator<Item = Result<(usize, usize, &'a str)>> + 'a {
    content_lines(text).map(move |(ln, line)| {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 2 {
            return Err(parse_err(
                path,
                ln,
                format!("expected 2 fields, found {}", f.len()),
            ));
        }
        let i: usize = f[0]
            .parse()
            .map_err(|_| parse_err(path, ln, format!("bad node id `{}`", f[0])))?;
        if i >= n {
            return Err(parse_err(
                path,
                ln,
                format!("node {i} out of range for {n} nodes"),
            ));
        }
        Ok((ln, i, f[1]))
    })
}

/// Reads a dataset directory. The dataset name is the directory's file
/// name; known benchmarks have their sizes checked and any mismatch is
/// logged as a warning.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    if !dir.is_dir() {
        return Err(Error::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "dataset directory not found"),
        ));
    }
    let mut provenance_list = Vec::new();
    let tsv = dir.join("features.tsv");
    let csv = dir.join("features.csv");
    let features = if tsv.exists() {
        provenance_list.push(provenance(&tsv)?);
        parse_features_tsv(&read_text(&tsv)?, &tsv)?
    } else {
        provenance_list.push(provenance(&csv)?);
        parse_features_csv(&read_text(&csv)?, &csv)?
    };
    let n = features.rows();

    let edges_path = dir.join("edges.tsv");
    provenance_list.push(provenance(&edges_path)?);
    let graph = SparseGraph::read_edge_list(&edges_path, n)?;

    let labels_path = dir.join("labels.tsv");
    provenance_list.push(provenance(&labels_path)?);
    let labels_text = read_text(&labels_path)?;
    let mut labels: Vec<Option<usize>> = vec![None; n];
    for item in parse_pairs(&labels_text, &labels_path, n) {
        let (ln, i, v) = item?;
        let y: usize = v
            .parse()
            .map_err(|_| parse_err(&labels_path, ln, format!("bad class `{v}`")))?;
        if labels[i].replace(y).is_some() {
            return Err(parse_err(
                &labels_path,
                ln,
                format!("node {i} labeled twice"),
            ));
        }
    }

    let splits_path = dir.join("splits.tsv");
    provenance_list.push(provenance(&splits_path)?);
    let splits_text = read_text(&splits_path)?;
    let mut splits = vec![Split::None; n];
    for item in parse_pairs(&splits_text, &splits_path, n) {
        let (ln, i, v) = item?;
        let s = match Split::parse(v) {
            Some(s @ (Split::Train | Split::Val | Split::Test)) => s,
            _ => return Err(parse_err(&splits_path, ln, format!("unknown split `{v}`"))),
        };
        if splits[i] != Split::None {
            return Err(parse_err(
                &splits_path,
                ln,
                format!("node {i} assigned to two splits"),
            ));
        }
        splits[i] = s;
    }
    let classes = labels.iter().flatten().max().map_or(0, |m| m + 1);
    let labels = LabelSet::new(labels, splits, classes)?;

    let name = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    let ds = Dataset {
        name,
        graph,
        features,
        labels,
        provenance: provenance_list,
    };
    for m in ds.stat_mismatches() {
        log::warn!("{m}");
    }
    Ok(ds)
}

/// Planted-partition graph with class-indicative features.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SbmSpec {
    pub n: usize,
    pub c: usize,
    pub p_in: f64,
    pub p_out: f64,
    /// Split into `c` equal class blocks; leftover dimensions carry noise only.
    pub feature_dim: usize,
    /// Standard deviation of the Gaussian noise added to every feature.
    pub feature_noise: f64,
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub seed: u64,
}

impl Default for SbmSpec {
    fn default() -> Self {
        Self {
            n: 400,
            c: 2,
            p_in: 0.032,
            p_out: 0.008,
            feature_dim: 8,
            feature_noise: 0.5,
            train_per_class: 20,
            val_per_class: 30,
            seed: 0,
        }
    }
}

impl SbmSpec {
    /// Chooses `p_in` and `p_out` so the expected average degree is
    /// `avg_degree` and a fraction `inter` of expected edges cross classes.
    pub fn with_mixing(mut self, avg_degree: f64, inter: f64) -> Self {
        let sizes = class_sizes(self.n, self.c);
        let pairs = |m: usize| (m * m.saturating_sub(1) / 2) as f64;
        let intra_pairs: f64 = sizes.iter().map(|&m| pairs(m)).sum();
        let inter_pairs = pairs(self.n) - intra_pairs;
        let edges = avg_degree * self.n as f64 / 2.0;
        self.p_in = ((1.0 - inter) * edges / intra_pairs).min(1.0);
        self.p_out = if inter_pairs > 0.0 {
            (inter * edges / inter_pairs).min(1.0)
        } else {
            0.0
        };
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("p_in", self.p_in), ("p_out", self.p_out)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must lie in [0, 1], got {p}"
                )));
            }
        }
        if self.c < 2 || self.n < self.c {
            return Err(Error::InvalidConfig(format!(
                "need 2 <= c <= n, got c = {}, n = {}",
                self.c, self.n
            )));
        }
        if self.feature_dim < self.c {
            return Err(Error::InvalidConfig(format!(
                "feature_dim {} must be at least the class count {}",
                self.feature_dim, self.c
            )));
        }
        if !(self.feature_noise >= 0.0 && self.feature_noise.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "feature_noise must be non-negative, got {}",
                self.feature_noise
            )));
        }
        let smallest = class_sizes(self.n, self.c).into_iter().min().unwrap_or(0);
        if smallest < self.train_per_class + self.val_per_class {
            return Err(Error::InvalidConfig(format!(
                "class of {smallest} nodes cannot hold {} train + {} val nodes",
                self.train_per_class, self.val_per_class
            )));
        }
        Ok(())
    }
}

/// `n / c` nodes per class with the remainder going to the last class.
fn class_sizes(n: usize, c: usize) -> Vec<usize> {
    let base = n / c;
    let mut sizes = vec![base; c];
    if let Some(last) = sizes.last_mut() {
        *last += n - base * c;
    }
    sizes
}

fn class_of(i: usize, n: usize, c: usize) -> usize {
    (i / (n / c)).min(c - 1)
}

pub fn generate_sbm(spec: &SbmSpec) -> Result<Dataset> {
    spec.validate()?;
    let (n, c) = (spec.n, spec.c);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let class: Vec<usize> = (0..n).map(|i| class_of(i, n, c)).collect();

    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let p = if class[u] == class[v] {
                spec.p_in
            } else {
                spec.p_out
            };
            if p > 0.0 && rng.random::<f64>() < p {
                edges.push((u, v, 1.0));
            }
        }
    }
    let graph = SparseGraph::from_edges(n, edges)?;

    let block = spec.feature_dim / c;
    let noise = Normal::new(0.0, spec.feature_noise.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::InvalidConfig(format!("feature noise: {e}")))?;
    let features = Matrix::from_fn(n, spec.feature_dim, |i, j| {
        let signal = if j / block == class[i] && j < block * c {
            1.0
        } else {
            0.0
        };
        let eps = if spec.feature_noise > 0.0 {
            noise.sample(&mut rng)
        } else {
            0.0
        };
        (signal + eps).max(0.0)
    });

    let mut splits = vec![Split::Test; n];
    for j in 0..c {
        let mut members: Vec<usize> = (0..n).filter(|&i| class[i] == j).collect();
        members.shuffle(&mut rng);
        for (r, &i) in members.iter().enumerate() {
            if r < spec.train_per_class {
                splits[i] = Split::Train;
            } else if r < spec.train_per_class + spec.val_per_class {
                splits[i] = Split::Val;
            }
        }
    }
    let labels = LabelSet::new(class.into_iter().map(Some).collect(), splits, c)?;
    Ok(Dataset {
        name: "sbm".into(),
        graph,
        features,
        labels,
        provenance: Vec::new(),
    })
}

/// `id<TAB>v_1<TAB>…<TAB>v_d` per row.
pub fn embeddings_to_tsv(z: &Matrix) -> String {
    let mut out = String::new();
    for i in 0..z.rows() {
        let _ = write!(out, "{i}");
        for v in z.row(i) {
            let _ = write!(out, "\t{v}");
        }
        out.push('\n');
    }
    out
}
