//! File formats and persistence: counts and adjacency tables, retained
//! draws, summaries, metric tables and the run manifest. All writes go
//! through a write-then-rename so partially written files never land under
//! their final name.

use crate::family::Family;
use crate::graph::{AdjacencyGraph, GraphError};
use crate::grouped::{BoundaryGrid, GroupedCounts, GroupedError};
use crate::mcmc::{AcceptanceReport, PosteriorDraws, PriorKind};
use crate::summary::{AreaSummary, PplResult, SimMetrics};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error(transparent)]
    Grouped(#[from] GroupedError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Write-then-rename; the destination only ever holds complete content.
pub fn atomic_write(path: &Path, content: &str) -> Result<(), IoError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(path))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, content).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))?;
    Ok(())
}

pub fn sha256_file(path: &Path) -> Result<String, IoError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(digest.len() * 2);
    for b in digest {
        let _ = write!(hex, "{b:02x}");
    }
    Ok(hex)
}

/// Counts table: header `area_id,c_1,...,c_N`, one row per area with the
/// area ids 0..m-1 in order. All-zero rows mark non-sampled areas.
pub fn load_counts(path: &Path, grid: BoundaryGrid) -> Result<GroupedCounts, IoError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| IoError::Format {
        path: path.to_path_buf(),
        msg: "empty file".into(),
    })?;
    if !header.trim_start().starts_with("area_id") {
        return Err(IoError::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: format!("expected header starting with 'area_id', got '{header}'"),
        });
    }
    let n = grid.bin_count();
    let mut counts = Vec::new();
    for (idx, raw) in lines {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != n + 1 {
            return Err(IoError::Parse {
                path: path.to_path_buf(),
                line: line_no,
                msg: format!("expected {} fields (area_id + {n} bins), got {}", n + 1, fields.len()),
            });
        }
        let area: usize = fields[0].parse().map_err(|_| IoError::Parse {
            path: path.to_path_buf(),
            line: line_no,
            msg: format!("invalid area_id '{}'", fields[0]),
        })?;
        if area != counts.len() {
            return Err(IoError::Parse {
                path: path.to_path_buf(),
                line: line_no,
                msg: format!("area ids must be 0..m-1 in order; expected {}, got {area}", counts.len()),
            });
        }
        let mut row = Vec::with_capacity(n);
        for f in &fields[1..] {
            let c: u64 = f.parse().map_err(|_| IoError::Parse {
                path: path.to_path_buf(),
                line: line_no,
                msg: format!("invalid nonnegative count '{f}'"),
            })?;
            row.push(c);
        }
        counts.push(row);
    }
    Ok(GroupedCounts::new(counts, grid)?)
}

pub fn counts_to_csv(data: &GroupedCounts) -> String {
    let n = data.n_bins();
    let mut out = String::from("area_id");
    for k in 1..=n {
        let _ = write!(out, ",c_{k}");
    }
    out.push('\n');
    for i in 0..data.m() {
        let _ = write!(out, "{i}");
        for &c in data.row(i) {
            let _ = write!(out, ",{c}");
        }
        out.push('\n');
    }
    out
}

pub fn save_counts(path: &Path, data: &GroupedCounts) -> Result<(), IoError> {
    atomic_write(path, &counts_to_csv(data))
}

/// Undirected edge list, two 0-based integer columns (comma or whitespace
/// separated), optional header. Self-loops and duplicates are rejected.
pub fn load_adjacency(path: &Path, m: usize) -> Result<AdjacencyGraph, IoError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut edges = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|f| !f.is_empty())
            .collect();
        let parsed: Option<Vec<usize>> = fields.iter().map(|f| f.parse().ok()).collect();
        match parsed {
            Some(ids) if ids.len() == 2 => edges.push((ids[0], ids[1])),
            _ if line_no == 1 => continue, // header
            _ => {
                return Err(IoError::Parse {
                    path: path.to_path_buf(),
                    line: line_no,
                    msg: format!("expected two integer area ids, got '{line}'"),
                })
            }
        }
    }
    Ok(AdjacencyGraph::new(m, &edges)?)
}

pub fn adjacency_to_csv(graph: &AdjacencyGraph) -> String {
    let mut out = String::from("from,to\n");
    for &(i, j) in graph.edges() {
        let _ = writeln!(out, "{i},{j}");
    }
    out
}

pub fn save_adjacency(path: &Path, graph: &AdjacencyGraph) -> Result<(), IoError> {
    atomic_write(path, &adjacency_to_csv(graph))
}

#[derive(Debug, Serialize, Deserialize)]
struct DrawsMeta {
    family: Family,
    prior: PriorKind,
    m: usize,
    p: usize,
    n_draws: usize,
    lambda_len: usize,
    sampled: Vec<bool>,
    acceptance: AcceptanceReport,
}

/// Persist retained draws: one flat table per parameter block plus a JSON
/// metadata file. Floats use the shortest round-trip representation, so a
/// write-then-load is lossless.
pub fn save_draws(dir: &Path, draws: &PosteriorDraws) -> Result<(), IoError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let meta = DrawsMeta {
        family: draws.family,
        prior: draws.prior,
        m: draws.m,
        p: draws.p,
        n_draws: draws.n_draws(),
        lambda_len: draws.lambda.first().map(Vec::len).unwrap_or(0),
        sampled: draws.sampled.clone(),
        acceptance: draws.acceptance.clone(),
    };
    let meta_path = dir.join("draws_meta.json");
    let meta_str = serde_json::to_string_pretty(&meta).map_err(|source| IoError::Json {
        path: meta_path.clone(),
        source,
    })?;
    atomic_write(&meta_path, &meta_str)?;

    let mut u_csv = String::from("draw,area_id");
    for l in 1..=draws.p {
        let _ = write!(u_csv, ",u_{l}");
    }
    u_csv.push('\n');
    for (t, mat) in draws.u.iter().enumerate() {
        for i in 0..draws.m {
            let _ = write!(u_csv, "{t},{i}");
            for l in 0..draws.p {
                let _ = write!(u_csv, ",{}", mat[(i, l)]);
            }
            u_csv.push('\n');
        }
    }
    atomic_write(&dir.join("u_draws.csv"), &u_csv)?;

    let lambda_len = meta.lambda_len;
    let mut h_csv = String::from("draw");
    for l in 1..=draws.p {
        let _ = write!(h_csv, ",mu_{l}");
    }
    for l in 1..=draws.p {
        let _ = write!(h_csv, ",tau_{l}");
    }
    for l in 1..=lambda_len {
        let _ = write!(h_csv, ",lambda_{l}");
    }
    h_csv.push('\n');
    for t in 0..draws.n_draws() {
        let _ = write!(h_csv, "{t}");
        for v in draws.mu[t].iter().chain(&draws.tau[t]).chain(&draws.lambda[t]) {
            let _ = write!(h_csv, ",{v}");
        }
        h_csv.push('\n');
    }
    atomic_write(&dir.join("hyper_draws.csv"), &h_csv)?;
    Ok(())
}

fn parse_f64(path: &Path, line_no: usize, field: &str) -> Result<f64, IoError> {
    field.parse().map_err(|_| IoError::Parse {
        path: path.to_path_buf(),
        line: line_no,
        msg: format!("invalid float '{field}'"),
    })
}

pub fn load_draws(dir: &Path) -> Result<PosteriorDraws, IoError> {
    let meta_path = dir.join("draws_meta.json");
    let meta_str = fs::read_to_string(&meta_path).map_err(io_err(&meta_path))?;
    let meta: DrawsMeta = serde_json::from_str(&meta_str).map_err(|source| IoError::Json {
        path: meta_path.clone(),
        source,
    })?;

    let u_path = dir.join("u_draws.csv");
    let text = fs::read_to_string(&u_path).map_err(io_err(&u_path))?;
    let mut u = vec![DMatrix::zeros(meta.m, meta.p); meta.n_draws];
    for (idx, raw) in text.lines().enumerate().skip(1) {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != meta.p + 2 {
            return Err(IoError::Parse {
                path: u_path.clone(),
                line: line_no,
                msg: format!("expected {} fields, got {}", meta.p + 2, fields.len()),
            });
        }
        let t: usize = fields[0].parse().map_err(|_| IoError::Parse {
            path: u_path.clone(),
            line: line_no,
            msg: format!("invalid draw index '{}'", fields[0]),
        })?;
        let i: usize = fields[1].parse().map_err(|_| IoError::Parse {
            path: u_path.clone(),
            line: line_no,
            msg: format!("invalid area id '{}'", fields[1]),
        })?;
        if t >= meta.n_draws || i >= meta.m {
            return Err(IoError::Parse {
                path: u_path.clone(),
                line: line_no,
                msg: format!("indices ({t},{i}) out of range"),
            });
        }
        for l in 0..meta.p {
            u[t][(i, l)] = parse_f64(&u_path, line_no, fields[2 + l])?;
        }
    }

    let h_path = dir.join("hyper_draws.csv");
    let text = fs::read_to_string(&h_path).map_err(io_err(&h_path))?;
    let mut mu = vec![vec![0.0; meta.p]; meta.n_draws];
    let mut tau = vec![vec![0.0; meta.p]; meta.n_draws];
    let mut lambda = vec![vec![0.0; meta.lambda_len]; meta.n_draws];
    for (idx, raw) in text.lines().enumerate().skip(1) {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let expect = 1 + 2 * meta.p + meta.lambda_len;
        if fields.len() != expect {
            return Err(IoError::Parse {
                path: h_path.clone(),
                line: line_no,
                msg: format!("expected {expect} fields, got {}", fields.len()),
            });
        }
        let t: usize = fields[0].parse().map_err(|_| IoError::Parse {
            path: h_path.clone(),
            line: line_no,
            msg: format!("invalid draw index '{}'", fields[0]),
        })?;
        for l in 0..meta.p {
            mu[t][l] = parse_f64(&h_path, line_no, fields[1 + l])?;
            tau[t][l] = parse_f64(&h_path, line_no, fields[1 + meta.p + l])?;
        }
        for l in 0..meta.lambda_len {
            lambda[t][l] = parse_f64(&h_path, line_no, fields[1 + 2 * meta.p + l])?;
        }
    }

    Ok(PosteriorDraws {
        prior: meta.prior,
        family: meta.family,
        m: meta.m,
        p: meta.p,
        sampled: meta.sampled,
        u,
        mu,
        tau,
        lambda,
        acceptance: meta.acceptance,
    })
}

pub fn summary_to_csv(rows: &[AreaSummary], p: usize) -> String {
    let mut out = String::from(
        "area_id,sampled,mean_income_mean,mean_income_lower,mean_income_upper,gini_mean,gini_lower,gini_upper",
    );
    for l in 1..=p {
        let _ = write!(out, ",u_{l}_mean,u_{l}_lower,u_{l}_upper");
    }
    out.push_str(",excluded_draws\n");
    for r in rows {
        let _ = write!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.area,
            u8::from(r.sampled),
            r.mean_income.mean,
            r.mean_income.lower,
            r.mean_income.upper,
            r.gini.mean,
            r.gini.lower,
            r.gini.upper
        );
        for s in &r.u {
            let _ = write!(out, ",{},{},{}", s.mean, s.lower, s.upper);
        }
        let _ = writeln!(out, ",{}", r.excluded_draws);
    }
    out
}

pub fn metrics_to_csv(metrics: &SimMetrics) -> String {
    let mut out = String::from("area_id,coordinate,mse,cp,al\n");
    for i in 0..metrics.mse.nrows() {
        for l in 0..metrics.mse.ncols() {
            let _ = writeln!(
                out,
                "{i},{},{},{},{}",
                l + 1,
                metrics.mse[(i, l)],
                metrics.cp[(i, l)],
                metrics.al[(i, l)]
            );
        }
    }
    out
}

/// One `compare` table row.
#[derive(Debug, Clone, Serialize)]
pub struct PplRow {
    pub family: Family,
    pub prior: PriorKind,
    pub ppl: f64,
    pub variance_term: f64,
    pub gof_term: f64,
    pub skipped_areas: usize,
}

impl PplRow {
    pub fn from_result(family: Family, prior: PriorKind, r: &PplResult) -> Self {
        PplRow {
            family,
            prior,
            ppl: r.total,
            variance_term: r.variance_term,
            gof_term: r.gof_term,
            skipped_areas: r.skipped.len(),
        }
    }
}

pub fn ppl_table_to_csv(rows: &[PplRow]) -> String {
    let mut out = String::from("family,prior,ppl,variance_term,gof_term,skipped_areas\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.family.code(),
            r.prior.code(),
            r.ppl,
            r.variance_term,
            r.gof_term,
            r.skipped_areas
        );
    }
    out
}

pub fn truth_to_csv(truth: &DMatrix<f64>) -> String {
    let mut out = String::from("area_id");
    for l in 1..=truth.ncols() {
        let _ = write!(out, ",u_{l}");
    }
    out.push('\n');
    for i in 0..truth.nrows() {
        let _ = write!(out, "{i}");
        for l in 0..truth.ncols() {
            let _ = write!(out, ",{}", truth[(i, l)]);
        }
        out.push('\n');
    }
    out
}

pub fn locations_to_csv(locations: &[[f64; 2]]) -> String {
    let mut out = String::from("area_id,s_1,s_2\n");
    for (i, s) in locations.iter().enumerate() {
        let _ = writeln!(out, "{i},{},{}", s[0], s[1]);
    }
    out
}

/// Everything needed to reproduce a run: the resolved configuration, the
/// seed and digests of all inputs.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

pub fn write_manifest(dir: &Path, manifest: &RunManifest) -> Result<(), IoError> {
    let path = dir.join("manifest.json");
    let body = serde_json::to_string_pretty(manifest).map_err(|source| IoError::Json {
        path: path.clone(),
        source,
    })?;
    atomic_write(&path, &body)
}
