//! Command-line workflows: fit, predict, simulate, evaluate and compare.
//! Flags mirror the run configuration one to one; nothing is read from the
//! environment.

use crate::family::Family;
use crate::grouped::BoundaryGrid;
use crate::io::{
    self, atomic_write, load_adjacency, load_counts, load_draws, save_adjacency, save_counts,
    save_draws, sha256_file, write_manifest, InputDigest, PplRow, RunManifest,
};
use crate::mcmc::{
    derive_seed, run_pwd_chain, run_pwl_chain, McmcConfig, PriorConfig, PriorKind,
};
use crate::sim::{self, ExperimentConfig, ScenarioKind, SimScenario};
use crate::summary::{ppl, summarize, PplMode, SimMetrics};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

#[derive(Debug)]
pub struct CliError {
    pub stage: String,
    pub message: String,
}

impl CliError {
    fn new(stage: &str, message: impl ToString) -> Self {
        CliError {
            stage: stage.to_string(),
            message: message.to_string(),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{}] {}", self.stage, self.message)
    }
}

fn at<E: std::fmt::Display>(stage: &'static str) -> impl Fn(E) -> CliError {
    move |e| CliError::new(stage, e)
}

fn parse_family(s: &str) -> Result<Family, String> {
    Family::parse_code(s).ok_or_else(|| format!("unknown family '{s}' (expected ln, sm or dg)"))
}

fn parse_prior(s: &str) -> Result<PriorKind, String> {
    PriorKind::parse_code(s).ok_or_else(|| format!("unknown prior '{s}' (expected pwd or pwl)"))
}

fn parse_scenario(s: &str) -> Result<ScenarioKind, String> {
    ScenarioKind::parse_code(s).ok_or_else(|| format!("unknown scenario '{s}' (expected a, b or c)"))
}

#[derive(Parser, Debug)]
#[command(
    name = "spatial-income",
    version,
    about = "Bayesian area-wise income distributions from grouped data with spatial smoothing"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Fit one family/prior model by MCMC; persist draws and summaries.
    Fit(FitArgs),
    /// Summarize non-sampled areas from a persisted fit.
    Predict(PredictArgs),
    /// Generate a synthetic dataset with known truth.
    Simulate(SimulateArgs),
    /// Replication experiment comparing PWD, PWL and AML.
    Evaluate(EvaluateArgs),
    /// Fit all six family x prior models and rank them by PPL.
    Compare(CompareArgs),
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// Counts table (header: area_id,c_1,...,c_N).
    #[arg(long)]
    pub counts: PathBuf,
    /// Undirected edge list, two 0-based integer columns.
    #[arg(long)]
    pub adjacency: PathBuf,
    /// Interior bin boundaries z_1..z_{N-1}, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub boundaries: Vec<f64>,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct McmcArgs {
    #[arg(long, default_value_t = 2500)]
    pub iterations: usize,
    #[arg(long, default_value_t = 500)]
    pub burn_in: usize,
    #[arg(long, default_value_t = 1)]
    pub thin: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Initial MALA step for the (tau_l, lambda_l) update (PWD).
    #[arg(long, default_value_t = 0.01)]
    pub mala_step: f64,
    /// Initial random-walk step for the Phi update (PWL).
    #[arg(long, default_value_t = 0.2)]
    pub rw_step: f64,
    /// Monte-Carlo sample count for the C* estimate (PWL).
    #[arg(long, default_value_t = 100)]
    pub cstar_samples: usize,
    /// Disable burn-in step-size adaptation.
    #[arg(long, default_value_t = false)]
    pub no_adapt: bool,
    /// Floor for bin probabilities inside the likelihood.
    #[arg(long, default_value_t = 1e-300)]
    pub prob_floor: f64,
}

impl McmcArgs {
    fn to_config(&self) -> McmcConfig {
        McmcConfig {
            iterations: self.iterations,
            burn_in: self.burn_in,
            thin: self.thin,
            seed: self.seed,
            mala_step: self.mala_step,
            rw_step: self.rw_step,
            cstar_samples: self.cstar_samples,
            adapt: !self.no_adapt,
            prob_floor: self.prob_floor,
        }
    }
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct PriorArgs {
    #[arg(long, default_value_t = 1e-6)]
    pub a_mu: f64,
    #[arg(long, default_value_t = 1.0)]
    pub b_tau: f64,
    #[arg(long, default_value_t = 1.0)]
    pub c_tau: f64,
    #[arg(long, default_value_t = 1.0)]
    pub b_lambda: f64,
    #[arg(long, default_value_t = 1.0)]
    pub c_lambda: f64,
}

impl PriorArgs {
    fn to_config(&self) -> PriorConfig {
        PriorConfig {
            a_mu: self.a_mu,
            b_tau: self.b_tau,
            c_tau: self.c_tau,
            b_lambda: self.b_lambda,
            c_lambda: self.c_lambda,
        }
    }
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_parser = parse_family, default_value = "ln")]
    pub family: Family,
    #[arg(long, value_parser = parse_prior, default_value = "pwd")]
    pub prior: PriorKind,
    #[command(flatten)]
    pub mcmc: McmcArgs,
    #[command(flatten)]
    pub hyperprior: PriorArgs,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    /// Directory produced by `fit`.
    #[arg(long)]
    pub fit: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long, value_parser = parse_scenario)]
    pub scenario: ScenarioKind,
    #[arg(long, default_value_t = 200)]
    pub areas: usize,
    #[arg(long, default_value_t = 0.15)]
    pub radius: f64,
    #[arg(long, default_value_t = 50)]
    pub n_min: u64,
    #[arg(long, default_value_t = 300)]
    pub n_max: u64,
    /// Interior bin boundaries; defaults to 2,4,6,8,10,15.
    #[arg(long, value_delimiter = ',')]
    pub boundaries: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long, value_parser = parse_scenario)]
    pub scenario: ScenarioKind,
    #[arg(long, default_value_t = 10)]
    pub replications: usize,
    #[arg(long, default_value_t = 200)]
    pub areas: usize,
    #[arg(long, default_value_t = 0.15)]
    pub radius: f64,
    #[arg(long, default_value_t = 50)]
    pub n_min: u64,
    #[arg(long, default_value_t = 300)]
    pub n_max: u64,
    #[arg(long, value_delimiter = ',')]
    pub boundaries: Option<Vec<f64>>,
    #[arg(long, value_parser = parse_family, default_value = "ln")]
    pub family: Family,
    #[command(flatten)]
    pub mcmc: McmcArgs,
    #[command(flatten)]
    pub hyperprior: PriorArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub mcmc: McmcArgs,
    #[command(flatten)]
    pub hyperprior: PriorArgs,
    /// Use analytic predictive moments instead of multinomial replicates.
    #[arg(long, default_value_t = false)]
    pub plug_in: bool,
    #[arg(long)]
    pub out: PathBuf,
}

impl Command {
    pub fn run(&self) -> Result<(), CliError> {
        match self {
            Command::Fit(a) => cmd_fit(a),
            Command::Predict(a) => cmd_predict(a),
            Command::Simulate(a) => cmd_simulate(a),
            Command::Evaluate(a) => cmd_evaluate(a),
            Command::Compare(a) => cmd_compare(a),
        }
    }
}

fn load_inputs(
    data: &DataArgs,
) -> Result<(crate::grouped::GroupedCounts, crate::graph::AdjacencyGraph), CliError> {
    let grid = BoundaryGrid::from_interior(&data.boundaries).map_err(at("load-boundaries"))?;
    let counts = load_counts(&data.counts, grid).map_err(at("load-counts"))?;
    let graph = load_adjacency(&data.adjacency, counts.m()).map_err(at("load-adjacency"))?;
    Ok((counts, graph))
}

fn input_digests(paths: &[&Path]) -> Result<Vec<InputDigest>, CliError> {
    paths
        .iter()
        .map(|p| {
            Ok(InputDigest {
                path: p.display().to_string(),
                sha256: sha256_file(p).map_err(at("digest-inputs"))?,
            })
        })
        .collect()
}

pub fn cmd_fit(args: &FitArgs) -> Result<(), CliError> {
    let (counts, graph) = load_inputs(&args.data)?;
    for w in counts.warnings(args.family) {
        eprintln!("warning: {w}");
    }
    let config = args.mcmc.to_config();
    let prior = args.hyperprior.to_config();

    let mut chain_log = String::new();
    let draws = {
        let mut sink = LogBuffer(&mut chain_log);
        match args.prior {
            PriorKind::Pwd => run_pwd_chain(
                &counts,
                &graph,
                args.family,
                prior,
                config.clone(),
                Some(&mut sink),
            ),
            PriorKind::Pwl => run_pwl_chain(
                &counts,
                &graph,
                args.family,
                prior,
                config.clone(),
                Some(&mut sink),
            ),
        }
        .map_err(at("fit-chain"))?
    };
    let summary = summarize(&draws).map_err(at("fit-summarize"))?;

    save_draws(&args.out, &draws).map_err(at("write-draws"))?;
    atomic_write(
        &args.out.join("summary.csv"),
        &io::summary_to_csv(&summary, draws.p),
    )
    .map_err(at("write-summary"))?;
    atomic_write(&args.out.join("chain_log.txt"), &chain_log).map_err(at("write-log"))?;
    let manifest = RunManifest {
        command: "fit".into(),
        seed: config.seed,
        config: serde_json::json!({
            "family": args.family.code(),
            "prior": args.prior.code(),
            "boundaries": args.data.boundaries,
            "mcmc": serde_json::to_value(&args.mcmc).unwrap(),
            "hyperprior": serde_json::to_value(&args.hyperprior).unwrap(),
        }),
        inputs: input_digests(&[&args.data.counts, &args.data.adjacency])?,
        outputs: vec![
            "u_draws.csv".into(),
            "hyper_draws.csv".into(),
            "draws_meta.json".into(),
            "summary.csv".into(),
            "chain_log.txt".into(),
        ],
    };
    write_manifest(&args.out, &manifest).map_err(at("write-manifest"))?;
    println!(
        "fit: {}-{} m={} draws={} accept_u={:.3}",
        args.family.code(),
        args.prior.code(),
        draws.m,
        draws.n_draws(),
        draws.acceptance.u_accept_rate
    );
    Ok(())
}

struct LogBuffer<'a>(&'a mut String);

impl std::io::Write for LogBuffer<'_> {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.push_str(&String::from_utf8_lossy(buf));
        Ok(buf.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

pub fn cmd_predict(args: &PredictArgs) -> Result<(), CliError> {
    let draws = load_draws(&args.fit).map_err(at("load-fit"))?;
    let summary = summarize(&draws).map_err(at("predict-summarize"))?;
    let nonsampled: Vec<_> = summary.into_iter().filter(|s| !s.sampled).collect();
    atomic_write(
        &args.out.join("nonsampled_summary.csv"),
        &io::summary_to_csv(&nonsampled, draws.p),
    )
    .map_err(at("write-summary"))?;
    let manifest = RunManifest {
        command: "predict".into(),
        seed: 0,
        config: serde_json::json!({ "fit": args.fit.display().to_string() }),
        inputs: input_digests(&[
            &args.fit.join("u_draws.csv"),
            &args.fit.join("hyper_draws.csv"),
            &args.fit.join("draws_meta.json"),
        ])?,
        outputs: vec!["nonsampled_summary.csv".into()],
    };
    write_manifest(&args.out, &manifest).map_err(at("write-manifest"))?;
    println!("predict: {} non-sampled areas summarized", nonsampled.len());
    Ok(())
}

fn scenario_from(
    kind: ScenarioKind,
    areas: usize,
    radius: f64,
    n_min: u64,
    n_max: u64,
    boundaries: &Option<Vec<f64>>,
) -> SimScenario {
    let mut s = SimScenario::new(kind);
    s.m = areas;
    s.radius = radius;
    s.n_range = (n_min, n_max);
    if let Some(b) = boundaries {
        s.boundaries = b.clone();
    }
    s
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let scenario = scenario_from(
        args.scenario,
        args.areas,
        args.radius,
        args.n_min,
        args.n_max,
        &args.boundaries,
    );
    let data = sim::simulate(&scenario, args.seed).map_err(at("simulate"))?;
    save_counts(&args.out.join("counts.csv"), &data.counts).map_err(at("write-counts"))?;
    save_adjacency(&args.out.join("adjacency.csv"), &data.graph).map_err(at("write-adjacency"))?;
    atomic_write(&args.out.join("truth.csv"), &io::truth_to_csv(&data.truth))
        .map_err(at("write-truth"))?;
    atomic_write(
        &args.out.join("locations.csv"),
        &io::locations_to_csv(&data.locations),
    )
    .map_err(at("write-locations"))?;
    let manifest = RunManifest {
        command: "simulate".into(),
        seed: args.seed,
        config: serde_json::to_value(&scenario).map_err(at("manifest"))?,
        inputs: vec![],
        outputs: vec![
            "counts.csv".into(),
            "adjacency.csv".into(),
            "truth.csv".into(),
            "locations.csv".into(),
        ],
    };
    write_manifest(&args.out, &manifest).map_err(at("write-manifest"))?;
    println!(
        "simulate: scenario {} m={} edges={} mean_degree={:.3}",
        scenario.kind.code(),
        scenario.m,
        data.graph.edge_count(),
        data.graph.mean_degree()
    );
    Ok(())
}

fn replication_details_csv(outcomes: &[sim::ReplicationOutcome]) -> String {
    let mut out = String::from("rep,method,area_id,coordinate,estimate,lower,upper,truth\n");
    for o in outcomes {
        for (method, rep) in [("pwd", &o.pwd), ("pwl", &o.pwl), ("aml", &o.aml)] {
            for i in 0..rep.estimate.nrows() {
                for l in 0..rep.estimate.ncols() {
                    let _ = writeln!(
                        out,
                        "{},{},{},{},{},{},{},{}",
                        o.rep,
                        method,
                        i,
                        l + 1,
                        rep.estimate[(i, l)],
                        rep.lower[(i, l)],
                        rep.upper[(i, l)],
                        rep.truth[(i, l)]
                    );
                }
            }
        }
    }
    out
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<(), CliError> {
    let scenario = scenario_from(
        args.scenario,
        args.areas,
        args.radius,
        args.n_min,
        args.n_max,
        &args.boundaries,
    );
    let cfg = ExperimentConfig {
        scenario: scenario.clone(),
        replications: args.replications,
        family: args.family,
        mcmc: args.mcmc.to_config(),
        prior: args.hyperprior.to_config(),
    };
    let result = sim::run_experiment(&cfg).map_err(at("evaluate"))?;
    for (rep, msg) in &result.failures {
        eprintln!("warning: replication {rep} failed: {msg}");
    }
    for (name, metrics) in [
        ("pwd", &result.pwd),
        ("pwl", &result.pwl),
        ("aml", &result.aml),
    ] {
        atomic_write(
            &args.out.join(format!("metrics_{name}.csv")),
            &io::metrics_to_csv(metrics),
        )
        .map_err(at("write-metrics"))?;
    }
    atomic_write(
        &args.out.join("replication_details.csv"),
        &replication_details_csv(&result.outcomes),
    )
    .map_err(at("write-details"))?;
    let manifest = RunManifest {
        command: "evaluate".into(),
        seed: args.mcmc.seed,
        config: serde_json::json!({
            "scenario": scenario,
            "replications": args.replications,
            "family": args.family.code(),
            "mcmc": serde_json::to_value(&args.mcmc).unwrap(),
            "hyperprior": serde_json::to_value(&args.hyperprior).unwrap(),
        }),
        inputs: vec![],
        outputs: vec![
            "metrics_pwd.csv".into(),
            "metrics_pwl.csv".into(),
            "metrics_aml.csv".into(),
            "replication_details.csv".into(),
        ],
    };
    write_manifest(&args.out, &manifest).map_err(at("write-manifest"))?;
    for (name, metrics) in [
        ("pwd", &result.pwd),
        ("pwl", &result.pwl),
        ("aml", &result.aml),
    ] {
        println!(
            "evaluate {}: median MSE = ({:.5}, {:.5}) median CP = ({:.3}, {:.3}) median AL = ({:.4}, {:.4})",
            name,
            SimMetrics::median_over_areas(&metrics.mse, 0),
            SimMetrics::median_over_areas(&metrics.mse, 1),
            SimMetrics::median_over_areas(&metrics.cp, 0),
            SimMetrics::median_over_areas(&metrics.cp, 1),
            SimMetrics::median_over_areas(&metrics.al, 0),
            SimMetrics::median_over_areas(&metrics.al, 1),
        );
    }
    Ok(())
}

/// The six family x prior models in their fixed table order.
pub const MODEL_GRID: [(Family, PriorKind); 6] = [
    (Family::LogNormal, PriorKind::Pwd),
    (Family::LogNormal, PriorKind::Pwl),
    (Family::SinghMaddala, PriorKind::Pwd),
    (Family::SinghMaddala, PriorKind::Pwl),
    (Family::Dagum, PriorKind::Pwd),
    (Family::Dagum, PriorKind::Pwl),
];

/// Fit the six models and compute PPL for each; used by `compare` and the
/// model-recovery tests.
pub fn ppl_grid(
    counts: &crate::grouped::GroupedCounts,
    graph: &crate::graph::AdjacencyGraph,
    mcmc: &McmcConfig,
    prior: PriorConfig,
    mode: PplMode,
) -> Result<Vec<PplRow>, CliError> {
    let mut rows = Vec::with_capacity(MODEL_GRID.len());
    for (idx, (family, prior_kind)) in MODEL_GRID.iter().enumerate() {
        let cfg = McmcConfig {
            seed: derive_seed(mcmc.seed, idx as u64),
            ..mcmc.clone()
        };
        let draws = match prior_kind {
            PriorKind::Pwd => run_pwd_chain(counts, graph, *family, prior, cfg, None),
            PriorKind::Pwl => run_pwl_chain(counts, graph, *family, prior, cfg, None),
        }
        .map_err(at("compare-chain"))?;
        let result = ppl(&draws, counts, mode, derive_seed(mcmc.seed, 100 + idx as u64))
            .map_err(at("compare-ppl"))?;
        rows.push(PplRow::from_result(*family, *prior_kind, &result));
    }
    Ok(rows)
}

pub fn cmd_compare(args: &CompareArgs) -> Result<(), CliError> {
    let (counts, graph) = load_inputs(&args.data)?;
    let mode = if args.plug_in {
        PplMode::PlugIn
    } else {
        PplMode::Replicates
    };
    let rows = ppl_grid(
        &counts,
        &graph,
        &args.mcmc.to_config(),
        args.hyperprior.to_config(),
        mode,
    )?;
    atomic_write(&args.out.join("ppl.csv"), &io::ppl_table_to_csv(&rows))
        .map_err(at("write-ppl"))?;
    let manifest = RunManifest {
        command: "compare".into(),
        seed: args.mcmc.seed,
        config: serde_json::json!({
            "boundaries": args.data.boundaries,
            "mcmc": serde_json::to_value(&args.mcmc).unwrap(),
            "hyperprior": serde_json::to_value(&args.hyperprior).unwrap(),
            "plug_in": args.plug_in,
        }),
        inputs: input_digests(&[&args.data.counts, &args.data.adjacency])?,
        outputs: vec!["ppl.csv".into()],
    };
    write_manifest(&args.out, &manifest).map_err(at("write-manifest"))?;
    for r in &rows {
        println!(
            "compare: {}-{} ppl={:.3}",
            r.family.code(),
            r.prior.code(),
            r.ppl
        );
    }
    Ok(())
}
