//! Synthetic-data generation and the simulation experiment: random
//! geometry, the three truth scenarios, grouped-data generation, and the
//! PWD / PWL / AML comparison over replications.

use crate::family::Family;
use crate::graph::AdjacencyGraph;
use crate::grouped::{aml_fit, BoundaryGrid, GroupedCounts, GroupedError};
use crate::mcmc::{
    derive_seed, run_pwd_chain, run_pwl_chain, ChainError, McmcConfig, PriorConfig,
};
use crate::summary::{sim_metrics, summarize, Replication, SimMetrics, SummaryError};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Grouped(#[from] GroupedError),
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error(transparent)]
    Summary(#[from] SummaryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScenarioKind {
    A,
    B,
    C,
}

impl ScenarioKind {
    pub fn code(self) -> &'static str {
        match self {
            ScenarioKind::A => "a",
            ScenarioKind::B => "b",
            ScenarioKind::C => "c",
        }
    }

    pub fn parse_code(s: &str) -> Option<ScenarioKind> {
        match s.to_ascii_lowercase().as_str() {
            "a" => Some(ScenarioKind::A),
            "b" => Some(ScenarioKind::B),
            "c" => Some(ScenarioKind::C),
            _ => None,
        }
    }
}

/// Scenario geometry and sampling knobs; defaults follow the simulation
/// design (m = 200 areas, n_i uniform on 50..=300, boundaries
/// 2,4,6,8,10,15, adjacency radius 0.15).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimScenario {
    pub kind: ScenarioKind,
    pub m: usize,
    pub n_range: (u64, u64),
    pub boundaries: Vec<f64>,
    pub radius: f64,
}

impl SimScenario {
    pub fn new(kind: ScenarioKind) -> Self {
        SimScenario {
            kind,
            m: 200,
            n_range: (50, 300),
            boundaries: vec![2.0, 4.0, 6.0, 8.0, 10.0, 15.0],
            radius: 0.15,
        }
    }

    pub fn grid(&self) -> Result<BoundaryGrid, GroupedError> {
        BoundaryGrid::from_interior(&self.boundaries)
    }
}

/// Threshold adjacency: an edge wherever the Euclidean distance is below
/// the radius.
pub fn adjacency_from_locations(locations: &[[f64; 2]], radius: f64) -> AdjacencyGraph {
    let m = locations.len();
    let mut edges = Vec::new();
    for i in 0..m {
        for j in (i + 1)..m {
            let dx = locations[i][0] - locations[j][0];
            let dy = locations[i][1] - locations[j][1];
            if (dx * dx + dy * dy).sqrt() < radius {
                edges.push((i, j));
            }
        }
    }
    AdjacencyGraph::new(m, &edges).unwrap()
}

/// i.i.d. uniform locations on (-1,1)^2 with threshold adjacency.
pub fn gen_geometry(
    m: usize,
    radius: f64,
    rng: &mut ChaCha12Rng,
) -> (Vec<[f64; 2]>, AdjacencyGraph) {
    let locations: Vec<[f64; 2]> = (0..m)
        .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
        .collect();
    let graph = adjacency_from_locations(&locations, radius);
    (locations, graph)
}

/// True latent fields (m x 2). Scenario A varies smoothly, B adds two
/// discontinuous discs on the first coordinate, C assigns constant pairs by
/// quadrant (ties on the axes fall to the "<" branch).
pub fn scenario_truth(kind: ScenarioKind, locations: &[[f64; 2]]) -> DMatrix<f64> {
    let m = locations.len();
    let mut u = DMatrix::zeros(m, 2);
    for (i, s) in locations.iter().enumerate() {
        let (s1, s2) = (s[0], s[1]);
        match kind {
            ScenarioKind::A | ScenarioKind::B => {
                let mut u1 = 0.1 + s1 * s1 + s2 * s2;
                if kind == ScenarioKind::B {
                    let d1 = ((s1 - 0.5) * (s1 - 0.5) + s2 * s2).sqrt();
                    let d2 = ((s1 + 0.5) * (s1 + 0.5) + s2 * s2).sqrt();
                    if d1 < 0.3 {
                        u1 -= 0.3;
                    }
                    if d2 < 0.3 {
                        u1 += 0.3;
                    }
                }
                u[(i, 0)] = u1;
                u[(i, 1)] = 0.2 * s1 + 0.2 * s2;
            }
            ScenarioKind::C => {
                let (u1, u2) = match (s1 > 0.0, s2 > 0.0) {
                    (true, true) => (0.3, 0.1),
                    (true, false) => (0.5, 0.2),
                    (false, true) => (0.7, 0.3),
                    (false, false) => (1.0, 0.4),
                };
                u[(i, 0)] = u1;
                u[(i, 1)] = u2;
            }
        }
    }
    u
}

/// Per-area sample sizes, discrete uniform on the inclusive range.
pub fn gen_sample_sizes(m: usize, range: (u64, u64), rng: &mut ChaCha12Rng) -> Vec<u64> {
    (0..m).map(|_| rng.random_range(range.0..=range.1)).collect()
}

/// Draw n_i log-normal incomes per area (mu_i = u_i1, sigma2_i = exp(u_i2))
/// and bin them into (z_{k-1}, z_k].
pub fn gen_grouped(
    truth: &DMatrix<f64>,
    n: &[u64],
    grid: &BoundaryGrid,
    rng: &mut ChaCha12Rng,
) -> Result<GroupedCounts, GroupedError> {
    let m = truth.nrows();
    assert_eq!(n.len(), m);
    let nbins = grid.bin_count();
    let mut counts = vec![vec![0u64; nbins]; m];
    for i in 0..m {
        let mu = truth[(i, 0)];
        let sigma = truth[(i, 1)].exp().sqrt();
        for _ in 0..n[i] {
            let z: f64 = rng.sample(StandardNormal);
            let x = (mu + sigma * z).exp();
            counts[i][grid.bin_index(x)] += 1;
        }
    }
    GroupedCounts::new(counts, grid.clone())
}

/// One synthetic dataset with its generating truth.
#[derive(Debug, Clone)]
pub struct SimulatedData {
    pub locations: Vec<[f64; 2]>,
    pub graph: AdjacencyGraph,
    pub truth: DMatrix<f64>,
    pub sample_sizes: Vec<u64>,
    pub counts: GroupedCounts,
}

pub fn simulate(scenario: &SimScenario, seed: u64) -> Result<SimulatedData, GroupedError> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let (locations, graph) = gen_geometry(scenario.m, scenario.radius, &mut rng);
    let truth = scenario_truth(scenario.kind, &locations);
    let sample_sizes = gen_sample_sizes(scenario.m, scenario.n_range, &mut rng);
    let counts = gen_grouped(&truth, &sample_sizes, &scenario.grid()?, &mut rng)?;
    Ok(SimulatedData {
        locations,
        graph,
        truth,
        sample_sizes,
        counts,
    })
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub scenario: SimScenario,
    pub replications: usize,
    pub family: Family,
    pub mcmc: McmcConfig,
    pub prior: PriorConfig,
}

/// Per-replication fits of all three methods on the same dataset.
#[derive(Debug, Clone)]
pub struct ReplicationOutcome {
    pub rep: usize,
    pub mean_degree: f64,
    pub pwd: Replication,
    pub pwl: Replication,
    pub aml: Replication,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub pwd: SimMetrics,
    pub pwl: SimMetrics,
    pub aml: SimMetrics,
    pub outcomes: Vec<ReplicationOutcome>,
    /// Replications whose fit failed, with the error message.
    pub failures: Vec<(usize, String)>,
}

fn summaries_to_replication(
    summ: &[crate::summary::AreaSummary],
    truth: &DMatrix<f64>,
) -> Replication {
    let m = truth.nrows();
    let p = truth.ncols();
    let mut estimate = DMatrix::zeros(m, p);
    let mut lower = DMatrix::zeros(m, p);
    let mut upper = DMatrix::zeros(m, p);
    for (i, s) in summ.iter().enumerate() {
        for l in 0..p {
            estimate[(i, l)] = s.u[l].mean;
            lower[(i, l)] = s.u[l].lower;
            upper[(i, l)] = s.u[l].upper;
        }
    }
    Replication {
        estimate,
        lower,
        upper,
        truth: truth.clone(),
    }
}

fn aml_to_replication(fit: &crate::grouped::AmlFit, p: usize, truth: &DMatrix<f64>) -> Replication {
    let m = truth.nrows();
    let mut estimate = DMatrix::from_element(m, p, f64::NAN);
    let mut lower = DMatrix::from_element(m, p, f64::NAN);
    let mut upper = DMatrix::from_element(m, p, f64::NAN);
    for (i, est) in fit.estimates.iter().enumerate() {
        if let Some(est) = est {
            for l in 0..p {
                estimate[(i, l)] = est.u_hat[l];
                lower[(i, l)] = est.intervals[l].0;
                upper[(i, l)] = est.intervals[l].1;
            }
        }
    }
    Replication {
        estimate,
        lower,
        upper,
        truth: truth.clone(),
    }
}

fn run_one_replication(cfg: &ExperimentConfig, rep: usize) -> Result<ReplicationOutcome, SimError> {
    let rep_seed = derive_seed(cfg.mcmc.seed, rep as u64);
    let data = simulate(&cfg.scenario, rep_seed)?;
    let p = cfg.family.param_count();

    let pwd_cfg = McmcConfig {
        seed: derive_seed(rep_seed, 1),
        ..cfg.mcmc.clone()
    };
    let pwd_draws = run_pwd_chain(
        &data.counts,
        &data.graph,
        cfg.family,
        cfg.prior,
        pwd_cfg,
        None,
    )?;
    let pwd = summaries_to_replication(&summarize(&pwd_draws)?, &data.truth);

    let pwl_cfg = McmcConfig {
        seed: derive_seed(rep_seed, 2),
        ..cfg.mcmc.clone()
    };
    let pwl_draws = run_pwl_chain(
        &data.counts,
        &data.graph,
        cfg.family,
        cfg.prior,
        pwl_cfg,
        None,
    )?;
    let pwl = summaries_to_replication(&summarize(&pwl_draws)?, &data.truth);

    let aml = aml_to_replication(&aml_fit(cfg.family, &data.counts)?, p, &data.truth);

    Ok(ReplicationOutcome {
        rep,
        mean_degree: data.graph.mean_degree(),
        pwd,
        pwl,
        aml,
    })
}

/// Fit PWD, PWL and AML on matched synthetic datasets over R replications
/// (in parallel, each replication on its own seeded stream) and aggregate
/// MSE/CP/AL per method. Failed replications are reported, not fatal.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult, SimError> {
    assert!(cfg.replications >= 1);
    let results: Vec<Result<ReplicationOutcome, SimError>> = (0..cfg.replications)
        .into_par_iter()
        .map(|rep| run_one_replication(cfg, rep))
        .collect();

    let mut outcomes = Vec::new();
    let mut failures = Vec::new();
    for (rep, res) in results.into_iter().enumerate() {
        match res {
            Ok(o) => outcomes.push(o),
            Err(e) => failures.push((rep, e.to_string())),
        }
    }
    let pwd_reps: Vec<Replication> = outcomes.iter().map(|o| o.pwd.clone()).collect();
    let pwl_reps: Vec<Replication> = outcomes.iter().map(|o| o.pwl.clone()).collect();
    let aml_reps: Vec<Replication> = outcomes.iter().map(|o| o.aml.clone()).collect();
    Ok(ExperimentResult {
        pwd: sim_metrics(&pwd_reps)?,
        pwl: sim_metrics(&pwl_reps)?,
        aml: sim_metrics(&aml_reps)?,
        outcomes,
        failures,
    })
}
