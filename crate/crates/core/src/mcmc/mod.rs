//! MCMC infrastructure shared by the PWD and PWL samplers: configuration,
//! the latent field, retained draws, the mode-based independent-MH update of
//! one area's parameter vector, and burn-in step-size adaptation.

pub mod pwd;
pub mod pwl;

use crate::family::Family;
use crate::graph::{AdjacencyGraph, GraphError};
use crate::grouped::{GroupedCounts, GroupedError, ModeApprox};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

pub use pwd::{run_pwd_chain, PwdChain, PwdHyper};
pub use pwl::{run_pwl_chain, CstarEstimate, PwlChain, PwlHyper};

#[derive(Debug, Error)]
pub enum ChainError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Grouped(#[from] GroupedError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("chain log write failed: {0}")]
    Log(#[from] std::io::Error),
}

/// Which spatial prior a chain targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PriorKind {
    Pwd,
    Pwl,
}

impl PriorKind {
    pub fn code(self) -> &'static str {
        match self {
            PriorKind::Pwd => "pwd",
            PriorKind::Pwl => "pwl",
        }
    }

    pub fn parse_code(s: &str) -> Option<PriorKind> {
        match s.to_ascii_lowercase().as_str() {
            "pwd" => Some(PriorKind::Pwd),
            "pwl" => Some(PriorKind::Pwl),
            _ => None,
        }
    }
}

/// Hyperpriors: mu_l ~ N(0, 1/a_mu), tau_l ~ Gamma(b_tau, c_tau),
/// lambda ~ Gamma(b_lambda, c_lambda) (shape/rate).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorConfig {
    pub a_mu: f64,
    pub b_tau: f64,
    pub c_tau: f64,
    pub b_lambda: f64,
    pub c_lambda: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            a_mu: 1e-6,
            b_tau: 1.0,
            c_tau: 1.0,
            b_lambda: 1.0,
            c_lambda: 1.0,
        }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<(), ChainError> {
        for (name, v) in [
            ("a_mu", self.a_mu),
            ("b_tau", self.b_tau),
            ("c_tau", self.c_tau),
            ("b_lambda", self.b_lambda),
            ("c_lambda", self.c_lambda),
        ] {
            if v <= 0.0 || !v.is_finite() {
                return Err(ChainError::BadConfig(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Run-length and proposal tuning knobs for one chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McmcConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    /// Initial MALA step h for the (tau_l, lambda_l) update (PWD).
    pub mala_step: f64,
    /// Initial random-walk step b for the Phi update (PWL).
    pub rw_step: f64,
    /// Monte-Carlo sample count for the C*(tau, lambda) estimate (PWL).
    pub cstar_samples: usize,
    /// Adapt step sizes during burn-in (frozen afterwards).
    pub adapt: bool,
    /// Floor for bin probabilities inside the likelihood.
    pub prob_floor: f64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig {
            iterations: 2500,
            burn_in: 500,
            thin: 1,
            seed: 0,
            mala_step: 0.01,
            rw_step: 0.2,
            cstar_samples: 100,
            adapt: true,
            prob_floor: crate::grouped::PROB_FLOOR,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<(), ChainError> {
        if self.burn_in >= self.iterations {
            return Err(ChainError::BadConfig(format!(
                "burn_in ({}) must be smaller than iterations ({})",
                self.burn_in, self.iterations
            )));
        }
        if self.thin == 0 {
            return Err(ChainError::BadConfig("thin must be >= 1".into()));
        }
        if self.mala_step <= 0.0 || self.rw_step <= 0.0 {
            return Err(ChainError::BadConfig("step sizes must be positive".into()));
        }
        if self.cstar_samples == 0 {
            return Err(ChainError::BadConfig("cstar_samples must be >= 1".into()));
        }
        Ok(())
    }

    /// Number of retained draws: floor((iterations - burn_in) / thin).
    pub fn retained(&self) -> usize {
        (self.iterations - self.burn_in) / self.thin
    }

    pub(crate) fn retain_at(&self, iteration: usize) -> bool {
        iteration >= self.burn_in && (iteration - self.burn_in + 1).is_multiple_of(self.thin)
    }
}

/// The m x p matrix of transformed area parameters plus sampled flags.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentField {
    pub u: DMatrix<f64>,
    pub sampled: Vec<bool>,
}

impl LatentField {
    pub fn new(u: DMatrix<f64>, sampled: Vec<bool>) -> Self {
        assert_eq!(u.nrows(), sampled.len());
        LatentField { u, sampled }
    }

    pub fn m(&self) -> usize {
        self.u.nrows()
    }

    pub fn p(&self) -> usize {
        self.u.ncols()
    }

    pub fn area(&self, i: usize) -> Vec<f64> {
        self.u.row(i).iter().cloned().collect()
    }

    pub fn set_area(&mut self, i: usize, v: &[f64]) {
        for (l, &x) in v.iter().enumerate() {
            self.u[(i, l)] = x;
        }
    }
}

/// Per-kernel acceptance bookkeeping and chain diagnostics.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceReport {
    /// Accepted / proposed for the area updates, whole run.
    pub u_accept_rate: f64,
    /// Per-l MALA rates (PWD) or the single Phi rate (PWL).
    pub hyper_accept_rate: Vec<f64>,
    /// Sampled areas whose mode finding failed (random-walk fallback).
    pub mode_fallbacks: usize,
    /// Total clamped bin-probability events seen in accepted states.
    pub clamped_bins: u64,
    /// PWL only: edges with exactly coincident endpoints (limit branch).
    pub coincident_edges: u64,
    /// Step sizes in force after burn-in.
    pub final_steps: Vec<f64>,
}

/// Retained MCMC draws of the latent field and hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws {
    pub prior: PriorKind,
    pub family: Family,
    pub m: usize,
    pub p: usize,
    pub sampled: Vec<bool>,
    /// One m x p matrix per retained draw.
    pub u: Vec<DMatrix<f64>>,
    pub mu: Vec<Vec<f64>>,
    pub tau: Vec<Vec<f64>>,
    /// Length p per draw under PWD, length 1 under PWL.
    pub lambda: Vec<Vec<f64>>,
    pub acceptance: AcceptanceReport,
}

impl PosteriorDraws {
    pub fn n_draws(&self) -> usize {
        self.u.len()
    }
}

/// Acceptance log-ratio of an independent MH step: the proposal density of
/// the current state enters the numerator, that of the candidate the
/// denominator. Invariant to adding a constant to the log-target.
pub fn imh_log_accept_ratio(
    log_target_new: f64,
    log_target_cur: f64,
    log_q_new: f64,
    log_q_cur: f64,
) -> f64 {
    (log_target_new - log_target_cur) + (log_q_cur - log_q_new)
}

/// log Gamma(shape, rate) density.
pub fn gamma_logpdf(x: f64, shape: f64, rate: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
}

/// d/dx log Gamma(shape, rate) density.
pub fn gamma_dlogpdf(x: f64, shape: f64, rate: f64) -> f64 {
    (shape - 1.0) / x - rate
}

pub(crate) fn std_normal(rng: &mut ChaCha12Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Robbins-Monro adaptation of a log step size toward a target acceptance
/// probability; frozen once `freeze` is called.
#[derive(Debug, Clone)]
pub(crate) struct AdaptiveStep {
    pub value: f64,
    target: f64,
    t: usize,
    frozen: bool,
}

impl AdaptiveStep {
    pub fn new(init: f64, target: f64) -> Self {
        AdaptiveStep {
            value: init,
            target,
            t: 0,
            frozen: false,
        }
    }

    pub fn update(&mut self, accept_prob: f64) {
        if self.frozen {
            return;
        }
        self.t += 1;
        let gamma = (self.t as f64).powf(-0.7).min(0.5);
        self.value *= (gamma * (accept_prob - self.target)).exp();
        self.value = self.value.clamp(1e-12, 1e6);
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }
}

/// Edge-weight view used by the shared area update: the PWD prior weights
/// every edge of coordinate l by lambda_l; the PWL hierarchy weights every
/// coordinate of edge e by 1/s_e.
#[derive(Clone, Copy)]
pub(crate) enum EdgeWeights<'a> {
    PerCoordinate(&'a [f64]),
    PerEdge(&'a [f64]),
}

pub(crate) struct AreaUpdateOutcome {
    pub accepted: bool,
    #[allow(dead_code)] // exercised by kernel tests
    pub log_ratio: f64,
    pub clamped_bins: usize,
}

/// Fallback random-walk scale for areas whose mode finding failed.
const RW_FALLBACK_STEP: f64 = 0.25;

/// One independent-MH (or fallback random-walk) update of area i given the
/// current hyperparameters and neighbors. The Gaussian proposal has
/// precision P_i + T + diag_l(sum_j w~_ij) and mean solving that system
/// against P_i u~_i + T mu + sum_j w~_ij u_j.
#[allow(clippy::too_many_arguments)]
pub(crate) fn update_area_generic(
    i: usize,
    field: &mut LatentField,
    family: Family,
    data: &GroupedCounts,
    graph: &AdjacencyGraph,
    tau: &[f64],
    mu: &[f64],
    weights: EdgeWeights,
    mode: Option<&ModeApprox>,
    prob_floor: f64,
    rng: &mut ChaCha12Rng,
) -> Result<AreaUpdateOutcome, ChainError> {
    let p = field.p();
    let row = data.row(i);
    let grid = data.grid();

    // Neighbor aggregation: per-coordinate weight sums and weighted values.
    let mut wsum = vec![0.0; p];
    let mut wval = vec![0.0; p];
    for &(j, e) in graph.neighbors(i) {
        match weights {
            EdgeWeights::PerCoordinate(lam) => {
                for l in 0..p {
                    wsum[l] += lam[l];
                    wval[l] += lam[l] * field.u[(j, l)];
                }
            }
            EdgeWeights::PerEdge(st) => {
                let w = st[e];
                for l in 0..p {
                    wsum[l] += w;
                    wval[l] += w * field.u[(j, l)];
                }
            }
        }
    }

    // Log prior terms in v up to constants that cancel in the ratio.
    let log_prior = |v: &[f64]| -> f64 {
        let mut acc = 0.0;
        for l in 0..p {
            let d = v[l] - mu[l];
            acc -= 0.5 * tau[l] * d * d;
            acc -= 0.5 * (wsum[l] * v[l] * v[l] - 2.0 * v[l] * wval[l]);
        }
        acc
    };
    let log_lik = |v: &[f64]| -> (f64, usize) {
        match crate::grouped::log_multinomial_with_floor(family, v, row, grid, prob_floor) {
            Ok(l) => (l.value, l.clamped_bins),
            Err(_) => (f64::NEG_INFINITY, 0),
        }
    };

    let cur = field.area(i);
    let (lik_cur, _) = log_lik(&cur);

    match mode {
        Some(mode) => {
            // Proposal precision M = P + T + diag(wsum).
            let mut prec = mode.precision.clone();
            for l in 0..p {
                prec[(l, l)] += tau[l] + wsum[l];
            }
            let ch = prec
                .clone()
                .cholesky()
                .ok_or_else(|| ChainError::DimensionMismatch("proposal precision not PD".into()))?;
            let mut rhs = DVector::zeros(p);
            for l in 0..p {
                rhs[l] = tau[l] * mu[l] + wval[l];
                for k in 0..p {
                    rhs[l] += mode.precision[(l, k)] * mode.u_tilde[k];
                }
            }
            let alpha = ch.solve(&rhs);
            let half_logdet: f64 = (0..p).map(|l| ch.l_dirty()[(l, l)].ln()).sum();
            let lfac = ch.l();

            let log_q = |v: &[f64]| -> f64 {
                let d = DVector::from_iterator(p, v.iter().zip(alpha.iter()).map(|(a, b)| a - b));
                let w = lfac.tr_mul(&d);
                half_logdet - 0.5 * w.norm_squared()
            };

            let z = DVector::from_iterator(p, (0..p).map(|_| std_normal(rng)));
            let step = lfac
                .transpose()
                .solve_upper_triangular(&z)
                .ok_or_else(|| ChainError::DimensionMismatch("triangular solve failed".into()))?;
            let cand: Vec<f64> = (0..p).map(|l| alpha[l] + step[l]).collect();

            let (lik_new, clamped) = log_lik(&cand);
            let log_ratio = imh_log_accept_ratio(
                lik_new + log_prior(&cand),
                lik_cur + log_prior(&cur),
                log_q(&cand),
                log_q(&cur),
            );
            let accepted = log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio;
            if accepted {
                field.set_area(i, &cand);
            }
            Ok(AreaUpdateOutcome {
                accepted,
                log_ratio,
                clamped_bins: if accepted { clamped } else { 0 },
            })
        }
        None => {
            // Symmetric random-walk fallback.
            let cand: Vec<f64> = cur
                .iter()
                .map(|&v| v + RW_FALLBACK_STEP * std_normal(rng))
                .collect();
            let (lik_new, clamped) = log_lik(&cand);
            let log_ratio = (lik_new + log_prior(&cand)) - (lik_cur + log_prior(&cur));
            let accepted = log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio;
            if accepted {
                field.set_area(i, &cand);
            }
            Ok(AreaUpdateOutcome {
                accepted,
                log_ratio,
                clamped_bins: if accepted { clamped } else { 0 },
            })
        }
    }
}

/// Gibbs draw of mu_l given the latent column: N(mu*, s2) with
/// mu* = tau_l sum_i u_il / (m tau_l + a_mu), s2 = 1 / (m tau_l + a_mu).
pub fn mu_full_conditional(u_col: &[f64], tau_l: f64, a_mu: f64) -> (f64, f64) {
    let m = u_col.len() as f64;
    let s2 = 1.0 / (m * tau_l + a_mu);
    let mean = tau_l * u_col.iter().sum::<f64>() * s2;
    (mean, s2)
}

pub(crate) fn draw_mu(
    field: &LatentField,
    tau: &[f64],
    a_mu: f64,
    rng: &mut ChaCha12Rng,
) -> Vec<f64> {
    let p = field.p();
    let mut mu = vec![0.0; p];
    for (l, slot) in mu.iter_mut().enumerate() {
        let col: Vec<f64> = field.u.column(l).iter().cloned().collect();
        let (mean, s2) = mu_full_conditional(&col, tau[l], a_mu);
        *slot = mean + s2.sqrt() * std_normal(rng);
    }
    mu
}

/// Deterministic derivation of per-stream seeds from a master seed.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master ^ stream.wrapping_mul(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}
