//! MCMC for the pair-wise difference (PWD) prior: independent MH for each
//! area vector, a Gibbs draw for the grand means, MALA for the precision
//! pairs (tau_l, lambda_l), and conditional-Gaussian imputation for
//! non-sampled areas.

use super::*;
use crate::grouped::{find_mode_default, log_multinomial_with_floor, median_matching_init};
use nalgebra::DMatrix;
use rand::SeedableRng;
use std::io::Write;

/// Grand means, shrinkage precisions and smoothing precisions, one triple of
/// vectors over the p coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct PwdHyper {
    pub mu: Vec<f64>,
    pub tau: Vec<f64>,
    pub lambda: Vec<f64>,
}

/// Unnormalized-in-u log prior of the latent field; normalized in
/// (tau, lambda) through the 1/2 log|Q| term.
pub fn pwd_log_prior(
    field: &LatentField,
    hyper: &PwdHyper,
    graph: &AdjacencyGraph,
) -> Result<f64, GraphError> {
    let p = field.p();
    let mut total = 0.0;
    for l in 0..p {
        let (s_tau, s_lam) = quad_sums(field, hyper.mu[l], graph, l);
        let logdet = graph.logdet_q(hyper.tau[l], hyper.lambda[l])?;
        total += 0.5 * logdet - 0.5 * hyper.tau[l] * s_tau - 0.5 * hyper.lambda[l] * s_lam;
    }
    Ok(total)
}

/// (sum_i (u_il - mu_l)^2, sum_{i<j} w_ij (u_il - u_jl)^2) for coordinate l.
pub fn quad_sums(field: &LatentField, mu_l: f64, graph: &AdjacencyGraph, l: usize) -> (f64, f64) {
    let mut s_tau = 0.0;
    for i in 0..field.m() {
        let d = field.u[(i, l)] - mu_l;
        s_tau += d * d;
    }
    let mut s_lam = 0.0;
    for &(i, j) in graph.edges() {
        let d = field.u[(i, l)] - field.u[(j, l)];
        s_lam += d * d;
    }
    (s_tau, s_lam)
}

/// Negative log full-conditional of (tau_l, lambda_l) and its gradient.
/// U = -1/2 log|Q| + tau/2 S_tau + lambda/2 S_lam - log pi(tau) - log pi(lambda).
pub fn mala_target_and_grad(
    graph: &AdjacencyGraph,
    tau: f64,
    lambda: f64,
    s_tau: f64,
    s_lam: f64,
    prior: &PriorConfig,
) -> Result<(f64, [f64; 2]), GraphError> {
    let (logdet, tr_inv, tr_inv_w) = graph.logdet_and_traces(tau, lambda)?;
    let u = -0.5 * logdet + 0.5 * tau * s_tau + 0.5 * lambda * s_lam
        - gamma_logpdf(tau, prior.b_tau, prior.c_tau)
        - gamma_logpdf(lambda, prior.b_lambda, prior.c_lambda);
    let g_tau = -0.5 * tr_inv + 0.5 * s_tau - gamma_dlogpdf(tau, prior.b_tau, prior.c_tau);
    let g_lam = -0.5 * tr_inv_w + 0.5 * s_lam - gamma_dlogpdf(lambda, prior.b_lambda, prior.c_lambda);
    Ok((u, [g_tau, g_lam]))
}

/// Mean and variance of the full conditional of one non-sampled area's
/// coordinate l: N(s2 (tau mu + lambda sum_j u_jl), s2),
/// s2 = 1/(tau + w_i lambda).
pub fn nonsampled_conditional(
    graph: &AdjacencyGraph,
    i: usize,
    field: &LatentField,
    hyper: &PwdHyper,
) -> (Vec<f64>, Vec<f64>) {
    let p = field.p();
    let w_i = graph.degree(i) as f64;
    let mut mean = vec![0.0; p];
    let mut var = vec![0.0; p];
    for l in 0..p {
        let mut nb = 0.0;
        for &(j, _) in graph.neighbors(i) {
            nb += field.u[(j, l)];
        }
        let s2 = 1.0 / (hyper.tau[l] + w_i * hyper.lambda[l]);
        var[l] = s2;
        mean[l] = s2 * (hyper.tau[l] * hyper.mu[l] + hyper.lambda[l] * nb);
    }
    (mean, var)
}

/// One PWD chain: holds the mutable state and per-area cached proposals.
pub struct PwdChain<'a> {
    pub family: Family,
    pub data: &'a GroupedCounts,
    pub graph: &'a AdjacencyGraph,
    pub prior: PriorConfig,
    pub config: McmcConfig,
    pub field: LatentField,
    pub hyper: PwdHyper,
    pub rng: ChaCha12Rng,
    modes: Vec<Option<ModeApprox>>,
    steps: Vec<AdaptiveStep>,
    mode_fallbacks: usize,
    u_proposed: u64,
    u_accepted: u64,
    hyper_proposed: Vec<u64>,
    hyper_accepted: Vec<u64>,
    clamped: u64,
}

impl<'a> PwdChain<'a> {
    pub fn new(
        data: &'a GroupedCounts,
        graph: &'a AdjacencyGraph,
        family: Family,
        prior: PriorConfig,
        config: McmcConfig,
    ) -> Result<Self, ChainError> {
        if data.m() != graph.m() {
            return Err(ChainError::DimensionMismatch(format!(
                "counts have {} areas, graph has {}",
                data.m(),
                graph.m()
            )));
        }
        prior.validate()?;
        config.validate()?;
        let m = data.m();
        let p = family.param_count();

        // The proposal core (mode, curvature) depends only on the data, so it
        // is built once per chain.
        let mut modes: Vec<Option<ModeApprox>> = Vec::with_capacity(m);
        let mut mode_fallbacks = 0;
        let mut init = DMatrix::zeros(m, p);
        for i in 0..m {
            if !data.is_sampled(i) {
                modes.push(None);
                continue;
            }
            let mode = find_mode_default(family, data.row(i), data.grid())?;
            let start = if mode.converged {
                mode.u_tilde.clone()
            } else {
                mode_fallbacks += 1;
                median_matching_init(family, data.row(i), data.grid())
            };
            for l in 0..p {
                init[(i, l)] = start[l];
            }
            modes.push(if mode.converged { Some(mode) } else { None });
        }
        // Non-sampled areas start at the mean of the sampled starts.
        let n_sampled = data.sampled_count();
        if n_sampled > 0 {
            for l in 0..p {
                let mean = (0..m)
                    .filter(|&i| data.is_sampled(i))
                    .map(|i| init[(i, l)])
                    .sum::<f64>()
                    / n_sampled as f64;
                for i in 0..m {
                    if !data.is_sampled(i) {
                        init[(i, l)] = mean;
                    }
                }
            }
        }
        let mu = (0..p)
            .map(|l| init.column(l).iter().sum::<f64>() / m as f64)
            .collect();
        let field = LatentField::new(init, data.sampled_flags().to_vec());
        let hyper = PwdHyper {
            mu,
            tau: vec![1.0; p],
            lambda: vec![1.0; p],
        };
        let steps = (0..p)
            .map(|_| AdaptiveStep::new(config.mala_step, 0.574))
            .collect();
        let rng = ChaCha12Rng::seed_from_u64(config.seed);
        Ok(PwdChain {
            family,
            data,
            graph,
            prior,
            config,
            field,
            hyper,
            rng,
            modes,
            steps,
            mode_fallbacks,
            u_proposed: 0,
            u_accepted: 0,
            hyper_proposed: vec![0; p],
            hyper_accepted: vec![0; p],
            clamped: 0,
        })
    }

    pub fn mode(&self, i: usize) -> Option<&ModeApprox> {
        self.modes[i].as_ref()
    }

    pub fn mala_step(&self, l: usize) -> f64 {
        self.steps[l].value
    }

    /// Independent-MH update of sampled area i.
    pub fn update_u_area(&mut self, i: usize) -> Result<bool, ChainError> {
        debug_assert!(self.data.is_sampled(i));
        let outcome = update_area_generic(
            i,
            &mut self.field,
            self.family,
            self.data,
            self.graph,
            &self.hyper.tau,
            &self.hyper.mu,
            EdgeWeights::PerCoordinate(&self.hyper.lambda),
            self.modes[i].as_ref(),
            self.config.prob_floor,
            &mut self.rng,
        )?;
        self.u_proposed += 1;
        if outcome.accepted {
            self.u_accepted += 1;
        }
        self.clamped += outcome.clamped_bins as u64;
        Ok(outcome.accepted)
    }

    /// Draw every non-sampled area from its Gaussian full conditional.
    pub fn predict_nonsampled(&mut self) {
        for i in 0..self.field.m() {
            if self.field.sampled[i] {
                continue;
            }
            let (mean, var) = nonsampled_conditional(self.graph, i, &self.field, &self.hyper);
            for l in 0..self.field.p() {
                self.field.u[(i, l)] = mean[l] + var[l].sqrt() * std_normal(&mut self.rng);
            }
        }
    }

    /// Gibbs draw of all grand means.
    pub fn update_mu(&mut self) {
        self.hyper.mu = draw_mu(&self.field, &self.hyper.tau, self.prior.a_mu, &mut self.rng);
    }

    /// MALA update of (tau_l, lambda_l). Proposals leaving the positive
    /// orthant are rejected outright (prior support).
    pub fn update_tau_lambda(&mut self, l: usize, adapt: bool) -> Result<bool, ChainError> {
        let (s_tau, s_lam) = quad_sums(&self.field, self.hyper.mu[l], self.graph, l);
        let h = self.steps[l].value;
        let cur = [self.hyper.tau[l], self.hyper.lambda[l]];
        let (u_cur, g_cur) =
            mala_target_and_grad(self.graph, cur[0], cur[1], s_tau, s_lam, &self.prior)?;
        let drift = [cur[0] - h * g_cur[0], cur[1] - h * g_cur[1]];
        let noise = (2.0 * h).sqrt();
        let prop = [
            drift[0] + noise * std_normal(&mut self.rng),
            drift[1] + noise * std_normal(&mut self.rng),
        ];
        self.hyper_proposed[l] += 1;

        let mut alpha = 0.0;
        let mut accepted = false;
        if prop[0] > 0.0 && prop[1] > 0.0 {
            let (u_new, g_new) =
                mala_target_and_grad(self.graph, prop[0], prop[1], s_tau, s_lam, &self.prior)?;
            let back = [prop[0] - h * g_new[0], prop[1] - h * g_new[1]];
            let log_q_forward =
                -((prop[0] - drift[0]).powi(2) + (prop[1] - drift[1]).powi(2)) / (4.0 * h);
            let log_q_back =
                -((cur[0] - back[0]).powi(2) + (cur[1] - back[1]).powi(2)) / (4.0 * h);
            let log_ratio = (u_cur - u_new) + (log_q_back - log_q_forward);
            alpha = log_ratio.min(0.0).exp();
            accepted = log_ratio >= 0.0 || self.rng.random::<f64>().ln() < log_ratio;
            if accepted {
                self.hyper.tau[l] = prop[0];
                self.hyper.lambda[l] = prop[1];
                self.hyper_accepted[l] += 1;
            }
        }
        if adapt && self.config.adapt {
            self.steps[l].update(alpha);
        }
        Ok(accepted)
    }

    /// One full sweep in the order: sampled u areas, non-sampled imputation,
    /// mu, then each (tau_l, lambda_l).
    pub fn sweep(&mut self, iteration: usize) -> Result<(), ChainError> {
        let adapt = iteration < self.config.burn_in;
        for i in 0..self.field.m() {
            if self.field.sampled[i] {
                self.update_u_area(i)?;
            }
        }
        self.predict_nonsampled();
        self.update_mu();
        for l in 0..self.field.p() {
            self.update_tau_lambda(l, adapt)?;
        }
        if iteration + 1 == self.config.burn_in {
            for s in &mut self.steps {
                s.freeze();
            }
        }
        Ok(())
    }

    /// Joint unnormalized log posterior (diagnostic).
    pub fn log_posterior(&self) -> f64 {
        let mut lp = 0.0;
        for i in 0..self.field.m() {
            if !self.field.sampled[i] {
                continue;
            }
            let u = self.field.area(i);
            lp += log_multinomial_with_floor(
                self.family,
                &u,
                self.data.row(i),
                self.data.grid(),
                self.config.prob_floor,
            )
            .map(|l| l.value)
            .unwrap_or(f64::NEG_INFINITY);
        }
        lp += pwd_log_prior(&self.field, &self.hyper, self.graph).unwrap_or(f64::NEG_INFINITY);
        for l in 0..self.field.p() {
            lp += -0.5 * self.prior.a_mu * self.hyper.mu[l] * self.hyper.mu[l];
            lp += gamma_logpdf(self.hyper.tau[l], self.prior.b_tau, self.prior.c_tau);
            lp += gamma_logpdf(self.hyper.lambda[l], self.prior.b_lambda, self.prior.c_lambda);
        }
        lp
    }

    fn acceptance(&self) -> AcceptanceReport {
        AcceptanceReport {
            u_accept_rate: if self.u_proposed > 0 {
                self.u_accepted as f64 / self.u_proposed as f64
            } else {
                f64::NAN
            },
            hyper_accept_rate: self
                .hyper_accepted
                .iter()
                .zip(&self.hyper_proposed)
                .map(|(&a, &n)| if n > 0 { a as f64 / n as f64 } else { f64::NAN })
                .collect(),
            mode_fallbacks: self.mode_fallbacks,
            clamped_bins: self.clamped,
            coincident_edges: 0,
            final_steps: self.steps.iter().map(|s| s.value).collect(),
        }
    }

    /// Run the configured number of sweeps, retaining thinned post-burn-in
    /// draws. Deterministic given the seed.
    pub fn run(mut self, mut log: Option<&mut dyn Write>) -> Result<PosteriorDraws, ChainError> {
        let retained = self.config.retained();
        let mut u = Vec::with_capacity(retained);
        let mut mu = Vec::with_capacity(retained);
        let mut tau = Vec::with_capacity(retained);
        let mut lambda = Vec::with_capacity(retained);
        for it in 0..self.config.iterations {
            self.sweep(it)?;
            if self.config.retain_at(it) {
                u.push(self.field.u.clone());
                mu.push(self.hyper.mu.clone());
                tau.push(self.hyper.tau.clone());
                lambda.push(self.hyper.lambda.clone());
            }
            if let Some(sink) = log.as_deref_mut() {
                let acc = self.acceptance();
                let rates: Vec<String> = acc
                    .hyper_accept_rate
                    .iter()
                    .map(|r| format!("{r:.4}"))
                    .collect();
                writeln!(
                    sink,
                    "iter={} accept_u={:.4} accept_tau_lambda={} logpost={:.6}",
                    it,
                    acc.u_accept_rate,
                    rates.join(","),
                    self.log_posterior()
                )?;
            }
        }
        Ok(PosteriorDraws {
            prior: PriorKind::Pwd,
            family: self.family,
            m: self.field.m(),
            p: self.field.p(),
            sampled: self.field.sampled.clone(),
            u,
            mu,
            tau,
            lambda,
            acceptance: self.acceptance(),
        })
    }
}

/// Build and run one PWD chain.
pub fn run_pwd_chain(
    data: &GroupedCounts,
    graph: &AdjacencyGraph,
    family: Family,
    prior: PriorConfig,
    config: McmcConfig,
    log: Option<&mut dyn Write>,
) -> Result<PosteriorDraws, ChainError> {
    PwdChain::new(data, graph, family, prior, config)?.run(log)
}
