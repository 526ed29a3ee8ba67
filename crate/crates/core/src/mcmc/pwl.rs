//! MCMC for the Laplace-type pair-wise (PWL) prior: random-walk MH on
//! Phi = (tau_1..tau_p, lambda) against a Monte-Carlo estimate of the
//! normalizing constant C*(tau, lambda), inverse-Gaussian latent edge
//! scales, conditional u updates through the normal-mixture hierarchy, and
//! non-sampled-area prediction.

use super::*;
use crate::graph::EdgeScales;
use crate::grouped::{find_mode_default, log_multinomial_with_floor, median_matching_init};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_distr::Exp1;
use std::io::Write;

/// Hyperstate of the PWL model: a single smoothing weight lambda is shared
/// across the p coordinates, with one latent scale per edge.
#[derive(Debug, Clone, PartialEq)]
pub struct PwlHyper {
    pub mu: Vec<f64>,
    pub tau: Vec<f64>,
    pub lambda: f64,
    pub scales: EdgeScales,
}

/// Monte-Carlo estimate of log C*(tau, lambda), deterministic given the
/// common-random-number seed.
#[derive(Debug, Clone, PartialEq)]
pub struct CstarEstimate {
    pub log_value: f64,
    pub mc_samples: usize,
    pub crn_seed: u64,
    /// Standard error of the log estimate (delta method on the weight mean).
    pub mc_se: f64,
}

/// Exponent of the PWL prior (the normalizing constant excluded): the edge
/// penalty couples the p coordinates through the Euclidean norm.
pub fn pwl_log_prior_kernel(
    field: &LatentField,
    mu: &[f64],
    tau: &[f64],
    lambda: f64,
    graph: &AdjacencyGraph,
) -> f64 {
    let p = field.p();
    let mut acc = 0.0;
    for i in 0..field.m() {
        for l in 0..p {
            let d = field.u[(i, l)] - mu[l];
            acc -= 0.5 * tau[l] * d * d;
        }
    }
    for &(i, j) in graph.edges() {
        let mut d2 = 0.0;
        for l in 0..p {
            let d = field.u[(i, l)] - field.u[(j, l)];
            d2 += d * d;
        }
        acc -= lambda * d2.sqrt();
    }
    acc
}

/// C*(tau, lambda)^-1 is proportional to
/// lambda^-delta E[ prod_l |Q*(tau_l, S)|^{-1/2} prod_e s_e^{-1/2} ] over
/// s_e ~ Exp(lambda^2/2). The expectation is estimated by `mc` i.i.d. scale
/// sets drawn from the CRN stream; the fixed proportionality constant is
/// dropped (it cancels in every MH ratio).
pub fn estimate_log_cstar(
    graph: &AdjacencyGraph,
    tau: &[f64],
    lambda: f64,
    mc: usize,
    crn_seed: u64,
) -> Result<CstarEstimate, GraphError> {
    assert!(mc >= 1, "mc must be >= 1");
    let m = graph.m();
    let delta = graph.edge_count();
    if delta == 0 {
        let log_value = tau.iter().map(|&t| 0.5 * m as f64 * t.ln()).sum();
        return Ok(CstarEstimate {
            log_value,
            mc_samples: mc,
            crn_seed,
            mc_se: 0.0,
        });
    }
    let mut rng = ChaCha12Rng::seed_from_u64(crn_seed);
    let rate = 0.5 * lambda * lambda;
    let mut log_w = Vec::with_capacity(mc);
    let mut s = vec![0.0; delta];
    for _ in 0..mc {
        for slot in s.iter_mut() {
            let e: f64 = rng.sample(Exp1);
            *slot = (e / rate).max(1e-300);
        }
        let scales = EdgeScales { s: s.clone() };
        let mut lw = 0.0;
        for &t in tau {
            lw -= 0.5 * graph.logdet_qstar(t, &scales)?;
        }
        for &v in &s {
            lw -= 0.5 * v.ln();
        }
        log_w.push(lw);
    }
    let max = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let shifted: Vec<f64> = log_w.iter().map(|&lw| (lw - max).exp()).collect();
    let mean_w: f64 = shifted.iter().sum::<f64>() / mc as f64;
    let log_avg = max + mean_w.ln();
    let mc_se = if mc > 1 {
        let var: f64 =
            shifted.iter().map(|&w| (w - mean_w) * (w - mean_w)).sum::<f64>() / (mc - 1) as f64;
        (var / mc as f64).sqrt() / mean_w
    } else {
        f64::NAN
    };
    Ok(CstarEstimate {
        log_value: delta as f64 * lambda.ln() - log_avg,
        mc_samples: mc,
        crn_seed,
        mc_se,
    })
}

/// Inverse-Gaussian IG(a, b) draw by the transformation method.
pub fn inverse_gaussian_sample(rng: &mut ChaCha12Rng, a: f64, b: f64) -> f64 {
    let z = std_normal(rng);
    let nu = z * z;
    let x1 = if nu == 0.0 {
        a
    } else {
        let t = a * nu / (2.0 * b);
        let s = (t * (t + 2.0)).sqrt();
        a * (1.0 - 2.0 * t / (t + s))
    };
    let u: f64 = rng.random();
    if u <= a / (a + x1) {
        x1
    } else {
        a * a / x1
    }
}

/// IG(a, b) density: sqrt(b / (2 pi x^3)) exp(-b (x - a)^2 / (2 a^2 x)).
pub fn inverse_gaussian_pdf(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    (b / (2.0 * std::f64::consts::PI * x * x * x)).sqrt()
        * (-b * (x - a) * (x - a) / (2.0 * a * a * x)).exp()
}

/// Conditional mean/variance of one non-sampled area's coordinates given
/// fixed edge scales: Gamma = (T + I_p sum_j s~_ij)^-1 diagonal.
pub fn nonsampled_conditional_pwl(
    graph: &AdjacencyGraph,
    i: usize,
    field: &LatentField,
    mu: &[f64],
    tau: &[f64],
    stilde: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let p = field.p();
    let mut wsum = 0.0;
    let mut wval = vec![0.0; p];
    for &(j, e) in graph.neighbors(i) {
        wsum += stilde[e];
        for (l, w) in wval.iter_mut().enumerate() {
            *w += stilde[e] * field.u[(j, l)];
        }
    }
    let mut mean = vec![0.0; p];
    let mut var = vec![0.0; p];
    for l in 0..p {
        let s2 = 1.0 / (tau[l] + wsum);
        var[l] = s2;
        mean[l] = s2 * (tau[l] * mu[l] + wval[l]);
    }
    (mean, var)
}

/// One PWL chain.
pub struct PwlChain<'a> {
    pub family: Family,
    pub data: &'a GroupedCounts,
    pub graph: &'a AdjacencyGraph,
    pub prior: PriorConfig,
    pub config: McmcConfig,
    pub field: LatentField,
    pub hyper: PwlHyper,
    pub rng: ChaCha12Rng,
    stilde: Vec<f64>,
    modes: Vec<Option<ModeApprox>>,
    step: AdaptiveStep,
    mode_fallbacks: usize,
    u_proposed: u64,
    u_accepted: u64,
    phi_proposed: u64,
    phi_accepted: u64,
    clamped: u64,
    coincident: u64,
    last_cstar: Option<CstarEstimate>,
}

impl<'a> PwlChain<'a> {
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
        let scales = EdgeScales::constant(graph, 1.0)?;
        let stilde = scales.s.iter().map(|&s| 1.0 / s).collect();
        let hyper = PwlHyper {
            mu,
            tau: vec![1.0; p],
            lambda: 1.0,
            scales,
        };
        Ok(PwlChain {
            family,
            data,
            graph,
            prior,
            config: config.clone(),
            field,
            hyper,
            rng: ChaCha12Rng::seed_from_u64(config.seed),
            stilde,
            modes,
            step: AdaptiveStep::new(config.rw_step, 0.234),
            mode_fallbacks,
            u_proposed: 0,
            u_accepted: 0,
            phi_proposed: 0,
            phi_accepted: 0,
            clamped: 0,
            coincident: 0,
            last_cstar: None,
        })
    }

    pub fn mode(&self, i: usize) -> Option<&ModeApprox> {
        self.modes[i].as_ref()
    }

    pub fn rw_step(&self) -> f64 {
        self.step.value
    }

    /// Override the current edge scales (test hook and predict path).
    pub fn set_scales(&mut self, scales: EdgeScales) -> Result<(), ChainError> {
        if scales.s.len() != self.graph.edge_count() {
            return Err(ChainError::DimensionMismatch("edge scale count".into()));
        }
        self.stilde = scales.s.iter().map(|&s| 1.0 / s).collect();
        self.hyper.scales = scales;
        Ok(())
    }

    fn log_h_phi(&self, tau: &[f64], lambda: f64, crn_seed: u64) -> Result<f64, ChainError> {
        let cstar =
            estimate_log_cstar(self.graph, tau, lambda, self.config.cstar_samples, crn_seed)?;
        let kernel = pwl_log_prior_kernel(&self.field, &self.hyper.mu, tau, lambda, self.graph);
        let mut lp = cstar.log_value + kernel;
        for &t in tau {
            lp += gamma_logpdf(t, self.prior.b_tau, self.prior.c_tau);
        }
        lp += gamma_logpdf(lambda, self.prior.b_lambda, self.prior.c_lambda);
        Ok(lp)
    }

    /// Random-walk MH update of Phi = (tau_1..tau_p, lambda). Both sides of
    /// the ratio use the C* estimator under a shared CRN seed, refreshed
    /// every call.
    pub fn update_phi(&mut self, adapt: bool) -> Result<bool, ChainError> {
        let crn_seed = self.rng.random::<u64>();
        let b = self.step.value;
        let mut prop_tau = self.hyper.tau.clone();
        for t in prop_tau.iter_mut() {
            *t += b * std_normal(&mut self.rng);
        }
        let prop_lambda = self.hyper.lambda + b * std_normal(&mut self.rng);
        self.phi_proposed += 1;

        let mut alpha = 0.0;
        let mut accepted = false;
        if prop_tau.iter().all(|&t| t > 0.0) && prop_lambda > 0.0 {
            let cur = self.log_h_phi(&self.hyper.tau, self.hyper.lambda, crn_seed)?;
            let new = self.log_h_phi(&prop_tau, prop_lambda, crn_seed)?;
            let log_ratio = new - cur;
            alpha = log_ratio.min(0.0).exp();
            accepted = log_ratio >= 0.0 || self.rng.random::<f64>().ln() < log_ratio;
            if accepted {
                self.hyper.tau = prop_tau;
                self.hyper.lambda = prop_lambda;
                self.phi_accepted += 1;
            }
            // Diagnostic: estimator noise at the retained state.
            self.last_cstar = Some(estimate_log_cstar(
                self.graph,
                &self.hyper.tau,
                self.hyper.lambda,
                self.config.cstar_samples,
                crn_seed,
            )?);
        }
        if adapt && self.config.adapt {
            self.step.update(alpha);
        }
        Ok(accepted)
    }

    /// Gibbs update of every latent edge scale: s_e^-1 ~ IG(lambda/||d||, lambda^2),
    /// with the chi-square limit branch when the endpoints coincide exactly.
    pub fn update_edge_scales(&mut self) {
        let lambda = self.hyper.lambda;
        let b = lambda * lambda;
        let p = self.field.p();
        for (e, &(i, j)) in self.graph.edges().iter().enumerate() {
            let mut d2 = 0.0;
            for l in 0..p {
                let d = self.field.u[(i, l)] - self.field.u[(j, l)];
                d2 += d * d;
            }
            let x = if d2 > 0.0 {
                inverse_gaussian_sample(&mut self.rng, lambda / d2.sqrt(), b)
            } else {
                self.coincident += 1;
                let z = std_normal(&mut self.rng);
                b / (z * z).max(1e-300)
            };
            let s = (1.0 / x).clamp(1e-300, 1e300);
            self.hyper.scales.s[e] = s;
            self.stilde[e] = 1.0 / s;
        }
    }

    /// Independent-MH update of sampled area i with edge weights s~_ij.
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
            EdgeWeights::PerEdge(&self.stilde),
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

    /// Gaussian draw of one non-sampled area given the current edge scales.
    pub fn draw_nonsampled_given_scales(&mut self, i: usize) {
        let (mean, var) = nonsampled_conditional_pwl(
            self.graph,
            i,
            &self.field,
            &self.hyper.mu,
            &self.hyper.tau,
            &self.stilde,
        );
        for l in 0..self.field.p() {
            self.field.u[(i, l)] = mean[l] + var[l].sqrt() * std_normal(&mut self.rng);
        }
    }

    /// Non-sampled prediction: refresh the scales on the area's edges from
    /// the Step-2 rule, then draw u_(s) from the resulting Gaussian.
    pub fn predict_nonsampled(&mut self) {
        let lambda = self.hyper.lambda;
        let b = lambda * lambda;
        let p = self.field.p();
        for i in 0..self.field.m() {
            if self.field.sampled[i] {
                continue;
            }
            let neighbor_edges: Vec<(usize, usize)> = self.graph.neighbors(i).to_vec();
            for &(j, e) in &neighbor_edges {
                let mut d2 = 0.0;
                for l in 0..p {
                    let d = self.field.u[(i, l)] - self.field.u[(j, l)];
                    d2 += d * d;
                }
                let x = if d2 > 0.0 {
                    inverse_gaussian_sample(&mut self.rng, lambda / d2.sqrt(), b)
                } else {
                    self.coincident += 1;
                    let z = std_normal(&mut self.rng);
                    b / (z * z).max(1e-300)
                };
                let s = (1.0 / x).clamp(1e-300, 1e300);
                self.hyper.scales.s[e] = s;
                self.stilde[e] = 1.0 / s;
            }
            self.draw_nonsampled_given_scales(i);
        }
    }

    pub fn update_mu(&mut self) {
        self.hyper.mu = draw_mu(&self.field, &self.hyper.tau, self.prior.a_mu, &mut self.rng);
    }

    /// One sweep: Phi, edge scales, sampled u areas, non-sampled imputation, mu.
    pub fn sweep(&mut self, iteration: usize) -> Result<(), ChainError> {
        let adapt = iteration < self.config.burn_in;
        self.update_phi(adapt)?;
        self.update_edge_scales();
        for i in 0..self.field.m() {
            if self.field.sampled[i] {
                self.update_u_area(i)?;
            }
        }
        self.predict_nonsampled();
        self.update_mu();
        if iteration + 1 == self.config.burn_in {
            self.step.freeze();
        }
        Ok(())
    }

    /// Joint unnormalized log posterior (diagnostic; uses the cached C*
    /// estimate from the last Phi evaluation).
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
        lp += pwl_log_prior_kernel(
            &self.field,
            &self.hyper.mu,
            &self.hyper.tau,
            self.hyper.lambda,
            self.graph,
        );
        if let Some(c) = &self.last_cstar {
            lp += c.log_value;
        }
        for l in 0..self.field.p() {
            lp += -0.5 * self.prior.a_mu * self.hyper.mu[l] * self.hyper.mu[l];
            lp += gamma_logpdf(self.hyper.tau[l], self.prior.b_tau, self.prior.c_tau);
        }
        lp += gamma_logpdf(self.hyper.lambda, self.prior.b_lambda, self.prior.c_lambda);
        lp
    }

    fn acceptance(&self) -> AcceptanceReport {
        AcceptanceReport {
            u_accept_rate: if self.u_proposed > 0 {
                self.u_accepted as f64 / self.u_proposed as f64
            } else {
                f64::NAN
            },
            hyper_accept_rate: vec![if self.phi_proposed > 0 {
                self.phi_accepted as f64 / self.phi_proposed as f64
            } else {
                f64::NAN
            }],
            mode_fallbacks: self.mode_fallbacks,
            clamped_bins: self.clamped,
            coincident_edges: self.coincident,
            final_steps: vec![self.step.value],
        }
    }

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
                lambda.push(vec![self.hyper.lambda]);
            }
            if let Some(sink) = log.as_deref_mut() {
                let acc = self.acceptance();
                writeln!(
                    sink,
                    "iter={} accept_u={:.4} accept_phi={:.4} logpost={:.6} cstar_se={:.6}",
                    it,
                    acc.u_accept_rate,
                    acc.hyper_accept_rate[0],
                    self.log_posterior(),
                    self.last_cstar.as_ref().map(|c| c.mc_se).unwrap_or(f64::NAN)
                )?;
            }
        }
        Ok(PosteriorDraws {
            prior: PriorKind::Pwl,
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

/// Build and run one PWL chain.
pub fn run_pwl_chain(
    data: &GroupedCounts,
    graph: &AdjacencyGraph,
    family: Family,
    prior: PriorConfig,
    config: McmcConfig,
    log: Option<&mut dyn Write>,
) -> Result<PosteriorDraws, ChainError> {
    PwlChain::new(data, graph, family, prior, config)?.run(log)
}
