//! Sampler kernel behavior on small instances: stationary moments against
//! hand-inverted precision matrices, factorization with the smoothing turned
//! off, step-size limits, and the Monte-Carlo normalizing constant against a
//! deterministic quadrature oracle.

mod common;

use common::{adaptive_quad, batch_mean_se, mean, variance};
use nalgebra::{DMatrix, DVector};
use spatial_income_core::family::Family;
use spatial_income_core::graph::{AdjacencyGraph, EdgeScales};
use spatial_income_core::grouped::{BoundaryGrid, GroupedCounts};
use spatial_income_core::mcmc::pwd::{pwd_log_prior, PwdHyper};
use spatial_income_core::mcmc::pwl::{estimate_log_cstar, nonsampled_conditional_pwl};
use spatial_income_core::mcmc::{LatentField, McmcConfig, PriorConfig, PwdChain, PwlChain};

fn flat_data(m: usize) -> GroupedCounts {
    let grid = BoundaryGrid::from_interior(&[]).unwrap();
    GroupedCounts::new(vec![vec![10]; m], grid).unwrap()
}

fn pwd_chain<'a>(
    data: &'a GroupedCounts,
    graph: &'a AdjacencyGraph,
    seed: u64,
) -> PwdChain<'a> {
    let cfg = McmcConfig {
        iterations: 10,
        burn_in: 1,
        seed,
        ..Default::default()
    };
    PwdChain::new(data, graph, Family::LogNormal, PriorConfig::default(), cfg).unwrap()
}

#[test]
fn pwd_log_prior_matches_dense_gaussian_oracle() {
    // Path of 5 areas, random field: the edge-sum form equals the dense
    // quadratic form (u - mu 1)' Q (u - mu 1) with the 1/2 log|Q| normalizer.
    let graph = AdjacencyGraph::path(5);
    let u = DMatrix::from_row_slice(5, 2, &[
        0.3, -0.1, 0.7, 0.2, -0.4, 0.5, 0.1, -0.6, 0.9, 0.3,
    ]);
    let field = LatentField::new(u.clone(), vec![true; 5]);
    let hyper = PwdHyper {
        mu: vec![0.2, -0.1],
        tau: vec![1.4, 0.6],
        lambda: vec![0.9, 2.3],
    };
    let lp = pwd_log_prior(&field, &hyper, &graph).unwrap();
    let mut oracle = 0.0;
    for l in 0..2 {
        let q = graph.precision_q(hyper.tau[l], hyper.lambda[l]).unwrap();
        let dev = DVector::from_fn(5, |i, _| u[(i, l)] - hyper.mu[l]);
        let quad = (&q * &dev).dot(&dev);
        let logdet: f64 = q
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .map(|e| e.ln())
            .sum();
        oracle += 0.5 * logdet - 0.5 * quad;
    }
    assert!((lp - oracle).abs() < 1e-10, "{lp} vs {oracle}");
}

#[test]
fn flat_single_area_reaches_prior_conditional() {
    // m = 1, flat likelihood: the stationary law of u is N(mu, 1/tau).
    let data = flat_data(1);
    let graph = AdjacencyGraph::empty(1);
    let mut chain = pwd_chain(&data, &graph, 42);
    chain.hyper.mu = vec![0.7, -0.3];
    chain.hyper.tau = vec![2.0, 5.0];
    let n = 20_000;
    let mut draws0 = Vec::with_capacity(n);
    let mut draws1 = Vec::with_capacity(n);
    for _ in 0..n {
        chain.update_u_area(0).unwrap();
        draws0.push(chain.field.u[(0, 0)]);
        draws1.push(chain.field.u[(0, 1)]);
    }
    for (draws, mu, tau) in [(&draws0, 0.7, 2.0), (&draws1, -0.3, 5.0)] {
        let se = batch_mean_se(draws);
        assert!((mean(draws) - mu).abs() < 4.0 * se, "mean off");
        let v = variance(draws);
        assert!((v - 1.0 / tau).abs() / (1.0 / tau) < 0.06, "var {v}");
    }
}

#[test]
fn flat_two_area_covariance_matches_precision_inverse() {
    // m = 2 path, flat likelihood, fixed hyper: stationary covariance of a
    // coordinate's column is Q(tau, lambda)^-1, hand-inverted.
    let data = flat_data(2);
    let graph = AdjacencyGraph::path(2);
    let mut chain = pwd_chain(&data, &graph, 7);
    let (tau, lambda) = (1.5, 2.0);
    chain.hyper.mu = vec![0.0, 0.0];
    chain.hyper.tau = vec![tau, tau];
    chain.hyper.lambda = vec![lambda, lambda];
    let n = 40_000;
    let mut a = Vec::with_capacity(n);
    let mut b = Vec::with_capacity(n);
    for _ in 0..n {
        chain.update_u_area(0).unwrap();
        chain.update_u_area(1).unwrap();
        a.push(chain.field.u[(0, 0)]);
        b.push(chain.field.u[(1, 0)]);
    }
    let det = (tau + lambda) * (tau + lambda) - lambda * lambda;
    let v_expect = (tau + lambda) / det;
    let c_expect = lambda / det;
    let va = variance(&a);
    let vb = variance(&b);
    let ma = mean(&a);
    let mb = mean(&b);
    let cov = a
        .iter()
        .zip(&b)
        .map(|(&x, &y)| (x - ma) * (y - mb))
        .sum::<f64>()
        / (n - 1) as f64;
    assert!((va - v_expect).abs() / v_expect < 0.06, "var0 {va} vs {v_expect}");
    assert!((vb - v_expect).abs() / v_expect < 0.06, "var1 {vb} vs {v_expect}");
    assert!((cov - c_expect).abs() / c_expect < 0.12, "cov {cov} vs {c_expect}");
}

#[test]
fn pwl_fixed_scales_covariance_matches_qstar_inverse() {
    let data = flat_data(2);
    let graph = AdjacencyGraph::path(2);
    let cfg = McmcConfig {
        iterations: 10,
        burn_in: 1,
        seed: 11,
        ..Default::default()
    };
    let mut chain = PwlChain::new(
        &data,
        &graph,
        Family::LogNormal,
        PriorConfig::default(),
        cfg,
    )
    .unwrap();
    let tau = 1.2;
    let s = 0.4;
    chain.hyper.mu = vec![0.0, 0.0];
    chain.hyper.tau = vec![tau, tau];
    chain.set_scales(EdgeScales::new(vec![s]).unwrap()).unwrap();
    let n = 40_000;
    let mut a = Vec::with_capacity(n);
    let mut b = Vec::with_capacity(n);
    for _ in 0..n {
        chain.update_u_area(0).unwrap();
        chain.update_u_area(1).unwrap();
        a.push(chain.field.u[(0, 0)]);
        b.push(chain.field.u[(1, 0)]);
    }
    // Q* = [[tau + w, -w], [-w, tau + w]] with w = 1/s.
    let w = 1.0 / s;
    let det = (tau + w) * (tau + w) - w * w;
    let v_expect = (tau + w) / det;
    let c_expect = w / det;
    let va = variance(&a);
    let ma = mean(&a);
    let mb = mean(&b);
    let cov = a
        .iter()
        .zip(&b)
        .map(|(&x, &y)| (x - ma) * (y - mb))
        .sum::<f64>()
        / (n - 1) as f64;
    assert!((va - v_expect).abs() / v_expect < 0.06, "var {va} vs {v_expect}");
    assert!((cov - c_expect).abs() / c_expect < 0.08, "cov {cov} vs {c_expect}");
}

#[test]
fn zero_smoothing_factorizes_across_areas() {
    // With lambda = 0 the posterior of area 0 ignores area 1: a two-area
    // chain and a single-area chain agree on the u marginal moments.
    let grid = BoundaryGrid::from_interior(&[1.0, 2.5]).unwrap();
    let row0 = vec![14u64, 9, 7];
    let row1 = vec![3u64, 21, 10];
    let data2 = GroupedCounts::new(vec![row0.clone(), row1], grid.clone()).unwrap();
    let graph2 = AdjacencyGraph::path(2);
    let data1 = GroupedCounts::new(vec![row0], grid).unwrap();
    let graph1 = AdjacencyGraph::empty(1);

    let collect = |data: &GroupedCounts, graph: &AdjacencyGraph, seed: u64| -> Vec<f64> {
        let mut chain = pwd_chain(data, graph, seed);
        chain.hyper.mu = vec![0.1, -0.2];
        chain.hyper.tau = vec![1.0, 1.5];
        chain.hyper.lambda = vec![0.0, 0.0];
        let mut out = Vec::new();
        for _ in 0..30_000 {
            for i in 0..data.m() {
                chain.update_u_area(i).unwrap();
            }
            out.push(chain.field.u[(0, 0)]);
        }
        out
    };
    let two = collect(&data2, &graph2, 5);
    let one = collect(&data1, &graph1, 5);
    let se = (batch_mean_se(&two).powi(2) + batch_mean_se(&one).powi(2)).sqrt();
    assert!(
        (mean(&two) - mean(&one)).abs() < 4.0 * se,
        "means {} vs {}",
        mean(&two),
        mean(&one)
    );
    let (v2, v1) = (variance(&two), variance(&one));
    assert!((v2 - v1).abs() / v1 < 0.08, "vars {v2} vs {v1}");
}

#[test]
fn mala_acceptance_approaches_one_at_tiny_step() {
    let grid = BoundaryGrid::from_interior(&[1.0]).unwrap();
    let data = GroupedCounts::new(vec![vec![6, 7], vec![9, 4]], grid).unwrap();
    let graph = AdjacencyGraph::path(2);
    let cfg = McmcConfig {
        iterations: 10,
        burn_in: 1,
        seed: 3,
        mala_step: 1e-6,
        adapt: false,
        ..Default::default()
    };
    let mut chain =
        PwdChain::new(&data, &graph, Family::LogNormal, PriorConfig::default(), cfg).unwrap();
    let mut accepted = 0;
    let trials = 400;
    for _ in 0..trials {
        if chain.update_tau_lambda(0, false).unwrap() {
            accepted += 1;
        }
    }
    let rate = accepted as f64 / trials as f64;
    assert!(rate > 0.99, "acceptance {rate}");
}

#[test]
fn phi_acceptance_approaches_one_at_tiny_step() {
    let data = flat_data(2);
    let graph = AdjacencyGraph::path(2);
    let cfg = McmcConfig {
        iterations: 10,
        burn_in: 1,
        seed: 9,
        rw_step: 1e-7,
        adapt: false,
        cstar_samples: 40,
        ..Default::default()
    };
    let mut chain = PwlChain::new(
        &data,
        &graph,
        Family::LogNormal,
        PriorConfig::default(),
        cfg,
    )
    .unwrap();
    let mut accepted = 0;
    let trials = 300;
    for _ in 0..trials {
        if chain.update_phi(false).unwrap() {
            accepted += 1;
        }
    }
    let rate = accepted as f64 / trials as f64;
    assert!(rate > 0.99, "acceptance {rate}");
}

/// Exact log C* for p = 1, m = 2, one edge (up to constants): rotating to
/// sum/difference coordinates splits the double integral into a Gaussian
/// times a 1-D quadrature.
fn log_cstar_oracle(tau: f64, lambda: f64) -> f64 {
    let gauss = (2.0 * std::f64::consts::PI / tau).sqrt();
    let diff = 2.0
        * adaptive_quad(
            |d| (-0.5 * tau * d * d - std::f64::consts::SQRT_2 * lambda * d).exp(),
            0.0,
            60.0 / (1.0 + lambda),
            1e-12,
        );
    -(gauss * diff).ln()
}

#[test]
fn cstar_estimate_matches_quadrature_oracle() {
    // Constants drop out of differences, so compare log C* increments.
    let graph = AdjacencyGraph::path(2);
    let states = [(0.8, 0.5), (1.5, 1.2), (2.5, 3.0)];
    let mc = 200_000;
    let est: Vec<f64> = states
        .iter()
        .map(|&(t, l)| estimate_log_cstar(&graph, &[t], l, mc, 77).unwrap().log_value)
        .collect();
    let oracle: Vec<f64> = states.iter().map(|&(t, l)| log_cstar_oracle(t, l)).collect();
    for i in 1..states.len() {
        let d_est = est[i] - est[0];
        let d_oracle = oracle[i] - oracle[0];
        assert!(
            (d_est - d_oracle).abs() < 0.02,
            "state {i}: {d_est} vs {d_oracle}"
        );
    }
}

#[test]
fn cstar_variance_shrinks_like_one_over_mc() {
    let graph = AdjacencyGraph::path(3);
    let sample_var = |mc: usize| -> f64 {
        let vals: Vec<f64> = (0..160)
            .map(|seed| {
                estimate_log_cstar(&graph, &[1.3, 0.7], 0.9, mc, seed)
                    .unwrap()
                    .log_value
            })
            .collect();
        variance(&vals)
    };
    let v_small = sample_var(50);
    let v_large = sample_var(200);
    let ratio = v_small / v_large;
    assert!((2.0..8.0).contains(&ratio), "variance ratio {ratio}");
}

#[test]
fn cstar_reported_se_tracks_observed_spread() {
    let graph = AdjacencyGraph::path(3);
    let ests: Vec<_> = (0..200)
        .map(|seed| estimate_log_cstar(&graph, &[1.0, 1.4], 1.1, 100, seed).unwrap())
        .collect();
    let observed_sd = variance(&ests.iter().map(|e| e.log_value).collect::<Vec<_>>()).sqrt();
    let reported = mean(&ests.iter().map(|e| e.mc_se).collect::<Vec<_>>());
    assert!(
        (reported / observed_sd - 1.0).abs() < 0.35,
        "reported {reported} vs observed {observed_sd}"
    );
}

#[test]
fn pwd_and_pwl_agree_without_edges() {
    // delta = 0: the edge machinery is inert, so full PWD and PWL runs
    // target the same posterior of u; marginal moments agree within MC error.
    let grid = BoundaryGrid::from_interior(&[1.0, 2.5]).unwrap();
    let data = GroupedCounts::new(vec![vec![9, 14, 6], vec![4, 18, 9]], grid).unwrap();
    let graph = AdjacencyGraph::empty(2);
    let cfg = McmcConfig {
        iterations: 12_000,
        burn_in: 2_000,
        seed: 88,
        cstar_samples: 30,
        ..Default::default()
    };
    let pwd = spatial_income_core::mcmc::run_pwd_chain(
        &data,
        &graph,
        Family::LogNormal,
        PriorConfig::default(),
        cfg.clone(),
        None,
    )
    .unwrap();
    let pwl = spatial_income_core::mcmc::run_pwl_chain(
        &data,
        &graph,
        Family::LogNormal,
        PriorConfig::default(),
        cfg,
        None,
    )
    .unwrap();
    for i in 0..2 {
        for l in 0..2 {
            let a: Vec<f64> = pwd.u.iter().map(|m| m[(i, l)]).collect();
            let b: Vec<f64> = pwl.u.iter().map(|m| m[(i, l)]).collect();
            let se = (batch_mean_se(&a).powi(2) + batch_mean_se(&b).powi(2)).sqrt();
            assert!(
                (mean(&a) - mean(&b)).abs() < 4.0 * se,
                "area {i} coord {l}: means {} vs {}",
                mean(&a),
                mean(&b)
            );
            let (va, vb) = (variance(&a), variance(&b));
            assert!((va - vb).abs() / vb < 0.15, "area {i} coord {l}: vars {va} vs {vb}");
        }
    }
}

#[test]
fn u_update_moments_match_grid_posterior_with_data() {
    // Identified 3-bin likelihood on one area: long-run chain moments agree
    // with a dense 2-D grid posterior (exercises the MH correction away
    // from the flat-likelihood limit).
    let grid = BoundaryGrid::from_interior(&[1.0, 2.5]).unwrap();
    let row = vec![6u64, 10, 4];
    let data = GroupedCounts::new(vec![row.clone()], grid.clone()).unwrap();
    let graph = AdjacencyGraph::empty(1);
    let cfg = McmcConfig {
        iterations: 10,
        burn_in: 1,
        seed: 404,
        ..Default::default()
    };
    let mut chain =
        PwdChain::new(&data, &graph, Family::LogNormal, PriorConfig::default(), cfg).unwrap();
    chain.hyper.mu = vec![0.0, 0.0];
    chain.hyper.tau = vec![1.0, 1.0];
    let n = 120_000;
    let mut d1 = Vec::with_capacity(n);
    let mut d2 = Vec::with_capacity(n);
    for _ in 0..n {
        chain.update_u_area(0).unwrap();
        d1.push(chain.field.u[(0, 0)]);
        d2.push(chain.field.u[(0, 1)]);
    }

    // Grid oracle over [-5,5]^2.
    let steps = 900;
    let mut w_sum = 0.0;
    let (mut m1, mut m2) = (0.0, 0.0);
    let (mut s1, mut s2) = (0.0, 0.0);
    let mut logw = Vec::with_capacity((steps + 1) * (steps + 1));
    let mut pts = Vec::with_capacity((steps + 1) * (steps + 1));
    let mut max_lw = f64::NEG_INFINITY;
    for i in 0..=steps {
        let u1 = -5.0 + 10.0 * i as f64 / steps as f64;
        for j in 0..=steps {
            let u2 = -5.0 + 10.0 * j as f64 / steps as f64;
            let l = spatial_income_core::grouped::log_multinomial(
                Family::LogNormal,
                &[u1, u2],
                &row,
                &grid,
            )
            .unwrap()
            .value;
            let lw = l - 0.5 * (u1 * u1 + u2 * u2);
            max_lw = max_lw.max(lw);
            logw.push(lw);
            pts.push((u1, u2));
        }
    }
    for (lw, &(u1, u2)) in logw.iter().zip(&pts) {
        let w = (lw - max_lw).exp();
        w_sum += w;
        m1 += w * u1;
        m2 += w * u2;
    }
    m1 /= w_sum;
    m2 /= w_sum;
    for (lw, &(u1, u2)) in logw.iter().zip(&pts) {
        let w = (lw - max_lw).exp();
        s1 += w * (u1 - m1) * (u1 - m1);
        s2 += w * (u2 - m2) * (u2 - m2);
    }
    s1 /= w_sum;
    s2 /= w_sum;

    assert!((mean(&d1) - m1).abs() < 0.01, "{} vs {}", mean(&d1), m1);
    assert!((mean(&d2) - m2).abs() < 0.02, "{} vs {}", mean(&d2), m2);
    assert!((variance(&d1) - s1).abs() / s1 < 0.08, "{} vs {}", variance(&d1), s1);
    assert!((variance(&d2) - s2).abs() / s2 < 0.08, "{} vs {}", variance(&d2), s2);
}

#[test]
fn pwl_nonsampled_conditional_limits() {
    let graph = AdjacencyGraph::path(2);
    let mut u = DMatrix::zeros(2, 2);
    u[(1, 0)] = 2.0;
    u[(1, 1)] = -1.0;
    let field = LatentField::new(u, vec![false, true]);
    let mu = [0.3, 0.4];
    let tau = [1.0, 2.0];
    // Huge edge weight pins the draw to the neighbor.
    let (mean_v, var_v) = nonsampled_conditional_pwl(&graph, 0, &field, &mu, &tau, &[1e12]);
    assert!((mean_v[0] - 2.0).abs() < 1e-6);
    assert!((mean_v[1] + 1.0).abs() < 1e-6);
    assert!(var_v[0] < 1e-11);
    // Zero weight reduces to the prior conditional N(mu, 1/tau).
    let (mean_v, var_v) = nonsampled_conditional_pwl(&graph, 0, &field, &mu, &tau, &[0.0]);
    assert!((mean_v[0] - 0.3).abs() < 1e-12);
    assert!((var_v[1] - 0.5).abs() < 1e-12);
}
