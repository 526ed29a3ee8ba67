//! Grouped-likelihood integration tests: mode finding against dense grid
//! searches, large-sample consistency, and the coverage of the AML Wald
//! intervals over replications.

mod common;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use spatial_income_core::family::Family;
use spatial_income_core::grouped::{
    aml_fit, find_mode, find_mode_default, log_multinomial, BoundaryGrid, GroupedCounts,
};
use spatial_income_core::sim::{gen_grouped, gen_sample_sizes};

fn grid_search_ln(row: &[u64], grid: &BoundaryGrid, step: f64) -> ([f64; 2], f64) {
    let mut best = ([0.0, 0.0], f64::NEG_INFINITY);
    let n = (6.0 / step).round() as i64;
    for i in 0..=n {
        let u1 = -3.0 + step * i as f64;
        for j in 0..=n {
            let u2 = -3.0 + step * j as f64;
            let l = log_multinomial(Family::LogNormal, &[u1, u2], row, grid)
                .unwrap()
                .value;
            if l > best.1 {
                best = ([u1, u2], l);
            }
        }
    }
    best
}

#[test]
fn balanced_two_bin_mode_is_a_ridge_at_zero() {
    // Counts (k, k) on (0,1,inf): every u with F(1) = 1/2 maximizes the
    // likelihood, i.e. u_1 = 0 for any u_2. The finder lands on the ridge.
    let grid = BoundaryGrid::from_interior(&[1.0]).unwrap();
    let row = [40u64, 40];
    let mode = find_mode(Family::LogNormal, &row, &grid, &[0.4, -0.2]).unwrap();
    assert!(mode.converged);
    assert!(mode.u_tilde[0].abs() < 1e-4, "mode {:?}", mode.u_tilde);
    let (_, best_l) = grid_search_ln(&row, &grid, 0.05);
    let l_mode = log_multinomial(Family::LogNormal, &mode.u_tilde, &row, &grid)
        .unwrap()
        .value;
    assert!(l_mode >= best_l - 1e-9);
}

#[test]
fn mode_matches_dense_grid_search() {
    let grid = BoundaryGrid::from_interior(&[1.0, 2.0, 4.0]).unwrap();
    let mut rng = ChaCha12Rng::seed_from_u64(21);
    for case in 0..6 {
        let truth = DMatrix::from_row_slice(1, 2, &[0.2 + 0.1 * case as f64, -0.3]);
        let counts = gen_grouped(&truth, &[400], &grid, &mut rng).unwrap();
        let row = counts.row(0);
        let mode = find_mode_default(Family::LogNormal, row, &grid).unwrap();
        assert!(mode.converged, "case {case} grad {}", mode.grad_norm);
        assert!(mode.grad_norm <= 1e-6);
        let (arg, best_l) = grid_search_ln(row, &grid, 0.05);
        let l_mode = log_multinomial(Family::LogNormal, &mode.u_tilde, row, &grid)
            .unwrap()
            .value;
        assert!(
            l_mode >= best_l - 1e-9,
            "case {case}: grid beat the mode finder"
        );
        for (l, &g) in arg.iter().enumerate() {
            assert!(
                (mode.u_tilde[l] - g).abs() <= 0.05,
                "case {case} coord {l}: {} vs grid {g}",
                mode.u_tilde[l]
            );
        }
    }
}

#[test]
fn singh_maddala_mode_is_consistent() {
    // Large-sample check: counts generated from a known SM parameter, the
    // fitted mode lands within 0.05 of the truth in every coordinate.
    let true_eta = [2.0, 4.0, 1.5];
    let true_u = Family::SinghMaddala.inverse_transform(&true_eta).unwrap();
    let grid = BoundaryGrid::from_interior(&[1.0, 2.0, 3.0, 5.0, 8.0, 12.0]).unwrap();
    let probs =
        spatial_income_core::grouped::bin_probs(Family::SinghMaddala, &true_eta, &grid).unwrap();
    // Expected counts at n = 1e5 (deterministic rounding; the multinomial
    // noise at this n is far below the 0.05 tolerance).
    let n = 100_000f64;
    let row: Vec<u64> = probs.iter().map(|&p| (p * n).round() as u64).collect();
    let mode = find_mode_default(Family::SinghMaddala, &row, &grid).unwrap();
    assert!(mode.converged, "grad {}", mode.grad_norm);
    for (l, &t) in true_u.iter().enumerate() {
        assert!(
            (mode.u_tilde[l] - t).abs() < 0.05,
            "coord {l}: {} vs {t}",
            mode.u_tilde[l]
        );
    }
}

#[test]
fn aml_wald_intervals_cover_at_large_n() {
    // R = 50 replications of m = 20 areas with large samples: pooled
    // coverage of the 95% Wald intervals per coordinate stays near nominal.
    let grid = BoundaryGrid::from_interior(&[1.0, 2.0, 3.0, 5.0, 8.0]).unwrap();
    let m = 20;
    let truth = DMatrix::from_fn(m, 2, |i, l| {
        if l == 0 {
            0.3 + 0.4 * (i as f64 / m as f64)
        } else {
            -0.2 + 0.3 * (i as f64 / m as f64)
        }
    });
    let mut rng = ChaCha12Rng::seed_from_u64(99);
    let mut covered = [0usize; 2];
    let mut total = [0usize; 2];
    for _rep in 0..50 {
        let n = gen_sample_sizes(m, (8_000, 12_000), &mut rng);
        let counts = gen_grouped(&truth, &n, &grid, &mut rng).unwrap();
        let fit = aml_fit(Family::LogNormal, &counts).unwrap();
        for (i, est) in fit.estimates.iter().enumerate() {
            let est = est.as_ref().expect("large-n fits converge");
            for l in 0..2 {
                let (lo, hi) = est.intervals[l];
                total[l] += 1;
                if lo <= truth[(i, l)] && truth[(i, l)] <= hi {
                    covered[l] += 1;
                }
            }
        }
    }
    for l in 0..2 {
        let cp = covered[l] as f64 / total[l] as f64;
        // Binomial noise over 1000 intervals is about 0.7%.
        assert!(
            (0.92..=0.98).contains(&cp),
            "coordinate {l}: coverage {cp}"
        );
    }
}

#[test]
fn merging_bins_is_a_data_processing_step() {
    // Summing adjacent bins never decreases the maximized log-likelihood.
    let fine = BoundaryGrid::from_interior(&[0.8, 1.5, 2.5, 4.0]).unwrap();
    let coarse = BoundaryGrid::from_interior(&[1.5, 4.0]).unwrap();
    let row_fine = [12u64, 9, 17, 6, 4];
    let row_coarse = [21u64, 23, 4];
    for family in [Family::LogNormal, Family::SinghMaddala] {
        let mf = find_mode_default(family, &row_fine, &fine).unwrap();
        let mc = find_mode_default(family, &row_coarse, &coarse).unwrap();
        let lf = log_multinomial(family, &mf.u_tilde, &row_fine, &fine)
            .unwrap()
            .value;
        let lc = log_multinomial(family, &mc.u_tilde, &row_coarse, &coarse)
            .unwrap()
            .value;
        assert!(lc >= lf - 1e-7, "{family:?}: merged {lc} vs fine {lf}");
    }
}

#[test]
fn loglik_sum_is_permutation_invariant() {
    // The log-likelihood is a sum over (bin, count) pairs; accumulating the
    // terms in any order gives the same value.
    let grid = BoundaryGrid::from_interior(&[1.0, 2.0, 4.0]).unwrap();
    let row = [5u64, 11, 2, 7];
    let eta = [0.3, 1.1];
    let probs = spatial_income_core::grouped::bin_probs(Family::LogNormal, &eta, &grid).unwrap();
    let u = Family::LogNormal.inverse_transform(&eta).unwrap();
    let value = log_multinomial(Family::LogNormal, &u, &row, &grid)
        .unwrap()
        .value;
    let mut pairs: Vec<(f64, u64)> = probs.iter().cloned().zip(row.iter().cloned()).collect();
    pairs.reverse();
    let reordered: f64 = pairs.iter().map(|&(p, c)| c as f64 * p.ln()).sum();
    assert!((value - reordered).abs() < 1e-9 * value.abs());
}

#[test]
fn counts_type_rejects_ragged_input() {
    let grid = BoundaryGrid::from_interior(&[1.0]).unwrap();
    assert!(GroupedCounts::new(vec![vec![1, 2], vec![3]], grid).is_err());
}
