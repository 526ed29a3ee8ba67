//! Grouped-data multinomial likelihood: per-area log-likelihood in the
//! transformed parameters, numeric gradient/Hessian, mode finding for the
//! independent-MH proposal, and the area-wise maximum likelihood baseline.

use crate::family::{DistError, Family};
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Default floor applied to bin probabilities before taking logs.
pub const PROB_FLOOR: f64 = 1e-300;

const GRAD_STEP: f64 = 6e-6;
const HESS_STEP: f64 = 1.2e-4;
const MODE_GRAD_TOL: f64 = 1e-6;
const MODE_MAX_ITERS: usize = 80;

#[derive(Debug, Error)]
pub enum GroupedError {
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error("boundaries must be strictly increasing and positive (offending index {0})")]
    BadBoundary(usize),
    #[error("row {row} has {got} bins, expected {expected}")]
    RaggedRow { row: usize, expected: usize, got: usize },
    #[error("non-finite derivative in component {0} (boundary pathology)")]
    NonFiniteDerivative(usize),
    #[error("area row has zero total count")]
    EmptyRow,
}

/// Income bin boundaries z_0 < z_1 < ... < z_N with z_0 = 0 and z_N = +inf.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryGrid {
    z: Vec<f64>,
}

impl BoundaryGrid {
    /// Build from the interior boundaries z_1..z_{N-1}; z_0 = 0 and
    /// z_N = +inf are implicit.
    pub fn from_interior(interior: &[f64]) -> Result<Self, GroupedError> {
        let mut z = Vec::with_capacity(interior.len() + 2);
        z.push(0.0);
        for (i, &b) in interior.iter().enumerate() {
            if !b.is_finite() || b <= *z.last().unwrap() {
                return Err(GroupedError::BadBoundary(i));
            }
            z.push(b);
        }
        z.push(f64::INFINITY);
        Ok(BoundaryGrid { z })
    }

    /// Number of bins N.
    pub fn bin_count(&self) -> usize {
        self.z.len() - 1
    }

    /// All boundaries including the implicit endpoints, length N + 1.
    pub fn boundaries(&self) -> &[f64] {
        &self.z
    }

    pub fn interior(&self) -> &[f64] {
        &self.z[1..self.z.len() - 1]
    }

    /// Index of the half-open bin (z_{k-1}, z_k] containing x > 0.
    pub fn bin_index(&self, x: f64) -> usize {
        debug_assert!(x > 0.0);
        match self.interior().iter().position(|&b| x <= b) {
            Some(k) => k,
            None => self.bin_count() - 1,
        }
    }
}

/// Observed grouped counts: one row of bin counts per area. Rows that are
/// entirely zero mark non-sampled areas and contribute no likelihood terms.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedCounts {
    counts: Vec<Vec<u64>>,
    sampled: Vec<bool>,
    grid: BoundaryGrid,
}

impl GroupedCounts {
    pub fn new(counts: Vec<Vec<u64>>, grid: BoundaryGrid) -> Result<Self, GroupedError> {
        let n = grid.bin_count();
        for (i, row) in counts.iter().enumerate() {
            if row.len() != n {
                return Err(GroupedError::RaggedRow {
                    row: i,
                    expected: n,
                    got: row.len(),
                });
            }
        }
        let sampled = counts.iter().map(|r| r.iter().any(|&c| c > 0)).collect();
        Ok(GroupedCounts {
            counts,
            sampled,
            grid,
        })
    }

    pub fn m(&self) -> usize {
        self.counts.len()
    }

    pub fn n_bins(&self) -> usize {
        self.grid.bin_count()
    }

    pub fn grid(&self) -> &BoundaryGrid {
        &self.grid
    }

    pub fn row(&self, i: usize) -> &[u64] {
        &self.counts[i]
    }

    pub fn is_sampled(&self, i: usize) -> bool {
        self.sampled[i]
    }

    pub fn sampled_flags(&self) -> &[bool] {
        &self.sampled
    }

    pub fn sampled_count(&self) -> usize {
        self.sampled.iter().filter(|&&s| s).count()
    }

    pub fn total(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    /// Data-quality warnings (not errors), e.g. too few bins to identify a
    /// multi-parameter family.
    pub fn warnings(&self, family: Family) -> Vec<String> {
        let mut w = Vec::new();
        if self.n_bins() < 2 && family.param_count() >= 2 {
            w.push(format!(
                "only {} bin(s): the {}-parameter {} family is not identifiable",
                self.n_bins(),
                family.param_count(),
                family.name()
            ));
        }
        w
    }
}

/// One evaluation of the grouped log-likelihood.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogLik {
    pub value: f64,
    /// Number of bins whose probability was clamped at the floor.
    pub clamped_bins: usize,
}

/// Bin probabilities F(z_k) - F(z_{k-1}) for all N bins. Differences are
/// taken on the survival side once past the median to avoid cancellation.
pub fn bin_probs(family: Family, eta: &[f64], grid: &BoundaryGrid) -> Result<Vec<f64>, DistError> {
    let z = grid.boundaries();
    let n = grid.bin_count();
    let mut cdf = Vec::with_capacity(n + 1);
    let mut sf = Vec::with_capacity(n + 1);
    for &b in z {
        cdf.push(family.cdf(eta, b)?);
        sf.push(family.survival(eta, b)?);
    }
    let mut probs = Vec::with_capacity(n);
    for k in 0..n {
        let p = if cdf[k] < 0.5 {
            cdf[k + 1] - cdf[k]
        } else {
            sf[k] - sf[k + 1]
        };
        probs.push(p.max(0.0));
    }
    Ok(probs)
}

/// Grouped multinomial log-likelihood L_i(u) = sum_k c_k log p_k(u) with the
/// multinomial coefficient dropped. Bin probabilities below `floor` are
/// clamped and the clamp is reported.
pub fn log_multinomial_with_floor(
    family: Family,
    u: &[f64],
    row: &[u64],
    grid: &BoundaryGrid,
    floor: f64,
) -> Result<LogLik, DistError> {
    let eta = family.transform(u)?;
    let probs = bin_probs(family, &eta, grid)?;
    let mut value = 0.0;
    let mut clamped = 0;
    for (k, &c) in row.iter().enumerate() {
        if c == 0 {
            continue;
        }
        let mut p = probs[k];
        if p < floor {
            p = floor;
            clamped += 1;
        }
        value += c as f64 * p.ln();
    }
    Ok(LogLik {
        value,
        clamped_bins: clamped,
    })
}

pub fn log_multinomial(
    family: Family,
    u: &[f64],
    row: &[u64],
    grid: &BoundaryGrid,
) -> Result<LogLik, DistError> {
    log_multinomial_with_floor(family, u, row, grid, PROB_FLOOR)
}

/// Numeric gradient and Hessian of the log-likelihood in u via central
/// differences. The numeric path is the correctness reference.
pub fn grad_hess(
    family: Family,
    u: &[f64],
    row: &[u64],
    grid: &BoundaryGrid,
) -> Result<(DVector<f64>, DMatrix<f64>), GroupedError> {
    let p = u.len();
    let eval = |v: &[f64]| -> Result<f64, DistError> {
        Ok(log_multinomial(family, v, row, grid)?.value)
    };
    let center = eval(u)?;
    let mut grad = DVector::zeros(p);
    let mut hess = DMatrix::zeros(p, p);
    let mut work = u.to_vec();

    for j in 0..p {
        let h = GRAD_STEP * (1.0 + u[j].abs());
        work[j] = u[j] + h;
        let fp = eval(&work)?;
        work[j] = u[j] - h;
        let fm = eval(&work)?;
        work[j] = u[j];
        grad[j] = (fp - fm) / (2.0 * h);
    }
    for j in 0..p {
        let hj = HESS_STEP * (1.0 + u[j].abs());
        work[j] = u[j] + hj;
        let fp = eval(&work)?;
        work[j] = u[j] - hj;
        let fm = eval(&work)?;
        work[j] = u[j];
        hess[(j, j)] = (fp - 2.0 * center + fm) / (hj * hj);
        for l in (j + 1)..p {
            let hl = HESS_STEP * (1.0 + u[l].abs());
            work[j] = u[j] + hj;
            work[l] = u[l] + hl;
            let fpp = eval(&work)?;
            work[l] = u[l] - hl;
            let fpm = eval(&work)?;
            work[j] = u[j] - hj;
            let fmm = eval(&work)?;
            work[l] = u[l] + hl;
            let fmp = eval(&work)?;
            work[j] = u[j];
            work[l] = u[l];
            let v = (fpp - fpm - fmp + fmm) / (4.0 * hj * hl);
            hess[(j, l)] = v;
            hess[(l, j)] = v;
        }
    }
    for j in 0..p {
        if !grad[j].is_finite() {
            return Err(GroupedError::NonFiniteDerivative(j));
        }
        for l in 0..p {
            if !hess[(j, l)].is_finite() {
                return Err(GroupedError::NonFiniteDerivative(j));
            }
        }
    }
    Ok((grad, hess))
}

/// Mode and ridged negative Hessian of L_i, used as the Gaussian proposal
/// core for the independent-MH update of one area.
#[derive(Debug, Clone)]
pub struct ModeApprox {
    pub u_tilde: Vec<f64>,
    /// P = -Hessian of L_i at the mode, symmetrised and ridged to be PSD.
    pub precision: DMatrix<f64>,
    pub converged: bool,
    /// Gradient norm of the count-averaged log-likelihood at `u_tilde`;
    /// at most 1e-6 when `converged`.
    pub grad_norm: f64,
    pub iterations: usize,
    pub ridged: bool,
}

/// Starting point matching the model median to the empirical grouped median,
/// with shape components at zero; falls back to the zero vector.
pub fn median_matching_init(family: Family, row: &[u64], grid: &BoundaryGrid) -> Vec<f64> {
    let p = family.param_count();
    let zero = vec![0.0; p];
    let total: u64 = row.iter().sum();
    if total == 0 {
        return zero;
    }
    let half = total as f64 / 2.0;
    let z = grid.boundaries();
    let mut cum = 0.0;
    let mut median = f64::NAN;
    for (k, &c) in row.iter().enumerate() {
        let next = cum + c as f64;
        if next >= half {
            let lo = z[k];
            let hi = z[k + 1];
            median = if hi.is_finite() {
                let frac = if c > 0 { (half - cum) / c as f64 } else { 0.5 };
                lo + frac * (hi - lo)
            } else {
                // median inside the open top bin
                1.5 * lo.max(1.0)
            };
            break;
        }
        cum = next;
    }
    if !median.is_finite() || median <= 0.0 {
        return zero;
    }
    let lnm = median.ln();
    match family {
        Family::LogNormal => vec![lnm, 0.0],
        Family::SinghMaddala | Family::Dagum => vec![0.0, lnm, 0.0],
    }
}

fn ridge_to_psd(mut p_mat: DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let dim = p_mat.nrows();
    let sym = (p_mat.clone() + p_mat.transpose()) * 0.5;
    p_mat = sym;
    let min_eig = p_mat
        .clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    if min_eig >= 0.0 {
        return (p_mat, false);
    }
    let trace = p_mat.trace();
    let mut eps = 1e-6 * trace / dim as f64;
    if eps <= 0.0 || eps.is_nan() {
        eps = 1e-10;
    }
    let steps = ((-min_eig) / eps).ceil() + 1.0;
    let shift = steps * eps;
    for j in 0..dim {
        p_mat[(j, j)] += shift;
    }
    (p_mat, true)
}

/// Damped Newton ascent on L_i with backtracking. Deterministic given
/// inputs. Internally the count-averaged log-likelihood L_i / n_i is
/// optimized (same mode, scale-free tolerances); `grad_norm` and the
/// convergence test refer to the averaged gradient, while `precision` is the
/// negative Hessian of the unaveraged L_i.
pub fn find_mode(
    family: Family,
    row: &[u64],
    grid: &BoundaryGrid,
    init: &[f64],
) -> Result<ModeApprox, GroupedError> {
    let total: u64 = row.iter().sum();
    if total == 0 {
        return Err(GroupedError::EmptyRow);
    }
    let scale = total as f64;
    let p = family.param_count();
    let eval = |v: &[f64]| -> f64 {
        log_multinomial(family, v, row, grid)
            .map(|l| l.value / scale)
            .unwrap_or(f64::NEG_INFINITY)
    };
    let mut u = init.to_vec();
    let mut fu = eval(&u);
    if !fu.is_finite() {
        u = vec![0.0; p];
        fu = eval(&u);
    }
    let mut converged = false;
    let mut grad_norm = f64::INFINITY;
    let mut last_hess = DMatrix::zeros(p, p);
    let mut iters = 0;

    for it in 0..MODE_MAX_ITERS {
        iters = it;
        let (grad, hess) = grad_hess(family, &u, row, grid)?;
        let grad = grad / scale;
        let hess = hess / scale;
        grad_norm = grad.norm();
        last_hess = hess;
        if grad_norm <= MODE_GRAD_TOL {
            converged = true;
            break;
        }
        // Newton ascent direction from the (ridged) negative Hessian.
        let (neg_h, _) = ridge_to_psd(-&last_hess);
        let mut reg = neg_h.clone();
        let dir = loop {
            match reg.clone().cholesky() {
                Some(ch) => break ch.solve(&grad),
                None => {
                    let bump = 1e-8 * (1.0 + reg.trace().abs() / p as f64);
                    for j in 0..p {
                        reg[(j, j)] += bump.max(1e-12) * 10.0;
                    }
                }
            }
        };
        let slope = grad.dot(&dir);
        let dir = if slope > 0.0 { dir } else { grad.clone() };
        let slope = grad.dot(&dir);
        let noise = 4.0 * f64::EPSILON * (1.0 + fu.abs());
        let mut t = 1.0;
        let mut stepped = false;
        while t >= 1e-10 {
            let cand: Vec<f64> = u.iter().zip(dir.iter()).map(|(a, d)| a + t * d).collect();
            let fc = eval(&cand);
            if fc.is_finite() && fc >= fu + 1e-4 * t * slope - noise {
                u = cand;
                fu = fc;
                stepped = true;
                break;
            }
            t *= 0.5;
        }
        if !stepped {
            // Stuck at float resolution; take the convergence verdict from
            // the last gradient.
            break;
        }
        if u.iter().any(|v| v.abs() > 40.0) {
            // The MLE is running away (degenerate data); give up.
            break;
        }
    }

    let (precision_avg, ridged) = ridge_to_psd(-&last_hess);
    Ok(ModeApprox {
        u_tilde: u,
        precision: precision_avg * scale,
        converged,
        grad_norm,
        iterations: iters,
        ridged,
    })
}

/// Mode finding from the default (median-matching) start.
pub fn find_mode_default(
    family: Family,
    row: &[u64],
    grid: &BoundaryGrid,
) -> Result<ModeApprox, GroupedError> {
    let init = median_matching_init(family, row, grid);
    find_mode(family, row, grid, &init)
}

/// Area-wise maximum likelihood estimate with Wald intervals from the
/// observed information.
#[derive(Debug, Clone)]
pub struct AreaEstimate {
    pub u_hat: Vec<f64>,
    pub covariance: DMatrix<f64>,
    /// Per-coordinate 95% confidence interval u_hat +- 1.96 sqrt(cov_ll).
    pub intervals: Vec<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct AmlFit {
    /// One entry per area: None for non-sampled or non-converged areas.
    pub estimates: Vec<Option<AreaEstimate>>,
    /// Sampled areas whose fit did not converge (excluded from metrics).
    pub unconverged: usize,
}

/// Separate maximum likelihood per sampled area (the non-spatial baseline).
pub fn aml_fit(family: Family, data: &GroupedCounts) -> Result<AmlFit, GroupedError> {
    let mut estimates = Vec::with_capacity(data.m());
    let mut unconverged = 0;
    for i in 0..data.m() {
        if !data.is_sampled(i) {
            estimates.push(None);
            continue;
        }
        let row = data.row(i);
        let nonzero_bins = row.iter().filter(|&&c| c > 0).count();
        if nonzero_bins < 2 {
            // All mass in a single bin: the MLE diverges.
            unconverged += 1;
            estimates.push(None);
            continue;
        }
        let mode = find_mode_default(family, row, data.grid())?;
        if !mode.converged {
            unconverged += 1;
            estimates.push(None);
            continue;
        }
        match mode.precision.clone().cholesky() {
            Some(ch) => {
                let cov = ch.inverse();
                let intervals = mode
                    .u_tilde
                    .iter()
                    .enumerate()
                    .map(|(l, &v)| {
                        let half = 1.96 * cov[(l, l)].sqrt();
                        (v - half, v + half)
                    })
                    .collect();
                estimates.push(Some(AreaEstimate {
                    u_hat: mode.u_tilde,
                    covariance: cov,
                    intervals,
                }));
            }
            None => {
                unconverged += 1;
                estimates.push(None);
            }
        }
    }
    Ok(AmlFit {
        estimates,
        unconverged,
    })
}
