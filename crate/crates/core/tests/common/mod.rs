//! Shared oracles for the integration and acceptance suites. Everything here
//! is independent of the library's computation paths: quadrature instead of
//! closed forms, dense matrix algebra instead of the samplers' formulas,
//! and brute-force grids instead of MCMC.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};

// Gauss 7 / Kronrod 15 nodes and weights on [-1, 1] (positive half).
const XGK: [f64; 8] = [
    0.9914553711208126,
    0.9491079123427585,
    0.8648644233597691,
    0.7415311855993945,
    0.5860872354676911,
    0.4058451513773972,
    0.20778495500789848,
    0.0,
];
const WGK: [f64; 8] = [
    0.022935322010529224,
    0.06309209262997856,
    0.10479001032225019,
    0.14065325971552592,
    0.1690047266392679,
    0.19035057806478542,
    0.20443294007529889,
    0.20948214108472782,
];
const WG: [f64; 4] = [
    0.1294849661688697,
    0.27970539148927664,
    0.3818300505051189,
    0.4179591836734694,
];

fn gk15(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let fc = f(mid);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for j in 0..7 {
        let dx = half * XGK[j];
        let fsum = f(mid - dx) + f(mid + dx);
        kronrod += WGK[j] * fsum;
        if j % 2 == 1 {
            gauss += WG[j / 2] * fsum;
        }
    }
    kronrod *= half;
    gauss *= half;
    (kronrod, (kronrod - gauss).abs())
}

fn adaptive_rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: usize) -> f64 {
    let (v, e) = gk15(f, a, b);
    if e <= tol || depth >= 48 {
        return v;
    }
    let mid = 0.5 * (a + b);
    adaptive_rec(f, a, mid, 0.5 * tol, depth + 1) + adaptive_rec(f, mid, b, 0.5 * tol, depth + 1)
}

/// Adaptive Gauss-Kronrod on a finite interval. Interval endpoints are never
/// evaluated, so integrable endpoint singularities are fine.
pub fn adaptive_quad(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    adaptive_rec(&f, a, b, tol, 0)
}

/// Integral of f over (0, upper] with the income substitution x = t/(1-t),
/// turning the infinite tail into a bounded domain.
pub fn integrate_income(f: impl Fn(f64) -> f64, upper: f64, tol: f64) -> f64 {
    let t_hi = if upper.is_finite() {
        upper / (1.0 + upper)
    } else {
        1.0
    };
    adaptive_quad(
        |t| {
            let om = 1.0 - t;
            f(t / om) / (om * om)
        },
        0.0,
        t_hi,
        tol,
    )
}

/// Kolmogorov-Smirnov distance between draws and an exact CDF.
pub fn ks_distance(draws: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs = draws.to_vec();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let c = cdf(x);
        d = d.max((c - i as f64 / n).abs());
        d = d.max(((i + 1) as f64 / n - c).abs());
    }
    d
}

/// Normalized distribution on a grid, built from log-density values by the
/// trapezoid rule; used as a brute-force posterior oracle.
pub struct GridDist {
    pub xs: Vec<f64>,
    pub cdf: Vec<f64>,
}

impl GridDist {
    pub fn from_logpdf(lo: f64, hi: f64, n: usize, logf: impl Fn(f64) -> f64) -> Self {
        let xs: Vec<f64> = (0..=n)
            .map(|i| lo + (hi - lo) * i as f64 / n as f64)
            .collect();
        let logs: Vec<f64> = xs.iter().map(|&x| logf(x)).collect();
        let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let pdf: Vec<f64> = logs.iter().map(|&l| (l - max).exp()).collect();
        Self::from_pdf_values(xs, pdf)
    }

    pub fn from_pdf_values(xs: Vec<f64>, pdf: Vec<f64>) -> Self {
        let n = xs.len() - 1;
        let mut cdf = vec![0.0; n + 1];
        for i in 0..n {
            cdf[i + 1] = cdf[i] + 0.5 * (pdf[i] + pdf[i + 1]) * (xs[i + 1] - xs[i]);
        }
        let total = cdf[n];
        for c in cdf.iter_mut() {
            *c /= total;
        }
        GridDist { xs, cdf }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= self.xs[0] {
            return 0.0;
        }
        if x >= *self.xs.last().unwrap() {
            return 1.0;
        }
        let mut lo = 0;
        let mut hi = self.xs.len() - 1;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.xs[mid] <= x {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let w = (x - self.xs[lo]) / (self.xs[hi] - self.xs[lo]);
        self.cdf[lo] + w * (self.cdf[hi] - self.cdf[lo])
    }
}

/// Marginals of a 2-D grid distribution given the joint log-density.
pub fn grid_marginals_2d(
    (lox, hix): (f64, f64),
    (loy, hiy): (f64, f64),
    n: usize,
    logf: impl Fn(f64, f64) -> f64,
) -> (GridDist, GridDist) {
    let xs: Vec<f64> = (0..=n)
        .map(|i| lox + (hix - lox) * i as f64 / n as f64)
        .collect();
    let ys: Vec<f64> = (0..=n)
        .map(|i| loy + (hiy - loy) * i as f64 / n as f64)
        .collect();
    let mut vals = vec![vec![0.0; n + 1]; n + 1];
    let mut max = f64::NEG_INFINITY;
    for (i, &x) in xs.iter().enumerate() {
        for (j, &y) in ys.iter().enumerate() {
            let v = logf(x, y);
            vals[i][j] = v;
            if v > max {
                max = v;
            }
        }
    }
    let trap = |k: usize| if k == 0 || k == n { 0.5 } else { 1.0 };
    let mut px = vec![0.0; n + 1];
    let mut py = vec![0.0; n + 1];
    for i in 0..=n {
        for j in 0..=n {
            let w = (vals[i][j] - max).exp();
            px[i] += trap(j) * w;
            py[j] += trap(i) * w;
        }
    }
    (
        GridDist::from_pdf_values(xs, px),
        GridDist::from_pdf_values(ys, py),
    )
}

/// Monte-Carlo standard error via batch means (window sqrt(n)); honest for
/// autocorrelated chains.
pub fn batch_mean_se(xs: &[f64]) -> f64 {
    let n = xs.len();
    let b = (n as f64).sqrt().floor() as usize;
    let nb = n / b;
    let means: Vec<f64> = (0..nb)
        .map(|k| xs[k * b..(k + 1) * b].iter().sum::<f64>() / b as f64)
        .collect();
    let grand = means.iter().sum::<f64>() / nb as f64;
    let var = means.iter().map(|&m| (m - grand) * (m - grand)).sum::<f64>() / (nb - 1) as f64;
    (var / nb as f64).sqrt()
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|&x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Conditional mean/variance of coordinate `target` of a Gaussian with the
/// given mean vector and dense precision, conditioning on all remaining
/// coordinates; derived through the covariance (independent of the samplers'
/// conditional formulas).
pub fn gaussian_conditional_from_precision(
    mean_vec: &DVector<f64>,
    precision: &DMatrix<f64>,
    target: usize,
    values: &DVector<f64>,
) -> (f64, f64) {
    let m = mean_vec.len();
    let cov = precision
        .clone()
        .cholesky()
        .expect("oracle precision must be PD")
        .inverse();
    let others: Vec<usize> = (0..m).filter(|&i| i != target).collect();
    let s11 = cov[(target, target)];
    let s12 = DMatrix::from_fn(1, others.len(), |_, j| cov[(target, others[j])]);
    let s22 = DMatrix::from_fn(others.len(), others.len(), |i, j| cov[(others[i], others[j])]);
    let dev = DVector::from_fn(others.len(), |i, _| values[others[i]] - mean_vec[others[i]]);
    let s22_inv = s22.cholesky().expect("oracle block must be PD").inverse();
    let w = &s12 * &s22_inv;
    let cond_mean = mean_vec[target] + (&w * dev)[(0, 0)];
    let cond_var = s11 - (&w * s12.transpose())[(0, 0)];
    (cond_mean, cond_var)
}
