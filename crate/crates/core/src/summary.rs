//! Posterior summarization: area-wise mean income and Gini with credible
//! intervals, posterior predictive loss for model comparison, and the
//! MSE/CP/AL simulation metrics.

use crate::family::DistError;
use crate::grouped::{bin_probs, GroupedCounts};
use crate::mcmc::PosteriorDraws;
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Binomial, Distribution};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SummaryError {
    #[error("need at least 2 retained draws, got {0}")]
    TooFewDraws(usize),
    #[error("all {excluded} draws excluded for area {area}: the moment condition failed in every draw")]
    AllDrawsExcluded { area: usize, excluded: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Dist(#[from] DistError),
}

/// Posterior mean with the 2.5% and 97.5% empirical quantiles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SummaryStat {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone)]
pub struct AreaSummary {
    pub area: usize,
    pub sampled: bool,
    pub mean_income: SummaryStat,
    pub gini: SummaryStat,
    /// Per coordinate of u: posterior mean and 95% credible interval.
    pub u: Vec<SummaryStat>,
    /// Draws dropped from the income summaries (moment condition failed).
    pub excluded_draws: usize,
}

/// Type-7 quantile (linear interpolation) of an ascending-sorted slice.
pub fn quantile_type7(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    assert!(n > 0 && (0.0..=1.0).contains(&p));
    if n == 1 {
        return sorted[0];
    }
    let h = (n as f64 - 1.0) * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let gamma = h - lo as f64;
    sorted[lo] + gamma * (sorted[hi] - sorted[lo])
}

fn stat_from(values: &mut [f64]) -> SummaryStat {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    SummaryStat {
        mean,
        lower: quantile_type7(values, 0.025),
        upper: quantile_type7(values, 0.975),
    }
}

/// Per-area posterior summaries of mean income, Gini and the latent
/// coordinates. Draws whose mean income does not exist are excluded from the
/// income summaries with a per-area count.
pub fn summarize(draws: &PosteriorDraws) -> Result<Vec<AreaSummary>, SummaryError> {
    if draws.n_draws() < 2 {
        return Err(SummaryError::TooFewDraws(draws.n_draws()));
    }
    let family = draws.family;
    let t_total = draws.n_draws();
    let mut out = Vec::with_capacity(draws.m);
    for i in 0..draws.m {
        let mut incomes = Vec::with_capacity(t_total);
        let mut ginis = Vec::with_capacity(t_total);
        let mut u_vals = vec![Vec::with_capacity(t_total); draws.p];
        let mut excluded = 0;
        for t in 0..t_total {
            let u: Vec<f64> = draws.u[t].row(i).iter().cloned().collect();
            for (l, v) in u.iter().enumerate() {
                u_vals[l].push(*v);
            }
            let usable = family.transform(&u).ok().and_then(|eta| {
                let m = family.mean_income(&eta).ok()?;
                let g = family.gini(&eta).ok()?;
                (m.is_finite() && g.is_finite()).then_some((m, g))
            });
            match usable {
                Some((m, g)) => {
                    incomes.push(m);
                    ginis.push(g);
                }
                None => excluded += 1,
            }
        }
        if incomes.is_empty() {
            return Err(SummaryError::AllDrawsExcluded { area: i, excluded });
        }
        out.push(AreaSummary {
            area: i,
            sampled: draws.sampled[i],
            mean_income: stat_from(&mut incomes),
            gini: stat_from(&mut ginis),
            u: u_vals.iter_mut().map(|v| stat_from(v)).collect(),
            excluded_draws: excluded,
        });
    }
    Ok(out)
}

/// How the predictive mean and variance of each bin count are formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PplMode {
    /// Draw a multinomial replicate per retained draw (includes sampling
    /// noise, the default reading of "posterior predictive").
    Replicates,
    /// Analytic predictive moments from the bin probabilities.
    PlugIn,
}

#[derive(Debug, Clone)]
pub struct PplResult {
    pub total: f64,
    pub variance_term: f64,
    pub gof_term: f64,
    /// Areas entering the sums, in order.
    pub areas: Vec<usize>,
    /// Predictive means/variances per included area, bins in grid order.
    pub e: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    /// Zero-total areas skipped (reported, not summed).
    pub skipped: Vec<usize>,
    /// True when only one retained draw was available (V = 0 by convention).
    pub single_draw: bool,
}

fn sample_multinomial(rng: &mut ChaCha12Rng, n: u64, probs: &[f64]) -> Vec<u64> {
    let nbins = probs.len();
    let mut out = vec![0u64; nbins];
    let mut remaining = n;
    let mut rest: f64 = probs.iter().sum();
    for k in 0..nbins {
        if remaining == 0 {
            break;
        }
        if k == nbins - 1 {
            out[k] = remaining;
            break;
        }
        let p = if rest > 0.0 {
            (probs[k] / rest).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let draw = Binomial::new(remaining, p).unwrap().sample(rng);
        out[k] = draw;
        remaining -= draw;
        rest = (rest - probs[k]).max(0.0);
    }
    out
}

/// Posterior predictive loss over the sampled areas:
/// (1/M) sum_ik V_ik + 1/(M+1) sum_ik (c_ik - E_ik)^2 where the predictive
/// replicate of area i keeps the observed total n_i.
pub fn ppl(
    draws: &PosteriorDraws,
    data: &GroupedCounts,
    mode: PplMode,
    seed: u64,
) -> Result<PplResult, SummaryError> {
    if draws.m != data.m() {
        return Err(SummaryError::ShapeMismatch(format!(
            "draws cover {} areas, data has {}",
            draws.m,
            data.m()
        )));
    }
    let t_total = draws.n_draws();
    if t_total == 0 {
        return Err(SummaryError::TooFewDraws(0));
    }
    let family = draws.family;
    let grid = data.grid();
    let nbins = data.n_bins();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);

    let mut areas = Vec::new();
    let mut skipped = Vec::new();
    let mut e_all = Vec::new();
    let mut v_all = Vec::new();
    for i in 0..data.m() {
        let n_i = data.total(i);
        if n_i == 0 {
            skipped.push(i);
            continue;
        }
        let mut sum = vec![0.0; nbins];
        let mut sumsq = vec![0.0; nbins];
        let mut mean_p = vec![0.0; nbins];
        let mut mean_p2 = vec![0.0; nbins];
        let mut mean_binvar = vec![0.0; nbins];
        for t in 0..t_total {
            let u: Vec<f64> = draws.u[t].row(i).iter().cloned().collect();
            let eta = family.transform(&u)?;
            let probs = bin_probs(family, &eta, grid)?;
            match mode {
                PplMode::Replicates => {
                    let rep = sample_multinomial(&mut rng, n_i, &probs);
                    for k in 0..nbins {
                        let x = rep[k] as f64;
                        sum[k] += x;
                        sumsq[k] += x * x;
                    }
                }
                PplMode::PlugIn => {
                    for k in 0..nbins {
                        mean_p[k] += probs[k];
                        mean_p2[k] += probs[k] * probs[k];
                        mean_binvar[k] += probs[k] * (1.0 - probs[k]);
                    }
                }
            }
        }
        let tf = t_total as f64;
        let (e_row, v_row): (Vec<f64>, Vec<f64>) = match mode {
            PplMode::Replicates => (0..nbins)
                .map(|k| {
                    let e = sum[k] / tf;
                    let v = (sumsq[k] / tf - e * e).max(0.0);
                    (e, v)
                })
                .unzip(),
            PplMode::PlugIn => (0..nbins)
                .map(|k| {
                    let nf = n_i as f64;
                    let mp = mean_p[k] / tf;
                    let var_p = (mean_p2[k] / tf - mp * mp).max(0.0);
                    let e = nf * mp;
                    let v = nf * (mean_binvar[k] / tf) + nf * nf * var_p;
                    (e, v)
                })
                .unzip(),
        };
        areas.push(i);
        e_all.push(e_row);
        v_all.push(v_row);
    }

    let m_included = areas.len() as f64;
    let mut variance_term = 0.0;
    let mut gof_term = 0.0;
    for (idx, &i) in areas.iter().enumerate() {
        let row = data.row(i);
        for k in 0..nbins {
            variance_term += v_all[idx][k];
            let d = row[k] as f64 - e_all[idx][k];
            gof_term += d * d;
        }
    }
    variance_term /= m_included;
    gof_term /= m_included + 1.0;
    Ok(PplResult {
        total: variance_term + gof_term,
        variance_term,
        gof_term,
        areas,
        e: e_all,
        v: v_all,
        skipped,
        single_draw: t_total == 1,
    })
}

/// One simulation replication for the metric aggregation. Entries may be NaN
/// to mark areas a method failed to estimate (excluded, counted).
#[derive(Debug, Clone)]
pub struct Replication {
    pub estimate: DMatrix<f64>,
    pub lower: DMatrix<f64>,
    pub upper: DMatrix<f64>,
    pub truth: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct SimMetrics {
    pub mse: DMatrix<f64>,
    pub cp: DMatrix<f64>,
    pub al: DMatrix<f64>,
    /// (area, replication) pairs without a usable estimate.
    pub excluded: usize,
}

/// MSE_ik, CP_ik and AL_ik averaged over replications.
pub fn sim_metrics(reps: &[Replication]) -> Result<SimMetrics, SummaryError> {
    if reps.is_empty() {
        return Err(SummaryError::ShapeMismatch("no replications".into()));
    }
    let (m, k) = (reps[0].estimate.nrows(), reps[0].estimate.ncols());
    for (r, rep) in reps.iter().enumerate() {
        for (name, mat) in [
            ("estimate", &rep.estimate),
            ("lower", &rep.lower),
            ("upper", &rep.upper),
            ("truth", &rep.truth),
        ] {
            if mat.nrows() != m || mat.ncols() != k {
                return Err(SummaryError::ShapeMismatch(format!(
                    "replication {r} {name} is {}x{}, expected {m}x{k}",
                    mat.nrows(),
                    mat.ncols()
                )));
            }
        }
    }
    let mut mse = DMatrix::zeros(m, k);
    let mut cp = DMatrix::zeros(m, k);
    let mut al = DMatrix::zeros(m, k);
    let mut excluded = 0;
    for i in 0..m {
        for c in 0..k {
            let mut n = 0usize;
            let (mut se, mut cov, mut len) = (0.0, 0.0, 0.0);
            for rep in reps {
                let est = rep.estimate[(i, c)];
                if !est.is_finite() {
                    continue;
                }
                let truth = rep.truth[(i, c)];
                let (lo, hi) = (rep.lower[(i, c)], rep.upper[(i, c)]);
                se += (est - truth) * (est - truth);
                cov += f64::from(u8::from(lo <= truth && truth <= hi));
                len += hi - lo;
                n += 1;
            }
            excluded += reps.len() - n;
            if n == 0 {
                mse[(i, c)] = f64::NAN;
                cp[(i, c)] = f64::NAN;
                al[(i, c)] = f64::NAN;
            } else {
                mse[(i, c)] = se / n as f64;
                cp[(i, c)] = cov / n as f64;
                al[(i, c)] = len / n as f64;
            }
        }
    }
    Ok(SimMetrics {
        mse,
        cp,
        al,
        excluded,
    })
}

impl SimMetrics {
    /// Median over areas of one metric column; NaN entries are skipped.
    pub fn median_over_areas(mat: &DMatrix<f64>, coord: usize) -> f64 {
        let mut vals: Vec<f64> = mat
            .column(coord)
            .iter()
            .cloned()
            .filter(|v| v.is_finite())
            .collect();
        if vals.is_empty() {
            return f64::NAN;
        }
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        quantile_type7(&vals, 0.5)
    }
}
