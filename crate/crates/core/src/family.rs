//! Parametric income distribution families: log-normal, Singh-Maddala and
//! Dagum. Densities, CDFs, unconstrained parameter transforms, mean income
//! and Gini index.

use serde::{Deserialize, Serialize};
use statrs::function::erf::{erf, erfc};
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistError {
    #[error("{family}: expected {expected} parameters, got {actual}")]
    WrongParamCount {
        family: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("{family}: parameter {index} must be positive, got {value}")]
    NonPositiveParam {
        family: &'static str,
        index: usize,
        value: f64,
    },
    #[error("parameter {index} must be finite, got {value}")]
    NonFiniteParam { index: usize, value: f64 },
    #[error("exp overflow in transform component {index} (u = {value})")]
    TransformOverflow { index: usize, value: f64 },
    #[error("income must be nonnegative, got {0}")]
    NegativeIncome(f64),
    #[error("income must be positive, got {0}")]
    NonPositiveIncome(f64),
    #[error("{family}: mean does not exist, requires {condition}")]
    MeanUndefined {
        family: &'static str,
        condition: String,
    },
}

/// The three supported income distribution families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    /// LN(mu, sigma^2): eta = (mu, sigma^2) with sigma^2 > 0.
    LogNormal,
    /// SM(a, b, c1): all three parameters positive.
    SinghMaddala,
    /// DG(a, b, c2): all three parameters positive.
    Dagum,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::LogNormal, Family::SinghMaddala, Family::Dagum];

    /// Number of area-wise parameters p.
    pub fn param_count(self) -> usize {
        match self {
            Family::LogNormal => 2,
            Family::SinghMaddala | Family::Dagum => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::LogNormal => "log-normal",
            Family::SinghMaddala => "singh-maddala",
            Family::Dagum => "dagum",
        }
    }

    /// Short code used in file formats and on the command line.
    pub fn code(self) -> &'static str {
        match self {
            Family::LogNormal => "ln",
            Family::SinghMaddala => "sm",
            Family::Dagum => "dg",
        }
    }

    pub fn parse_code(s: &str) -> Option<Family> {
        match s.to_ascii_lowercase().as_str() {
            "ln" | "lognormal" | "log-normal" => Some(Family::LogNormal),
            "sm" | "singh-maddala" | "singhmaddala" => Some(Family::SinghMaddala),
            "dg" | "dagum" => Some(Family::Dagum),
            _ => None,
        }
    }

    fn check_len(self, len: usize) -> Result<(), DistError> {
        if len != self.param_count() {
            return Err(DistError::WrongParamCount {
                family: self.name(),
                expected: self.param_count(),
                actual: len,
            });
        }
        Ok(())
    }

    fn check_params(self, eta: &[f64]) -> Result<(), DistError> {
        self.check_len(eta.len())?;
        for (i, &v) in eta.iter().enumerate() {
            if !v.is_finite() {
                return Err(DistError::NonFiniteParam { index: i, value: v });
            }
            // LN component 0 is the real-valued location; everything else is positive.
            let positivity_required = !(self == Family::LogNormal && i == 0);
            if positivity_required && v <= 0.0 {
                return Err(DistError::NonPositiveParam {
                    family: self.name(),
                    index: i,
                    value: v,
                });
            }
        }
        Ok(())
    }

    /// Map unconstrained u to the natural parameters eta.
    ///
    /// LN uses the identity on the location and exp on the variance;
    /// SM and DG use exp componentwise.
    pub fn transform(self, u: &[f64]) -> Result<Vec<f64>, DistError> {
        self.check_len(u.len())?;
        for (i, &v) in u.iter().enumerate() {
            if !v.is_finite() {
                return Err(DistError::NonFiniteParam { index: i, value: v });
            }
        }
        let mut eta = u.to_vec();
        let exp_from = if self == Family::LogNormal { 1 } else { 0 };
        for (i, v) in eta.iter_mut().enumerate().skip(exp_from) {
            let e = v.exp();
            if !e.is_finite() {
                return Err(DistError::TransformOverflow { index: i, value: *v });
            }
            *v = e;
        }
        Ok(eta)
    }

    /// Exact inverse of [`Family::transform`].
    pub fn inverse_transform(self, eta: &[f64]) -> Result<Vec<f64>, DistError> {
        self.check_params(eta)?;
        let mut u = eta.to_vec();
        let ln_from = if self == Family::LogNormal { 1 } else { 0 };
        for v in u.iter_mut().skip(ln_from) {
            *v = v.ln();
        }
        Ok(u)
    }

    /// F(x; eta). Accepts x = +inf (returns exactly 1) for the open top bin.
    pub fn cdf(self, eta: &[f64], x: f64) -> Result<f64, DistError> {
        self.check_params(eta)?;
        if x < 0.0 || x.is_nan() {
            return Err(DistError::NegativeIncome(x));
        }
        Ok(match self {
            Family::LogNormal => {
                let z = (x.ln() - eta[0]) / eta[1].sqrt();
                normal_cdf(z)
            }
            // 1 - {1 + (x/b)^a}^{-c1}
            Family::SinghMaddala => {
                let y = eta[0] * (x / eta[1]).ln();
                -f64::exp_m1(-eta[2] * ln_one_plus_exp(y))
            }
            // {1 + (x/b)^{-a}}^{-c2}
            Family::Dagum => {
                let y = eta[0] * (x / eta[1]).ln();
                (-eta[2] * ln_one_plus_exp(-y)).exp()
            }
        })
    }

    /// 1 - F(x; eta), computed without cancellation in the upper tail.
    pub fn survival(self, eta: &[f64], x: f64) -> Result<f64, DistError> {
        self.check_params(eta)?;
        if x < 0.0 || x.is_nan() {
            return Err(DistError::NegativeIncome(x));
        }
        Ok(match self {
            Family::LogNormal => {
                let z = (x.ln() - eta[0]) / eta[1].sqrt();
                normal_cdf(-z)
            }
            Family::SinghMaddala => {
                let y = eta[0] * (x / eta[1]).ln();
                (-eta[2] * ln_one_plus_exp(y)).exp()
            }
            Family::Dagum => {
                let y = eta[0] * (x / eta[1]).ln();
                -f64::exp_m1(-eta[2] * ln_one_plus_exp(-y))
            }
        })
    }

    /// f(x; eta) for x > 0.
    pub fn density(self, eta: &[f64], x: f64) -> Result<f64, DistError> {
        self.check_params(eta)?;
        if x <= 0.0 || x.is_nan() {
            return Err(DistError::NonPositiveIncome(x));
        }
        Ok(match self {
            Family::LogNormal => {
                let sigma = eta[1].sqrt();
                let z = (x.ln() - eta[0]) / sigma;
                (-0.5 * z * z).exp() / (x * sigma * (2.0 * std::f64::consts::PI).sqrt())
            }
            Family::SinghMaddala => {
                let (a, b, c) = (eta[0], eta[1], eta[2]);
                let y = a * (x / b).ln();
                let ln_f =
                    a.ln() + c.ln() + (a - 1.0) * x.ln() - a * b.ln() - (1.0 + c) * ln_one_plus_exp(y);
                ln_f.exp()
            }
            Family::Dagum => {
                let (a, b, c) = (eta[0], eta[1], eta[2]);
                let y = a * (x / b).ln();
                let ln_f = a.ln() + c.ln() + (a * c - 1.0) * x.ln()
                    - a * c * b.ln()
                    - (1.0 + c) * ln_one_plus_exp(y);
                ln_f.exp()
            }
        })
    }

    fn mean_condition(self, eta: &[f64]) -> Result<(), DistError> {
        match self {
            Family::LogNormal => Ok(()),
            Family::SinghMaddala => {
                let (a, c) = (eta[0], eta[2]);
                if a * c > 1.0 {
                    Ok(())
                } else {
                    Err(DistError::MeanUndefined {
                        family: self.name(),
                        condition: format!("c1 > 1/a (got a*c1 = {})", a * c),
                    })
                }
            }
            Family::Dagum => {
                if eta[0] > 1.0 {
                    Ok(())
                } else {
                    Err(DistError::MeanUndefined {
                        family: self.name(),
                        condition: format!("a > 1 (got a = {})", eta[0]),
                    })
                }
            }
        }
    }

    /// E[X], the area mean income.
    pub fn mean_income(self, eta: &[f64]) -> Result<f64, DistError> {
        self.check_params(eta)?;
        self.mean_condition(eta)?;
        Ok(match self {
            Family::LogNormal => (eta[0] + 0.5 * eta[1]).exp(),
            Family::SinghMaddala => {
                let (a, b, c) = (eta[0], eta[1], eta[2]);
                b * (ln_gamma(1.0 + 1.0 / a) + ln_gamma(c - 1.0 / a) - ln_gamma(c)).exp()
            }
            Family::Dagum => {
                let (a, b, c) = (eta[0], eta[1], eta[2]);
                b * (ln_gamma(c + 1.0 / a) + ln_gamma(1.0 - 1.0 / a) - ln_gamma(c)).exp()
            }
        })
    }

    /// Gini index in [0, 1). Requires the mean to exist.
    pub fn gini(self, eta: &[f64]) -> Result<f64, DistError> {
        self.check_params(eta)?;
        self.mean_condition(eta)?;
        Ok(match self {
            // 2 Phi(sigma / sqrt(2)) - 1 = erf(sigma / 2)
            Family::LogNormal => erf(0.5 * eta[1].sqrt()),
            Family::SinghMaddala => {
                let (a, c) = (eta[0], eta[2]);
                1.0 - (ln_gamma(c) + ln_gamma(2.0 * c - 1.0 / a)
                    - ln_gamma(c - 1.0 / a)
                    - ln_gamma(2.0 * c))
                    .exp()
            }
            Family::Dagum => {
                let (a, c) = (eta[0], eta[2]);
                (ln_gamma(c) + ln_gamma(2.0 * c + 1.0 / a)
                    - ln_gamma(2.0 * c)
                    - ln_gamma(c + 1.0 / a))
                .exp()
                    - 1.0
            }
        })
    }
}

/// Natural (constrained) parameters of one area's income distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct NaturalParams {
    pub eta: Vec<f64>,
}

impl NaturalParams {
    pub fn new(family: Family, eta: Vec<f64>) -> Result<Self, DistError> {
        family.check_params(&eta)?;
        Ok(NaturalParams { eta })
    }
}

/// Unconstrained (transformed) parameters u of one area.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformedParams {
    pub u: Vec<f64>,
}

impl TransformedParams {
    pub fn new(u: Vec<f64>) -> Result<Self, DistError> {
        for (i, &v) in u.iter().enumerate() {
            if !v.is_finite() {
                return Err(DistError::NonFiniteParam { index: i, value: v });
            }
        }
        Ok(TransformedParams { u })
    }
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// log(1 + e^y) without overflow for large y.
fn ln_one_plus_exp(y: f64) -> f64 {
    if y > 33.0 {
        y + (-y).exp()
    } else if y < -33.0 {
        y.exp()
    } else {
        y.exp().ln_1p()
    }
}
