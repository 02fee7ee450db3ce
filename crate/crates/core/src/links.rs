//! Link families mapping a parameter in (0, 1) to a linear predictor.
//!
//! The two Aranda-Ordaz families carry a shape parameter `lambda`; logit,
//! complementary log-log and probit are fixed links that ignore it. Besides
//! `g`, `g⁻¹` and the two slopes, every family reports `∂μ/∂λ`, which the
//! score and the information matrix need for the link parameters.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::specfun::{normal_quantile_unchecked, std_normal_cdf, std_normal_pdf};

/// Inverse-link values are kept inside `[CLIP, 1 - CLIP]`.
pub const CLIP: f64 = 1e-12;

/// Below this `|lambda|` the symmetric family is replaced by its logit limit.
pub const SYMMETRIC_LAMBDA_MIN: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LinkFamily {
    #[serde(rename = "ao-asymmetric")]
    AoAsymmetric,
    #[serde(rename = "ao-symmetric")]
    AoSymmetric,
    #[serde(rename = "logit")]
    Logit,
    #[serde(rename = "cloglog")]
    Cloglog,
    #[serde(rename = "probit")]
    Probit,
}

/// Admissible values of the shape parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LambdaConstraint {
    Positive,
    NonZero,
    Unused,
}

/// Inverse link and its derivatives at one linear-predictor value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkPoint {
    pub mu: f64,
    /// `1 - mu`, computed without cancellation.
    pub complement: f64,
    pub dmu_deta: f64,
    pub dmu_dlambda: f64,
}

impl LinkFamily {
    pub const ALL: [LinkFamily; 5] = [
        LinkFamily::AoAsymmetric,
        LinkFamily::AoSymmetric,
        LinkFamily::Logit,
        LinkFamily::Cloglog,
        LinkFamily::Probit,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LinkFamily::AoAsymmetric => "ao-asymmetric",
            LinkFamily::AoSymmetric => "ao-symmetric",
            LinkFamily::Logit => "logit",
            LinkFamily::Cloglog => "cloglog",
            LinkFamily::Probit => "probit",
        }
    }

    pub fn has_shape_parameter(self) -> bool {
        matches!(self, LinkFamily::AoAsymmetric | LinkFamily::AoSymmetric)
    }

    pub fn constraint(self) -> LambdaConstraint {
        match self {
            LinkFamily::AoAsymmetric => LambdaConstraint::Positive,
            LinkFamily::AoSymmetric => LambdaConstraint::NonZero,
            _ => LambdaConstraint::Unused,
        }
    }

    /// Validates `lambda` against the family's constraint. The symmetric
    /// family accepts values below [`SYMMETRIC_LAMBDA_MIN`] in magnitude and
    /// evaluates its logit limit there.
    pub fn check_lambda(self, lambda: f64) -> Result<()> {
        let ok = match self.constraint() {
            LambdaConstraint::Positive => lambda > 0.0 && lambda.is_finite(),
            LambdaConstraint::NonZero => lambda.is_finite(),
            LambdaConstraint::Unused => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidLambda {
                family: self.name(),
                lambda,
            })
        }
    }

    /// The open interval of linear predictors the inverse link accepts.
    pub fn eta_range(self, lambda: f64) -> (f64, f64) {
        match self {
            LinkFamily::AoSymmetric if lambda.abs() >= SYMMETRIC_LAMBDA_MIN => {
                let bound = 2.0 / lambda.abs();
                (-bound, bound)
            }
            _ => (f64::NEG_INFINITY, f64::INFINITY),
        }
    }

    /// `η = g(μ, λ)`.
    pub fn link(self, mu: f64, lambda: f64) -> Result<f64> {
        check_unit("link", mu)?;
        self.check_lambda(lambda)?;
        Ok(match self {
            LinkFamily::Logit => logit(mu),
            LinkFamily::Cloglog => (-(-mu).ln_1p()).ln(),
            LinkFamily::Probit => normal_quantile_unchecked(mu),
            LinkFamily::AoAsymmetric => {
                let v = -lambda * (-mu).ln_1p();
                v + (-(-v).exp_m1()).ln() - lambda.ln()
            }
            LinkFamily::AoSymmetric => {
                if lambda.abs() < SYMMETRIC_LAMBDA_MIN {
                    logit(mu)
                } else {
                    2.0 / lambda * (0.5 * lambda * logit(mu)).tanh()
                }
            }
        })
    }

    /// `∂g/∂μ` at `μ`.
    pub fn dg_dmu(self, mu: f64, lambda: f64) -> Result<f64> {
        check_unit("dg_dmu", mu)?;
        self.check_lambda(lambda)?;
        let one_minus = 1.0 - mu;
        Ok(match self {
            LinkFamily::Logit => 1.0 / (mu * one_minus),
            LinkFamily::Cloglog => 1.0 / (one_minus * -(-mu).ln_1p()),
            LinkFamily::Probit => 1.0 / std_normal_pdf(normal_quantile_unchecked(mu)),
            LinkFamily::AoAsymmetric => {
                let v = -lambda * (-mu).ln_1p();
                lambda / (one_minus * -(-v).exp_m1())
            }
            LinkFamily::AoSymmetric => {
                if lambda.abs() < SYMMETRIC_LAMBDA_MIN {
                    1.0 / (mu * one_minus)
                } else {
                    let t = (0.5 * lambda * logit(mu)).tanh();
                    (1.0 - t * t) / (mu * one_minus)
                }
            }
        })
    }

    /// `μ = g⁻¹(η, λ)`.
    pub fn inverse(self, eta: f64, lambda: f64) -> Result<f64> {
        Ok(self.evaluate(eta, lambda)?.mu)
    }

    /// `∂μ/∂η`, the reciprocal of [`LinkFamily::dg_dmu`] at `μ = g⁻¹(η, λ)`.
    pub fn dmu_deta(self, eta: f64, lambda: f64) -> Result<f64> {
        Ok(self.evaluate(eta, lambda)?.dmu_deta)
    }

    /// `∂μ/∂λ` at fixed `η`; identically zero for the fixed links.
    pub fn dmu_dlambda(self, eta: f64, lambda: f64) -> Result<f64> {
        Ok(self.evaluate(eta, lambda)?.dmu_dlambda)
    }

    /// Inverse link together with both derivatives.
    pub fn evaluate(self, eta: f64, lambda: f64) -> Result<LinkPoint> {
        if !eta.is_finite() {
            return Err(Error::LinkRange {
                family: self.name(),
                eta,
                lambda,
            });
        }
        self.check_lambda(lambda)?;
        let point = match self {
            LinkFamily::Logit => logistic_point(eta),
            LinkFamily::Cloglog => {
                let e = eta.exp();
                LinkPoint {
                    mu: -(-e).exp_m1(),
                    complement: (-e).exp(),
                    dmu_deta: (eta - e).exp(),
                    dmu_dlambda: 0.0,
                }
            }
            LinkFamily::Probit => LinkPoint {
                mu: std_normal_cdf(eta),
                complement: std_normal_cdf(-eta),
                dmu_deta: std_normal_pdf(eta),
                dmu_dlambda: 0.0,
            },
            LinkFamily::AoAsymmetric => asymmetric_point(eta, lambda),
            LinkFamily::AoSymmetric => {
                if lambda.abs() < SYMMETRIC_LAMBDA_MIN {
                    logistic_point(eta)
                } else {
                    symmetric_point(eta, lambda).ok_or(Error::LinkRange {
                        family: self.name(),
                        eta,
                        lambda,
                    })?
                }
            }
        };
        Ok(clip(point))
    }
}

impl fmt::Display for LinkFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LinkFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LinkFamily::ALL
            .into_iter()
            .find(|family| family.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown link family '{s}'")))
    }
}

fn check_unit(function: &'static str, mu: f64) -> Result<()> {
    if mu > 0.0 && mu < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain {
            function,
            value: mu,
        })
    }
}

fn logit(mu: f64) -> f64 {
    mu.ln() - (-mu).ln_1p()
}

fn logistic_point(eta: f64) -> LinkPoint {
    let (mu, complement) = if eta >= 0.0 {
        let e = (-eta).exp();
        (1.0 / (1.0 + e), e / (1.0 + e))
    } else {
        let e = eta.exp();
        (e / (1.0 + e), 1.0 / (1.0 + e))
    };
    LinkPoint {
        mu,
        complement,
        dmu_deta: mu * complement,
        dmu_dlambda: 0.0,
    }
}

fn asymmetric_point(eta: f64, lambda: f64) -> LinkPoint {
    let log_u = eta + lambda.ln();
    // log(1 + λe^η) without overflow for large η
    let log1p_u = if log_u > 35.0 {
        log_u + (-log_u).exp().ln_1p()
    } else {
        log_u.exp().ln_1p()
    };
    let s = log1p_u / lambda;
    let complement = (-s).exp();
    let mu = -(-s).exp_m1();
    let dmu_deta = (eta - s - log1p_u).exp();

    let u = log_u.exp();
    let dmu_dlambda = if u < 1e-3 {
        // [1/(1+u) - log(1+u)/u] / u as a power series in u
        let mut h = 0.0;
        let mut power = 1.0;
        for k in 1..=10 {
            let kf = k as f64;
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            h += sign * kf / (kf + 1.0) * power;
            power *= u;
        }
        (2.0 * eta).exp() * h * complement
    } else {
        ((-eta).exp() + lambda).recip() / lambda * complement - log1p_u / (lambda * lambda) * complement
    };

    LinkPoint {
        mu,
        complement,
        dmu_deta,
        dmu_dlambda,
    }
}

fn symmetric_point(eta: f64, lambda: f64) -> Option<LinkPoint> {
    let x = 0.5 * lambda * eta;
    if x.abs() >= 1.0 {
        return None;
    }
    let atanh = 0.5 * ((1.0 + x) / (1.0 - x)).ln();
    let mut point = logistic_point(2.0 / lambda * atanh);
    let spread = point.mu * point.complement;
    let one_minus_x2 = 1.0 - x * x;
    point.dmu_deta = spread / one_minus_x2;
    // ∂L/∂λ with L = (2/λ) atanh(λη/2); the two terms cancel to O(λη³) for small x
    let dl_dlambda = if x.abs() < 0.1 {
        let x2 = x * x;
        let mut series = 0.0;
        let mut power = 1.0;
        for k in 1..=12 {
            let two_k = 2.0 * k as f64;
            series += two_k / (two_k + 1.0) * power;
            power *= x2;
        }
        eta / lambda * x2 * series
    } else {
        -2.0 / (lambda * lambda) * atanh + eta / (lambda * one_minus_x2)
    };
    point.dmu_dlambda = spread * dl_dlambda;
    Some(point)
}

fn clip(mut point: LinkPoint) -> LinkPoint {
    if point.mu < CLIP {
        point.mu = CLIP;
        point.complement = 1.0 - CLIP;
    } else if point.complement < CLIP {
        point.complement = CLIP;
        point.mu = 1.0 - CLIP;
    }
    point
}
