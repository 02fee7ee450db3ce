//! Residuals, leverage, influence, simulated envelopes, information
//! criteria, generalized R² and marginal effects for a fitted model.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{fit, FitOptions, FittedModel};
use crate::linalg::spd_inverse;
use crate::links::LinkFamily;
use crate::model::{ModelSpec, ResponseVector};
use crate::simulate::simulate_response;
use crate::specfun::{psi1, std_normal_quantile};

/// Leverage at or above this is treated as one: the weighted residual and
/// Cook distance are undefined there and reported as NaN.
pub const LEVERAGE_LIMIT: f64 = 1.0 - 1e-10;
pub const DEFAULT_COOK_THRESHOLD: f64 = 0.5;
pub const DEFAULT_ENVELOPE_K: usize = 100;
pub const DEFAULT_ENVELOPE_ALPHA: f64 = 0.05;
const ENVELOPE_ATTEMPTS: u64 = 5;

fn check_response(fit: &FittedModel, y: &ResponseVector) -> Result<()> {
    if y.len() != fit.n() {
        return Err(Error::Dimension(format!(
            "response has {} entries, fit has {} observations",
            y.len(),
            fit.n()
        )));
    }
    Ok(())
}

/// `(y_t - μ̂_t) / sqrt(μ̂_t(1 - μ̂_t) σ̂_t²)`.
pub fn residual_ordinary(fit: &FittedModel, y: &ResponseVector) -> Result<DVector<f64>> {
    check_response(fit, y)?;
    let s = &fit.surfaces;
    Ok(DVector::from_iterator(
        y.len(),
        (0..y.len()).map(|t| {
            let (mu, sigma) = (s.mu[t], s.sigma[t]);
            (y.values()[t] - mu) / (mu * (1.0 - mu)).sqrt() / sigma
        }),
    ))
}

/// Diagonal of `W^{1/2} X (X'WX)⁻¹ X' W^{1/2}` for per-observation weights.
pub fn hat_diagonal(x: &DMatrix<f64>, weights: &DVector<f64>) -> Result<DVector<f64>> {
    if x.nrows() != weights.len() {
        return Err(Error::Dimension(format!(
            "{} weights for {} design rows",
            weights.len(),
            x.nrows()
        )));
    }
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::InvalidInput("hat-matrix weights must be finite and non-negative".into()));
    }
    let mut xw = x.clone();
    for (t, mut row) in xw.row_iter_mut().enumerate() {
        row *= weights[t].sqrt();
    }
    let inner = xw.transpose() * &xw;
    let inv = spd_inverse(&inner).ok_or(Error::Singular("X'WX in the hat matrix"))?;
    Ok(DVector::from_iterator(
        x.nrows(),
        xw.row_iter().map(|row| (row * &inv * row.transpose())[(0, 0)].clamp(0.0, 1.0)),
    ))
}

/// Leverages of the mean submodel. The weight of observation `t` is
/// `ν_t (dμ_t/dη₁ₜ)²`, the `β` block of the expected information.
pub fn hat_matrix_diag(fit: &FittedModel) -> Result<DVector<f64>> {
    let spec = &fit.spec;
    let states = spec.states(&fit.theta_hat)?;
    let weights = DVector::from_iterator(
        states.len(),
        states
            .iter()
            .map(|s| s.expected_weights().nu * s.dmu_deta * s.dmu_deta),
    );
    hat_diagonal(spec.x(), &weights)
}

/// Standardized weighted residual 2: `(y*_t - μ̂*_t) / sqrt(V̂ar(y*_t)(1 - h_tt))`
/// with `y* = log(y/(1 - y))`, `μ* = ψ(μφ) - ψ((1 - μ)φ)` and
/// `Var(y*) = ψ'(μφ) + ψ'((1 - μ)φ)`. NaN where `h_tt ≥ 1 - 1e-10`.
pub fn residual_weighted2(fit: &FittedModel, y: &ResponseVector) -> Result<DVector<f64>> {
    let h = hat_matrix_diag(fit)?;
    weighted2_with_leverage(fit, y, &h)
}

fn weighted2_with_leverage(
    fit: &FittedModel,
    y: &ResponseVector,
    h: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_response(fit, y)?;
    let states = fit.spec.states(&fit.theta_hat)?;
    Ok(DVector::from_iterator(
        y.len(),
        states.iter().enumerate().map(|(t, st)| {
            if h[t] >= LEVERAGE_LIMIT {
                return f64::NAN;
            }
            let (p, q) = st.shapes();
            // φ(y* - μ*) is the mean score; dividing out φ avoids forming
            // y* and μ* separately when φ is huge
            let resid = st.loglik_gradient(y.values()[t]).0 / st.phi;
            resid / ((psi1(p) + psi1(q)) * (1.0 - h[t])).sqrt()
        }),
    ))
}

/// `C_t = h_tt/(1 - h_tt) · (r^pp_t)²`; NaN where the leverage is one.
pub fn cook_distance(fit: &FittedModel, y: &ResponseVector) -> Result<DVector<f64>> {
    let h = hat_matrix_diag(fit)?;
    let r = weighted2_with_leverage(fit, y, &h)?;
    Ok(cook_from_parts(&h, &r))
}

fn cook_from_parts(h: &DVector<f64>, r: &DVector<f64>) -> DVector<f64> {
    h.zip_map(r, |h, r| {
        if h >= LEVERAGE_LIMIT {
            f64::NAN
        } else {
            h / (1.0 - h) * r * r
        }
    })
}

/// `-2ℓ̂ + P·q`.
pub fn gaic_value(loglik: f64, q: usize, penalty: f64) -> f64 {
    -2.0 * loglik + penalty * q as f64
}

/// GAIC with `q` the number of estimated parameters, free `λ`'s included.
pub fn gaic(fit: &FittedModel, penalty: f64) -> f64 {
    gaic_value(fit.loglik, fit.n_estimated(), penalty)
}

pub fn aic(fit: &FittedModel) -> f64 {
    gaic(fit, 2.0)
}

pub fn sic(fit: &FittedModel) -> f64 {
    gaic(fit, (fit.n() as f64).ln())
}

/// Intercept-only fit for `μ` and `σ`. Logit links make it the unrestricted
/// two-parameter maximum, whatever links the full model uses.
pub fn fit_null_model(y: &ResponseVector, options: &FitOptions) -> Result<FittedModel> {
    let ones = DMatrix::from_element(y.len(), 1, 1.0);
    let spec = ModelSpec::new(ones.clone(), ones, LinkFamily::Logit, LinkFamily::Logit)?;
    fit(&spec, y, options)
}

/// `1 - exp(-(2/n)[ℓ(θ̂) - ℓ(0)])`.
pub fn r2_generalized(fit: &FittedModel, null_fit: &FittedModel) -> Result<f64> {
    r2_from_logliks(fit.loglik, null_fit.loglik, fit.n())
}

pub fn r2_from_logliks(loglik: f64, null_loglik: f64, n: usize) -> Result<f64> {
    let gain = loglik - null_loglik;
    if gain < -1e-8 {
        return Err(Error::InvalidInput(format!(
            "fitted log-likelihood {loglik} is below the null model's {null_loglik}; the models are not nested"
        )));
    }
    Ok(-(-2.0 / n as f64 * gain.max(0.0)).exp_m1())
}

/// `(1/n) Σ (y_t - μ̂_t)²`.
pub fn mse_fit(fit: &FittedModel, y: &ResponseVector) -> Result<f64> {
    check_response(fit, y)?;
    let mu = &fit.surfaces.mu;
    Ok((y.values() - mu).norm_squared() / y.len() as f64)
}

/// Half-normal plot data with simulated bands for the sorted `|r^pp|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeBand {
    /// Sorted absolute weighted residuals of the fitted data.
    pub residuals: Vec<f64>,
    pub lower: Vec<f64>,
    pub mean: Vec<f64>,
    pub upper: Vec<f64>,
    /// Half-normal scores `Φ⁻¹((t + n + ½)/(2n + 10/8))`, `t = 1..n`.
    pub scores: Vec<f64>,
    pub k: usize,
    pub alpha: f64,
    /// Share of the fitted residuals outside `[lower, upper]`.
    pub outside_fraction: f64,
}

/// Simulated envelope: draws `k` samples from the fitted model, refits each,
/// and summarizes the sorted `|r^pp|` order statistics by their `α/2` and
/// `1 - α/2` quantiles and mean. A replication whose refit fails is redrawn
/// up to five times. Replication `i`, attempt `a` uses RNG stream `8i + a`.
pub fn simulated_envelope(
    fit_: &FittedModel,
    y: &ResponseVector,
    k: usize,
    alpha: f64,
    seed: u64,
    options: &FitOptions,
) -> Result<EnvelopeBand> {
    if k < 19 {
        return Err(Error::InvalidInput(format!("envelope needs k >= 19 replications, got {k}")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidInput(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if !fit_.pinned.is_empty() {
        return Err(Error::InvalidInput("envelope needs an unrestricted fit".into()));
    }
    let n = fit_.n();
    let observed = sorted_abs(&residual_weighted2(fit_, y)?);
    let spec = &fit_.spec;
    let (mu, sigma) = (&fit_.surfaces.mu, &fit_.surfaces.sigma);

    let replicate = |i: usize| -> Result<Vec<f64>> {
        for attempt in 0..ENVELOPE_ATTEMPTS {
            let stream = ((i as u64) << 3) | attempt;
            let y_sim = simulate_response(mu, sigma, seed, stream)?;
            let refit = match fit(spec, &y_sim, options) {
                Ok(f) => f,
                Err(Error::NonConvergence { .. }) => continue,
                Err(e) => return Err(e),
            };
            match residual_weighted2(&refit, &y_sim) {
                Ok(r) => return Ok(sorted_abs(&r)),
                Err(Error::Singular(_)) => continue,
                Err(e) => return Err(e),
            }
        }
        Err(Error::InvalidInput(format!(
            "envelope replication {i} failed to refit in {ENVELOPE_ATTEMPTS} attempts"
        )))
    };
    let sims = (0..k)
        .into_par_iter()
        .map(replicate)
        .collect::<Result<Vec<_>>>()?;

    let mut lower = Vec::with_capacity(n);
    let mut mean = Vec::with_capacity(n);
    let mut upper = Vec::with_capacity(n);
    let mut column = vec![0.0; k];
    for t in 0..n {
        for (c, sim) in column.iter_mut().zip(&sims) {
            *c = sim[t];
        }
        column.sort_by(f64::total_cmp);
        lower.push(quantile_type6(&column, alpha / 2.0));
        mean.push(column.iter().sum::<f64>() / k as f64);
        upper.push(quantile_type6(&column, 1.0 - alpha / 2.0));
    }
    let outside = observed
        .iter()
        .zip(lower.iter().zip(&upper))
        .filter(|(r, (lo, hi))| !(**r >= **lo && **r <= **hi))
        .count();
    Ok(EnvelopeBand {
        scores: half_normal_scores(n)?,
        residuals: observed,
        lower,
        mean,
        upper,
        k,
        alpha,
        outside_fraction: outside as f64 / n as f64,
    })
}

fn sorted_abs(r: &DVector<f64>) -> Vec<f64> {
    let mut v: Vec<f64> = r.iter().map(|x| x.abs()).collect();
    v.sort_by(f64::total_cmp);
    v
}

/// `Φ⁻¹((t + n + ½)/(2n + 10/8))` for `t = 1..n`.
pub fn half_normal_scores(n: usize) -> Result<Vec<f64>> {
    let nf = n as f64;
    (1..=n)
        .map(|t| std_normal_quantile((t as f64 + nf + 0.5) / (2.0 * nf + 10.0 / 8.0)))
        .collect()
}

/// Sample quantile with plotting position `p(k + 1)`, clamped to the sample
/// range when that position falls outside `[1, k]`. `sorted` must be sorted.
pub fn quantile_type6(sorted: &[f64], p: f64) -> f64 {
    let k = sorted.len();
    let pos = p * (k as f64 + 1.0);
    if pos <= 1.0 {
        return sorted[0];
    }
    if pos >= k as f64 {
        return sorted[k - 1];
    }
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    sorted[lo - 1] + frac * (sorted[lo] - sorted[lo - 1])
}

/// A mean-design column built from other columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DerivedTerm {
    /// `column = x_of²`.
    Square { column: usize, of: usize },
    /// `column = x_a · x_b`.
    Interaction { column: usize, a: usize, b: usize },
}

impl DerivedTerm {
    fn column(self) -> usize {
        match self {
            DerivedTerm::Square { column, .. } | DerivedTerm::Interaction { column, .. } => column,
        }
    }

    fn values(self, x: &DMatrix<f64>, t: usize) -> f64 {
        match self {
            DerivedTerm::Square { of, .. } => x[(t, of)] * x[(t, of)],
            DerivedTerm::Interaction { a, b, .. } => x[(t, a)] * x[(t, b)],
        }
    }
}

fn columns_match(x: &DMatrix<f64>, column: usize, f: impl Fn(usize) -> f64) -> bool {
    (0..x.nrows()).all(|t| {
        let (v, w) = (x[(t, column)], f(t));
        (v - w).abs() <= 1e-10 * (1.0 + w.abs())
    })
}

fn is_constant(x: &DMatrix<f64>, column: usize) -> bool {
    let first = x[(0, column)];
    x.column(column).iter().all(|&v| v == first)
}

/// `∂μ_t/∂x_tj = (dμ/dη)(η̂₁ₜ, λ̂₁) · ∂η₁ₜ/∂x_tj`, where the derivative of the
/// predictor includes every declared square or interaction involving `j`.
///
/// Any other mean-design column that numerically equals `x_j²` or `x_j·x_k`
/// must be declared; otherwise the impact would silently omit its slope.
pub fn marginal_impact(
    fit: &FittedModel,
    covariate: usize,
    derived: &[DerivedTerm],
) -> Result<DVector<f64>> {
    let spec = &fit.spec;
    let x = spec.x();
    let (n, r) = (x.nrows(), x.ncols());
    if covariate >= r {
        return Err(Error::InvalidInput(format!(
            "covariate column {covariate} is not in the mean design ({r} columns)"
        )));
    }
    for term in derived {
        let (c, sources) = match *term {
            DerivedTerm::Square { column, of } => (column, vec![of]),
            DerivedTerm::Interaction { column, a, b } => (column, vec![a, b]),
        };
        if c >= r || sources.iter().any(|&s| s >= r || s == c) {
            return Err(Error::InvalidInput(format!("derived term {term:?} refers to a missing column")));
        }
        if !columns_match(x, c, |t| term.values(x, t)) {
            return Err(Error::InvalidInput(format!(
                "mean-design column {c} does not equal its declared derivation {term:?}"
            )));
        }
    }
    if derived.iter().any(|d| d.column() == covariate) {
        return Err(Error::InvalidInput(format!(
            "column {covariate} is declared as derived; pick its source covariate"
        )));
    }
    let declared = |c: usize| derived.iter().any(|d| d.column() == c);
    for c in (0..r).filter(|&c| c != covariate && !declared(c) && !is_constant(x, c)) {
        let square = columns_match(x, c, |t| x[(t, covariate)] * x[(t, covariate)]);
        let interaction = (0..r)
            .filter(|&k| k != c && k != covariate && !is_constant(x, k))
            .any(|k| columns_match(x, c, |t| x[(t, covariate)] * x[(t, k)]));
        if square || interaction {
            return Err(Error::InvalidInput(format!(
                "mean-design column {c} is derived from covariate {covariate} but not declared"
            )));
        }
    }

    let beta = &fit.theta_hat.beta;
    let (family, lambda) = (spec.mean_link(), fit.theta_hat.lambda1);
    (0..n)
        .map(|t| {
            let mut slope = beta[covariate];
            for term in derived {
                match *term {
                    DerivedTerm::Square { column, of } if of == covariate => {
                        slope += 2.0 * beta[column] * x[(t, covariate)];
                    }
                    DerivedTerm::Interaction { column, a, b } => {
                        if a == covariate && b == covariate {
                            slope += 2.0 * beta[column] * x[(t, covariate)];
                        } else if a == covariate {
                            slope += beta[column] * x[(t, b)];
                        } else if b == covariate {
                            slope += beta[column] * x[(t, a)];
                        }
                    }
                    _ => {}
                }
            }
            Ok(family.dmu_deta(fit.surfaces.eta1[t], lambda)? * slope)
        })
        .collect::<Result<Vec<_>>>()
        .map(DVector::from_vec)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub r_ordinary: DVector<f64>,
    pub r_weighted2: DVector<f64>,
    pub hat_diag: DVector<f64>,
    pub cook: DVector<f64>,
    pub aic: f64,
    pub sic: f64,
    pub gaic_penalty: f64,
    pub gaic: f64,
    pub r2_g: f64,
    pub mse_fit: f64,
    pub cook_threshold: f64,
    /// Observations with `|r^pp| > 2`.
    pub flagged_residual: Vec<usize>,
    /// Observations with Cook distance above the threshold.
    pub flagged_cook: Vec<usize>,
    /// Observations with leverage one, whose residual and Cook distance are NaN.
    pub degenerate_leverage: Vec<usize>,
}

/// Every diagnostic at once; the null model for `R²_G` is fitted here.
pub fn diagnose(
    fit_: &FittedModel,
    y: &ResponseVector,
    gaic_penalty: f64,
    cook_threshold: f64,
    options: &FitOptions,
) -> Result<DiagnosticsReport> {
    if !fit_.converged {
        return Err(Error::InvalidInput("diagnostics need a converged fit".into()));
    }
    let hat_diag = hat_matrix_diag(fit_)?;
    let r_weighted2 = weighted2_with_leverage(fit_, y, &hat_diag)?;
    let cook = cook_from_parts(&hat_diag, &r_weighted2);
    let null = fit_null_model(y, options)?;
    let indices = |pred: &dyn Fn(usize) -> bool| (0..y.len()).filter(|&t| pred(t)).collect();
    Ok(DiagnosticsReport {
        r_ordinary: residual_ordinary(fit_, y)?,
        flagged_residual: indices(&|t| r_weighted2[t].abs() > 2.0),
        flagged_cook: indices(&|t| cook[t] > cook_threshold),
        degenerate_leverage: indices(&|t| hat_diag[t] >= LEVERAGE_LIMIT),
        r_weighted2,
        hat_diag,
        cook,
        aic: aic(fit_),
        sic: sic(fit_),
        gaic_penalty,
        gaic: gaic(fit_, gaic_penalty),
        r2_g: r2_generalized(fit_, &null)?,
        mse_fit: mse_fit(fit_, y)?,
        cook_threshold,
    })
}
