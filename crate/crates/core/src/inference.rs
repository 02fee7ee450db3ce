//! Wald intervals and the asymptotic tests: z, likelihood ratio, Wald, score
//! and gradient, plus the RESET-type and link-adequacy specification tests.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{fit_restricted, FitOptions, FittedModel};
use crate::linalg::{min_eigenvalue, pseudo_inverse, spd_inverse, submatrix};
use crate::links::LinkFamily;
use crate::model::{LambdaMode, ModelSpec, ParamId, ResponseVector};
use crate::specfun::{chi_squared_sf, normal_two_sided_p, std_normal_quantile};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaldInterval {
    pub estimate: f64,
    pub std_error: f64,
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
}

/// `estimate ± Φ⁻¹(1 - α/2)·SE` with `level = 1 - α`.
pub fn wald_interval(estimate: f64, std_error: f64, level: f64) -> Result<WaldInterval> {
    let z = critical_value(level)?;
    if !(std_error >= 0.0) || !std_error.is_finite() {
        return Err(Error::InvalidInput(format!(
            "standard error must be finite and non-negative, got {std_error}"
        )));
    }
    Ok(WaldInterval {
        estimate,
        std_error,
        lower: estimate - z * std_error,
        upper: estimate + z * std_error,
        level,
    })
}

fn critical_value(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidInput(format!(
            "confidence level must lie in (0, 1), got {level}"
        )));
    }
    std_normal_quantile(0.5 + level / 2.0)
}

/// Checks that the covariance matrix is positive semidefinite up to rounding.
fn check_cov(cov: &DMatrix<f64>) -> Result<()> {
    if cov.is_empty() {
        return Ok(());
    }
    let scale = cov.amax().max(f64::MIN_POSITIVE);
    if cov.iter().any(|v| !v.is_finite()) || min_eigenvalue(cov) < -1e-8 * scale {
        return Err(Error::Singular(
            "covariance matrix is not positive semidefinite",
        ));
    }
    Ok(())
}

/// Intervals for every free parameter, in the order of
/// [`ModelSpec::param_ids`]. `cov` is already on the `λ` scale: the
/// estimator's log transform of an asymmetric `λ` is undone by evaluating the
/// information in `λ`.
pub fn wald_ci_params(fit: &FittedModel, level: f64) -> Result<Vec<(ParamId, WaldInterval)>> {
    check_cov(&fit.cov)?;
    let estimates = fit.estimates();
    let se = fit.std_errors();
    fit.param_ids()
        .into_iter()
        .enumerate()
        .map(|(k, id)| Ok((id, wald_interval(estimates[k], se[k], level)?)))
        .collect()
}

/// Interval for one fitted surface value, with endpoints mapped through the
/// inverse link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfaceInterval {
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
    /// The endpoint's predictor left the link's domain and was set to the
    /// range limit.
    pub lower_clipped: bool,
    pub upper_clipped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceIntervals {
    pub level: f64,
    pub mu: Vec<SurfaceInterval>,
    pub sigma: Vec<SurfaceInterval>,
}

/// Per-observation intervals for `μ_t` and `σ_t`, built on the predictor
/// scale with `SE(η̂₁ₜ) = (x_t cov(β̂) x_t')^{1/2}` and the analogue for `η̂₂ₜ`.
pub fn wald_ci_surfaces(fit: &FittedModel, level: f64) -> Result<SurfaceIntervals> {
    check_cov(&fit.cov)?;
    let z = critical_value(level)?;
    let spec = &fit.spec;
    let (r, s) = (spec.r(), spec.s());
    let cov_beta = fit.cov.view((0, 0), (r, r)).into_owned();
    let cov_gamma = fit.cov.view((r, r), (s, s)).into_owned();
    let (l1, l2) = (fit.theta_hat.lambda1, fit.theta_hat.lambda2);
    let surf = &fit.surfaces;

    let side = |design: &DMatrix<f64>,
                cov: &DMatrix<f64>,
                eta: &DVector<f64>,
                point: &DVector<f64>,
                family: LinkFamily,
                lambda: f64|
     -> Result<Vec<SurfaceInterval>> {
        (0..design.nrows())
            .map(|t| {
                let row = design.row(t);
                let var = (row * cov * row.transpose())[(0, 0)].max(0.0);
                let half = z * var.sqrt();
                let (lower, lower_clipped) = inverse_or_limit(family, eta[t] - half, lambda)?;
                let (upper, upper_clipped) = inverse_or_limit(family, eta[t] + half, lambda)?;
                Ok(SurfaceInterval {
                    estimate: point[t],
                    lower,
                    upper,
                    lower_clipped,
                    upper_clipped,
                })
            })
            .collect()
    };

    Ok(SurfaceIntervals {
        level,
        mu: side(spec.x(), &cov_beta, &surf.eta1, &surf.mu, spec.mean_link(), l1)?,
        sigma: side(
            spec.z(),
            &cov_gamma,
            &surf.eta2,
            &surf.sigma,
            spec.dispersion_link(),
            l2,
        )?,
    })
}

/// `g⁻¹(η, λ)`, or the limit 0 or 1 when `η` is beyond a bounded link's domain.
fn inverse_or_limit(family: LinkFamily, eta: f64, lambda: f64) -> Result<(f64, bool)> {
    match family.inverse(eta, lambda) {
        Ok(mu) => Ok((mu, false)),
        Err(Error::LinkRange { .. }) => {
            let limit = if lambda * eta > 0.0 { 1.0 } else { 0.0 };
            Ok((limit, true))
        }
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestKind {
    #[serde(rename = "lr")]
    LikelihoodRatio,
    Wald,
    Score,
    Gradient,
    Z,
}

impl TestKind {
    pub fn name(self) -> &'static str {
        match self {
            TestKind::LikelihoodRatio => "lr",
            TestKind::Wald => "wald",
            TestKind::Score => "score",
            TestKind::Gradient => "gradient",
            TestKind::Z => "z",
        }
    }
}

impl fmt::Display for TestKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TestKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lr" => Ok(TestKind::LikelihoodRatio),
            "wald" => Ok(TestKind::Wald),
            "score" => Ok(TestKind::Score),
            "gradient" => Ok(TestKind::Gradient),
            "z" => Ok(TestKind::Z),
            other => Err(Error::InvalidInput(format!("unknown test kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub kind: TestKind,
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

impl TestResult {
    fn chi_squared(kind: TestKind, statistic: f64, dof: usize) -> Self {
        // LR and gradient statistics can come out a hair negative from
        // optimizer tolerance; the χ² reference needs them non-negative.
        let statistic = statistic.max(0.0);
        TestResult {
            kind,
            statistic,
            dof,
            p_value: chi_squared_sf(statistic, dof),
        }
    }

    pub fn rejects(&self, alpha: f64) -> bool {
        self.p_value < alpha
    }
}

/// `(θ̂ - θ⁰)/SE` for one free parameter with a two-sided normal p-value.
pub fn z_test(fit: &FittedModel, id: ParamId, null_value: f64) -> Result<TestResult> {
    let k = fit
        .spec
        .position(id)
        .ok_or_else(|| Error::InvalidInput(format!("{id} is not a free parameter")))?;
    if fit.pinned.iter().any(|p| p.0 == id) {
        return Err(Error::InvalidInput(format!("{id} was held fixed in this fit")));
    }
    let var = fit.cov[(k, k)];
    if !(var > 0.0) {
        return Err(Error::InvalidInput(format!(
            "standard error of {id} is zero; the z statistic is undefined"
        )));
    }
    let z = (fit.theta_hat.get(id) - null_value) / var.sqrt();
    Ok(TestResult {
        kind: TestKind::Z,
        statistic: z,
        dof: 1,
        p_value: normal_two_sided_p(z),
    })
}

fn describe(restriction: &[(ParamId, f64)]) -> String {
    restriction
        .iter()
        .map(|(id, v)| format!("{id} = {v}"))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Tests `H₀: θ_I = θ_I⁰` against the unrestricted fit `full`.
///
/// The score and gradient statistics use the score and information at the
/// restricted estimate `θ̃`.
pub fn joint_test(
    full: &FittedModel,
    y: &ResponseVector,
    restriction: &[(ParamId, f64)],
    kind: TestKind,
    options: &FitOptions,
) -> Result<TestResult> {
    if kind == TestKind::Z {
        return Err(Error::InvalidInput(
            "the z test is a single-parameter test; use z_test".into(),
        ));
    }
    if restriction.is_empty() {
        return Ok(TestResult {
            kind,
            statistic: 0.0,
            dof: 0,
            p_value: 1.0,
        });
    }
    let spec = &full.spec;
    let mut idx = Vec::with_capacity(restriction.len());
    for (i, &(id, _)) in restriction.iter().enumerate() {
        let k = spec
            .position(id)
            .ok_or_else(|| Error::InvalidInput(format!("{id} is not a free parameter")))?;
        if restriction[..i].iter().any(|p| p.0 == id) {
            return Err(Error::InvalidInput(format!("{id} is restricted twice")));
        }
        if full.pinned.iter().any(|p| p.0 == id) {
            return Err(Error::InvalidInput(format!(
                "{id} is already held fixed in the full fit"
            )));
        }
        idx.push(k);
    }
    let dof = restriction.len();
    let estimates = full.estimates();
    let diff = DVector::from_iterator(
        dof,
        restriction
            .iter()
            .zip(&idx)
            .map(|(&(_, v), &k)| estimates[k] - v),
    );

    if kind == TestKind::Wald {
        check_cov(&full.cov)?;
        let cov_i = submatrix(&full.cov, &idx);
        let inv = spd_inverse(&cov_i).unwrap_or_else(|| pseudo_inverse(&cov_i));
        let w = (diff.transpose() * inv * &diff)[(0, 0)];
        return Ok(TestResult::chi_squared(kind, w, dof));
    }

    let mut pins = full.pinned.clone();
    pins.extend_from_slice(restriction);
    let restricted = match fit_restricted(spec, y, options, &pins) {
        Ok(f) => f,
        Err(Error::NonConvergence { .. }) => {
            return Err(Error::RestrictedFit {
                restriction: describe(restriction),
            })
        }
        Err(e) => return Err(e),
    };
    let u_i = DVector::from_iterator(dof, idx.iter().map(|&k| restricted.score[k]));
    let statistic = match kind {
        TestKind::LikelihoodRatio => 2.0 * (full.loglik - restricted.loglik),
        TestKind::Score => {
            let k_inv_ii = submatrix(&restricted.cov, &idx);
            (u_i.transpose() * k_inv_ii * &u_i)[(0, 0)]
        }
        TestKind::Gradient => u_i.dot(&diff),
        TestKind::Wald | TestKind::Z => unreachable!(),
    };
    Ok(TestResult::chi_squared(kind, statistic, dof))
}

/// RESET-type misspecification test: adds `η̂₁²` to both designs, holds the
/// link parameters at their estimates, and tests the two new coefficients.
pub fn reset_test(
    fit: &FittedModel,
    y: &ResponseVector,
    kind: TestKind,
    options: &FitOptions,
) -> Result<TestResult> {
    if !fit.converged {
        return Err(Error::InvalidInput("RESET test needs a converged fit".into()));
    }
    if !fit.pinned.is_empty() {
        return Err(Error::InvalidInput(
            "RESET test needs an unrestricted fit".into(),
        ));
    }
    let spec = &fit.spec;
    let extra = fit.surfaces.eta1.map(|e| e * e);
    let augment = |m: &DMatrix<f64>| {
        let mut out = m.clone().insert_column(m.ncols(), 0.0);
        out.set_column(m.ncols(), &extra);
        out
    };
    let mode = |family: LinkFamily, lambda: f64| {
        if family.has_shape_parameter() {
            LambdaMode::Fixed(lambda)
        } else {
            LambdaMode::Free
        }
    };
    let augmented = ModelSpec::new(
        augment(spec.x()),
        augment(spec.z()),
        spec.mean_link(),
        spec.dispersion_link(),
    )?
    .with_lambda_modes(
        mode(spec.mean_link(), fit.theta_hat.lambda1),
        mode(spec.dispersion_link(), fit.theta_hat.lambda2),
    )?;
    let full = crate::estimator::fit(&augmented, y, options)?;
    joint_test(
        &full,
        y,
        &[
            (ParamId::Beta(spec.r()), 0.0),
            (ParamId::Gamma(spec.s()), 0.0),
        ],
        kind,
        options,
    )
}

/// Tests `H₀: (λ₁, λ₂) = lambda_null`, e.g. `(1, 1)` for logit adequacy
/// within the asymmetric family.
pub fn link_adequacy_test(
    fit: &FittedModel,
    y: &ResponseVector,
    lambda_null: (f64, f64),
    kind: TestKind,
    options: &FitOptions,
) -> Result<TestResult> {
    let spec = &fit.spec;
    if !(spec.lambda1_free() && spec.lambda2_free()) {
        return Err(Error::InvalidInput(
            "link adequacy test needs both link parameters estimated".into(),
        ));
    }
    spec.mean_link().check_lambda(lambda_null.0)?;
    spec.dispersion_link().check_lambda(lambda_null.1)?;
    joint_test(
        fit,
        y,
        &[
            (ParamId::Lambda1, lambda_null.0),
            (ParamId::Lambda2, lambda_null.1),
        ],
        kind,
        options,
    )
}
