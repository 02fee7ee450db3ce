//! The beta regression model in the (μ, σ) parameterization: density,
//! log-likelihood, analytic score and expected information.
//!
//! With precision factor `φ = (1 - σ²)/σ²` the response has beta shapes
//! `p = μφ` and `q = (1 - μ)φ`, mean `μ` and variance `μ(1 - μ)σ²`. Both `μ`
//! and `σ` get a regression structure through their own link.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::links::{LinkFamily, LinkPoint};
use crate::specfun::{ln_gamma_remainder, psi1, psi1_remainder, psi_minus_ln, HALF_LN_2PI};

/// Whether a link parameter is estimated or held at a value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LambdaMode {
    Free,
    Fixed(f64),
}

/// Identifies one coordinate of the parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParamId {
    Beta(usize),
    Gamma(usize),
    Lambda1,
    Lambda2,
}

impl fmt::Display for ParamId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamId::Beta(i) => write!(f, "beta{i}"),
            ParamId::Gamma(j) => write!(f, "gamma{j}"),
            ParamId::Lambda1 => f.write_str("lambda1"),
            ParamId::Lambda2 => f.write_str("lambda2"),
        }
    }
}

/// `θ = (β, γ, λ₁, λ₂)`. Fixed link parameters carry their fixed value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub beta: DVector<f64>,
    pub gamma: DVector<f64>,
    pub lambda1: f64,
    pub lambda2: f64,
}

impl ParamVector {
    pub fn new(beta: &[f64], gamma: &[f64], lambda1: f64, lambda2: f64) -> Self {
        ParamVector {
            beta: DVector::from_column_slice(beta),
            gamma: DVector::from_column_slice(gamma),
            lambda1,
            lambda2,
        }
    }

    pub fn get(&self, id: ParamId) -> f64 {
        match id {
            ParamId::Beta(i) => self.beta[i],
            ParamId::Gamma(j) => self.gamma[j],
            ParamId::Lambda1 => self.lambda1,
            ParamId::Lambda2 => self.lambda2,
        }
    }

    pub fn set(&mut self, id: ParamId, value: f64) {
        match id {
            ParamId::Beta(i) => self.beta[i] = value,
            ParamId::Gamma(j) => self.gamma[j] = value,
            ParamId::Lambda1 => self.lambda1 = value,
            ParamId::Lambda2 => self.lambda2 = value,
        }
    }
}

/// A response vector with every entry strictly inside (0, 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ResponseVector {
    y: DVector<f64>,
}

impl ResponseVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some((t, &v)) = values.iter().enumerate().find(|(_, &v)| !(v > 0.0 && v < 1.0)) {
            return Err(Error::InvalidInput(format!(
                "response {v} at position {t} is not strictly inside (0, 1)"
            )));
        }
        Ok(ResponseVector {
            y: DVector::from_vec(values),
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn mean(&self) -> f64 {
        self.y.mean()
    }
}

impl TryFrom<Vec<f64>> for ResponseVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        ResponseVector::new(values)
    }
}

impl From<ResponseVector> for Vec<f64> {
    fn from(r: ResponseVector) -> Self {
        r.y.as_slice().to_vec()
    }
}

/// Designs, links and link-parameter handling of one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    x: DMatrix<f64>,
    z: DMatrix<f64>,
    mean_link: LinkFamily,
    dispersion_link: LinkFamily,
    lambda1_mode: LambdaMode,
    lambda2_mode: LambdaMode,
}

impl ModelSpec {
    /// Both link parameters start out free; fixed families ignore the mode.
    pub fn new(
        x: DMatrix<f64>,
        z: DMatrix<f64>,
        mean_link: LinkFamily,
        dispersion_link: LinkFamily,
    ) -> Result<Self> {
        if x.nrows() != z.nrows() {
            return Err(Error::Dimension(format!(
                "X has {} rows but Z has {}",
                x.nrows(),
                z.nrows()
            )));
        }
        if x.ncols() == 0 || z.ncols() == 0 {
            return Err(Error::Dimension("design matrices need at least one column".into()));
        }
        if !x.iter().chain(z.iter()).all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("design matrices contain non-finite values".into()));
        }
        check_full_rank(&x, "X")?;
        check_full_rank(&z, "Z")?;
        Ok(ModelSpec {
            x,
            z,
            mean_link,
            dispersion_link,
            lambda1_mode: LambdaMode::Free,
            lambda2_mode: LambdaMode::Free,
        })
    }

    pub fn with_lambda_modes(mut self, lambda1: LambdaMode, lambda2: LambdaMode) -> Result<Self> {
        for (family, mode) in [(self.mean_link, lambda1), (self.dispersion_link, lambda2)] {
            if let LambdaMode::Fixed(v) = mode {
                family.check_lambda(v)?;
            }
        }
        self.lambda1_mode = lambda1;
        self.lambda2_mode = lambda2;
        Ok(self)
    }

    /// Fitting needs more observations than free parameters.
    pub fn check_identifiable(&self) -> Result<()> {
        if self.n() <= self.n_params() {
            return Err(Error::Dimension(format!(
                "{} observations cannot identify {} parameters",
                self.n(),
                self.n_params()
            )));
        }
        Ok(())
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn mean_link(&self) -> LinkFamily {
        self.mean_link
    }

    pub fn dispersion_link(&self) -> LinkFamily {
        self.dispersion_link
    }

    pub fn lambda_modes(&self) -> (LambdaMode, LambdaMode) {
        (self.lambda1_mode, self.lambda2_mode)
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    /// Columns of X.
    pub fn r(&self) -> usize {
        self.x.ncols()
    }

    /// Columns of Z.
    pub fn s(&self) -> usize {
        self.z.ncols()
    }

    pub fn lambda1_free(&self) -> bool {
        self.mean_link.has_shape_parameter() && self.lambda1_mode == LambdaMode::Free
    }

    pub fn lambda2_free(&self) -> bool {
        self.dispersion_link.has_shape_parameter() && self.lambda2_mode == LambdaMode::Free
    }

    /// Number of estimated parameters `q`.
    pub fn n_params(&self) -> usize {
        self.r() + self.s() + self.lambda1_free() as usize + self.lambda2_free() as usize
    }

    /// Layout of the free parameter vector: β, γ, then the free λ's.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = (0..self.r()).map(ParamId::Beta).collect();
        ids.extend((0..self.s()).map(ParamId::Gamma));
        if self.lambda1_free() {
            ids.push(ParamId::Lambda1);
        }
        if self.lambda2_free() {
            ids.push(ParamId::Lambda2);
        }
        ids
    }

    pub fn position(&self, id: ParamId) -> Option<usize> {
        self.param_ids().iter().position(|&p| p == id)
    }

    /// Value used for λ₁ when it is not estimated.
    pub fn fixed_lambda1(&self) -> f64 {
        match self.lambda1_mode {
            LambdaMode::Fixed(v) => v,
            LambdaMode::Free => 1.0,
        }
    }

    pub fn fixed_lambda2(&self) -> f64 {
        match self.lambda2_mode {
            LambdaMode::Fixed(v) => v,
            LambdaMode::Free => 1.0,
        }
    }

    /// Free coordinates of `theta` in [`ModelSpec::param_ids`] order.
    pub fn pack(&self, theta: &ParamVector) -> DVector<f64> {
        DVector::from_iterator(
            self.n_params(),
            self.param_ids().into_iter().map(|id| theta.get(id)),
        )
    }

    /// Inverse of [`ModelSpec::pack`]; fixed λ's take their fixed value.
    pub fn unpack(&self, free: &DVector<f64>) -> ParamVector {
        let mut theta = ParamVector {
            beta: DVector::zeros(self.r()),
            gamma: DVector::zeros(self.s()),
            lambda1: self.fixed_lambda1(),
            lambda2: self.fixed_lambda2(),
        };
        for (id, &v) in self.param_ids().into_iter().zip(free.iter()) {
            theta.set(id, v);
        }
        theta
    }

    fn check_theta(&self, theta: &ParamVector) -> Result<()> {
        if theta.beta.len() != self.r() || theta.gamma.len() != self.s() {
            return Err(Error::Dimension(format!(
                "parameter vector has {} + {} coefficients, design needs {} + {}",
                theta.beta.len(),
                theta.gamma.len(),
                self.r(),
                self.s()
            )));
        }
        Ok(())
    }

    fn check_response(&self, y: &ResponseVector) -> Result<()> {
        if y.len() != self.n() {
            return Err(Error::Dimension(format!(
                "response has {} entries, design has {} rows",
                y.len(),
                self.n()
            )));
        }
        Ok(())
    }

    fn lambdas(&self, theta: &ParamVector) -> (f64, f64) {
        let l1 = if self.lambda1_free() {
            theta.lambda1
        } else {
            self.fixed_lambda1()
        };
        let l2 = if self.lambda2_free() {
            theta.lambda2
        } else {
            self.fixed_lambda2()
        };
        (l1, l2)
    }

    /// Per-observation link evaluations. Fails with a link-range error when a
    /// predictor leaves its link's domain.
    pub fn states(&self, theta: &ParamVector) -> Result<Vec<ObsState>> {
        self.check_theta(theta)?;
        let (l1, l2) = self.lambdas(theta);
        let eta1 = &self.x * &theta.beta;
        let eta2 = &self.z * &theta.gamma;
        eta1.iter()
            .zip(eta2.iter())
            .map(|(&e1, &e2)| {
                let m = self.mean_link.evaluate(e1, l1)?;
                let s = self.dispersion_link.evaluate(e2, l2)?;
                Ok(ObsState::new(e1, e2, m, s))
            })
            .collect()
    }

    /// Fitted surfaces at `theta`.
    pub fn surfaces(&self, theta: &ParamVector) -> Result<FittedSurfaces> {
        Ok(FittedSurfaces::from_states(&self.states(theta)?))
    }

    /// `ℓ(θ)`; `-∞` when a predictor leaves its link's domain.
    pub fn log_likelihood(&self, theta: &ParamVector, y: &ResponseVector) -> Result<f64> {
        self.check_response(y)?;
        let states = match self.states(theta) {
            Ok(s) => s,
            Err(Error::LinkRange { .. }) => return Ok(f64::NEG_INFINITY),
            Err(e) => return Err(e),
        };
        Ok(states
            .iter()
            .zip(y.values().iter())
            .map(|(st, &yt)| st.log_density(yt))
            .sum())
    }

    /// Score vector over the free parameters.
    pub fn score(&self, theta: &ParamVector, y: &ResponseVector) -> Result<DVector<f64>> {
        self.check_response(y)?;
        let states = self.states(theta)?;
        Ok(self.score_from_states(&states, y))
    }

    /// Log-likelihood and score in one pass.
    pub fn loglik_and_score(
        &self,
        theta: &ParamVector,
        y: &ResponseVector,
    ) -> Result<(f64, DVector<f64>)> {
        self.check_response(y)?;
        let states = self.states(theta)?;
        let ll = states
            .iter()
            .zip(y.values().iter())
            .map(|(st, &yt)| st.log_density(yt))
            .sum();
        Ok((ll, self.score_from_states(&states, y)))
    }

    fn score_from_states(&self, states: &[ObsState], y: &ResponseVector) -> DVector<f64> {
        let (r, s) = (self.r(), self.s());
        let mut u = DVector::zeros(self.n_params());
        let mut u_l1 = 0.0;
        let mut u_l2 = 0.0;
        for (t, (st, &yt)) in states.iter().zip(y.values().iter()).enumerate() {
            let (d_mu, d_sigma) = st.loglik_gradient(yt);
            let gb = d_mu * st.dmu_deta;
            let gg = d_sigma * st.dsigma_deta;
            for i in 0..r {
                u[i] += gb * self.x[(t, i)];
            }
            for j in 0..s {
                u[r + j] += gg * self.z[(t, j)];
            }
            u_l1 += d_mu * st.dmu_dlambda;
            u_l2 += d_sigma * st.dsigma_dlambda;
        }
        let mut k = r + s;
        if self.lambda1_free() {
            u[k] = u_l1;
            k += 1;
        }
        if self.lambda2_free() {
            u[k] = u_l2;
        }
        u
    }

    /// Expected information `K(θ)` over the free parameters.
    pub fn fisher_information(&self, theta: &ParamVector) -> Result<DMatrix<f64>> {
        let states = self.states(theta)?;
        Ok(self.fisher_from_states(&states))
    }

    pub(crate) fn fisher_from_states(&self, states: &[ObsState]) -> DMatrix<f64> {
        // K = Σ_t J_t' M_t J_t with J_t the rows ∂(μ_t, σ_t)/∂θ and M_t the
        // per-observation information in (μ, σ).
        let q = self.n_params();
        let (r, s) = (self.r(), self.s());
        let l1 = self.lambda1_free().then_some(r + s);
        let l2 = self
            .lambda2_free()
            .then_some(r + s + self.lambda1_free() as usize);
        let mut k = DMatrix::zeros(q, q);
        let mut a = DVector::zeros(q);
        let mut b = DVector::zeros(q);
        for (t, st) in states.iter().enumerate() {
            a.fill(0.0);
            b.fill(0.0);
            for i in 0..r {
                a[i] = st.dmu_deta * self.x[(t, i)];
            }
            for j in 0..s {
                b[r + j] = st.dsigma_deta * self.z[(t, j)];
            }
            if let Some(p) = l1 {
                a[p] = st.dmu_dlambda;
            }
            if let Some(p) = l2 {
                b[p] = st.dsigma_dlambda;
            }
            let w = st.expected_weights();
            k.ger(w.nu, &a, &a, 1.0);
            k.ger(w.c, &a, &b, 1.0);
            k.ger(w.c, &b, &a, 1.0);
            k.ger(w.d_star, &b, &b, 1.0);
        }
        symmetrize(&mut k);
        k
    }

    /// Every per-observation intermediate of the score and information.
    pub fn observed_quantities(
        &self,
        theta: &ParamVector,
        y: &ResponseVector,
    ) -> Result<ObservedQuantities> {
        self.check_response(y)?;
        let states = self.states(theta)?;
        let n = self.n();
        let mut q = ObservedQuantities {
            surfaces: FittedSurfaces::from_states(&states),
            y_star: DVector::zeros(n),
            mu_star: DVector::zeros(n),
            var_y_star: DVector::zeros(n),
            a: DVector::zeros(n),
            w: DVector::zeros(n),
            c: DVector::zeros(n),
            nu: DVector::zeros(n),
            d_star: DVector::zeros(n),
            dmu_deta: DVector::zeros(n),
            dsigma_deta: DVector::zeros(n),
            rho: DVector::zeros(n),
            varrho: DVector::zeros(n),
        };
        for (t, (st, &yt)) in states.iter().zip(y.values().iter()).enumerate() {
            let (p, qq) = st.shapes();
            q.y_star[t] = yt.ln() - (-yt).ln_1p();
            q.mu_star[t] = crate::specfun::psi(p) - crate::specfun::psi(qq);
            q.var_y_star[t] = psi1(p) + psi1(qq);
            q.a[t] = st.loglik_gradient(yt).1;
            let weights = st.expected_weights();
            q.nu[t] = weights.nu;
            q.c[t] = weights.c;
            q.d_star[t] = weights.d_star;
            q.w[t] = weights.nu / st.phi * st.dmu_deta * st.dmu_deta;
            q.dmu_deta[t] = st.dmu_deta;
            q.dsigma_deta[t] = st.dsigma_deta;
            q.rho[t] = st.dmu_dlambda;
            q.varrho[t] = st.dsigma_dlambda;
        }
        Ok(q)
    }
}

/// Linear predictors and fitted parameters for every observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedSurfaces {
    pub eta1: DVector<f64>,
    pub eta2: DVector<f64>,
    pub mu: DVector<f64>,
    pub sigma: DVector<f64>,
    pub precision_factor: DVector<f64>,
}

impl FittedSurfaces {
    fn from_states(states: &[ObsState]) -> Self {
        let col = |f: fn(&ObsState) -> f64| DVector::from_iterator(states.len(), states.iter().map(f));
        FittedSurfaces {
            eta1: col(|s| s.eta1),
            eta2: col(|s| s.eta2),
            mu: col(|s| s.mu),
            sigma: col(|s| s.sigma),
            precision_factor: col(|s| s.phi),
        }
    }
}

/// Per-observation intermediates. `w`, `c`, `nu` and `d_star` are the
/// information weights: `nu`, `c`, `d_star` are `E[-∂²ℓ_t]` in the (μ, σ)
/// coordinates and `w = nu·(∂μ/∂η)²/φ`, so that `K_ββ = X'ΣWX`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedQuantities {
    pub surfaces: FittedSurfaces,
    pub y_star: DVector<f64>,
    pub mu_star: DVector<f64>,
    /// `Var(y*) = ψ'(μφ) + ψ'((1-μ)φ)`.
    pub var_y_star: DVector<f64>,
    /// `a_t = ∂ℓ_t/∂σ_t`.
    pub a: DVector<f64>,
    pub w: DVector<f64>,
    pub c: DVector<f64>,
    pub nu: DVector<f64>,
    pub d_star: DVector<f64>,
    pub dmu_deta: DVector<f64>,
    pub dsigma_deta: DVector<f64>,
    pub rho: DVector<f64>,
    pub varrho: DVector<f64>,
}

/// Link evaluations for one observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObsState {
    pub eta1: f64,
    pub eta2: f64,
    pub mu: f64,
    pub mu_c: f64,
    pub sigma: f64,
    pub sigma_c: f64,
    pub phi: f64,
    pub dmu_deta: f64,
    pub dmu_dlambda: f64,
    pub dsigma_deta: f64,
    pub dsigma_dlambda: f64,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ExpectedWeights {
    pub nu: f64,
    pub c: f64,
    pub d_star: f64,
}

impl ObsState {
    fn new(eta1: f64, eta2: f64, m: LinkPoint, s: LinkPoint) -> Self {
        ObsState {
            eta1,
            eta2,
            mu: m.mu,
            mu_c: m.complement,
            sigma: s.mu,
            sigma_c: s.complement,
            phi: precision_factor(s.mu, s.complement),
            dmu_deta: m.dmu_deta,
            dmu_dlambda: m.dmu_dlambda,
            dsigma_deta: s.dmu_deta,
            dsigma_dlambda: s.dmu_dlambda,
        }
    }

    pub fn shapes(&self) -> (f64, f64) {
        (self.mu * self.phi, self.mu_c * self.phi)
    }

    pub fn log_density(&self, y: f64) -> f64 {
        log_density_parts(y, self.mu, self.mu_c, self.phi)
    }

    /// `(∂ℓ_t/∂μ_t, ∂ℓ_t/∂σ_t)`.
    pub fn loglik_gradient(&self, y: f64) -> (f64, f64) {
        let (p, q) = self.shapes();
        let (_, log_y_ratio) = log_ratio(y, self.mu);
        let (_, log_yc_ratio) = log_ratio(1.0 - y, self.mu_c);
        // y* - μ* with the log φ terms cancelled analytically
        let resid = log_y_ratio - log_yc_ratio - (psi_minus_ln(p) - psi_minus_ln(q));
        let d_phi = self.mu * resid + log_yc_ratio + psi_minus_ln(self.phi) - psi_minus_ln(q);
        let sigma3 = self.sigma * self.sigma * self.sigma;
        (self.phi * resid, -2.0 / sigma3 * d_phi)
    }

    pub(crate) fn expected_weights(&self) -> ExpectedWeights {
        let (p, q) = self.shapes();
        let (mu, mu_c, phi) = (self.mu, self.mu_c, self.phi);
        let sigma3 = self.sigma * self.sigma * self.sigma;
        let dphi_dsigma = 2.0 / sigma3;
        let nu = phi * phi * (psi1(p) + psi1(q));
        // leading terms 1/x and 1/(2x²) of ψ' cancel in both brackets
        let (sp, sq, sphi) = (psi1_remainder(p), psi1_remainder(q), psi1_remainder(phi));
        let c_bracket = 0.5 / phi * (1.0 / q - 1.0 / p) + mu_c * sq - mu * sp;
        let d_bracket = 0.5 / (phi * phi) + mu * mu * sp + mu_c * mu_c * sq - sphi;
        ExpectedWeights {
            nu,
            c: phi * dphi_dsigma * c_bracket,
            d_star: dphi_dsigma * dphi_dsigma * d_bracket,
        }
    }
}

/// `φ = (1 - σ²)/σ²` from `σ` and an accurate `1 - σ`.
fn precision_factor(sigma: f64, sigma_c: f64) -> f64 {
    sigma_c * (1.0 + sigma) / (sigma * sigma)
}

fn log_density_parts(y: f64, mu: f64, mu_c: f64, phi: f64) -> f64 {
    // log Γ(x) = (x - ½)log x - x + log√(2π) + R(x); the large leading parts
    // of the three gamma terms cancel in closed form.
    let (p, q) = (mu * phi, mu_c * phi);
    // p·log(y/μ) + q·log((1-y)/(1-μ)) with the first-order terms p·a + q·b,
    // which sum to zero, removed before they can cancel numerically
    let (a, log_a) = log_ratio(y, mu);
    let (b, log_b) = log_ratio(1.0 - y, mu_c);
    0.5 * phi.ln() - HALF_LN_2PI + ln_gamma_remainder(phi)
        - ln_gamma_remainder(p)
        - ln_gamma_remainder(q)
        + 0.5 * (mu.ln() + mu_c.ln())
        - y.ln()
        - (-y).ln_1p()
        + p * ln1p_minus_x(a, log_a)
        + q * ln1p_minus_x(b, log_b)
}

/// `(x, log(1 + x))` for `x = num/den - 1`. The complement arguments must be
/// formed as `1 - y` and `1 - μ` directly: rebuilding `1 + x` from `x` loses
/// every digit when `y` is within 1e-12 of one.
fn log_ratio(num: f64, den: f64) -> (f64, f64) {
    let x = (num - den) / den;
    let log = if x.abs() < 0.5 {
        x.ln_1p()
    } else {
        num.ln() - den.ln()
    };
    (x, log)
}

/// `log(1 + x) - x` given `log(1 + x)`, using the series for small `|x|`.
fn ln1p_minus_x(x: f64, log_1px: f64) -> f64 {
    if x.abs() < 0.01 {
        let mut term = x * x;
        let mut sum = 0.0;
        for k in 2..=12 {
            let sign = if k % 2 == 0 { -1.0 } else { 1.0 };
            sum += sign * term / k as f64;
            term *= x;
        }
        sum
    } else {
        log_1px - x
    }
}

/// `log f(y; μ, σ)` for the beta density with mean `μ` and dispersion `σ`.
pub fn log_density(y: f64, mu: f64, sigma: f64) -> Result<f64> {
    for (function, v) in [("log_density(y)", y), ("log_density(mu)", mu), ("log_density(sigma)", sigma)] {
        if !(v > 0.0 && v < 1.0) {
            return Err(Error::Domain { function, value: v });
        }
    }
    Ok(log_density_parts(y, mu, 1.0 - mu, precision_factor(sigma, 1.0 - sigma)))
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

fn check_full_rank(m: &DMatrix<f64>, name: &'static str) -> Result<()> {
    let svd = m.clone().svd(false, false);
    let max = svd.singular_values.max();
    let min = svd.singular_values.min();
    if !(min > max * 1e-10) {
        return Err(Error::RankDeficient(name));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::specfun::ln_gamma;
    use std::f64::consts::PI;

    fn direct_log_density(y: f64, mu: f64, sigma: f64) -> f64 {
        let phi = (1.0 - sigma * sigma) / (sigma * sigma);
        let (p, q) = (mu * phi, (1.0 - mu) * phi);
        ln_gamma(phi) - ln_gamma(p) - ln_gamma(q) + (p - 1.0) * y.ln() + (q - 1.0) * (1.0 - y).ln()
    }

    #[test]
    fn ln1p_minus_x_is_continuous_at_the_series_switch() {
        for &x in &[-0.0100001f64, -0.0099999, 0.0099999, 0.0100001] {
            let direct = x.ln_1p() - x;
            assert!((ln1p_minus_x(x, x.ln_1p()) - direct).abs() <= 1e-12 * direct.abs(), "x={x}");
        }
        let x = 1e-9;
        assert!((ln1p_minus_x(x, x.ln_1p()) + x * x / 2.0 - x * x * x / 3.0).abs() < 1e-33);
    }

    #[test]
    fn log_density_is_smooth_for_responses_next_to_one() {
        // y within 2e-12 of one: the complement log must not be rebuilt from
        // (μ - y)/(1 - μ), whose rounding is amplified by 1/(1 - y)
        let y = 1.0 - 1.6716e-12;
        let f = |mu: f64| log_density(y, mu, 0.555).unwrap();
        let h = 1e-9;
        let d2 = f(0.97 - h) - 2.0 * f(0.97) + f(0.97 + h);
        assert!(d2.abs() < 1e-12, "second difference {d2:e}");
    }

    #[test]
    fn log_density_examples() {
        let sigma_uniform = (1.0f64 / 3.0).sqrt();
        for &y in &[0.01, 0.3, 0.5, 0.97] {
            assert!(log_density(y, 0.5, sigma_uniform).unwrap().abs() < 1e-14);
        }
        let arcsine = log_density(0.5, 0.5, 0.5f64.sqrt()).unwrap();
        assert!((arcsine - (2.0 / PI).ln()).abs() < 1e-14);
        // shapes p = 9.6, q = 14.4 evaluated at 40 digits
        assert!((log_density(0.3, 0.4, 0.2).unwrap() - 0.964_208_334_187_638_1).abs() < 1e-13);
        assert!(log_density(0.0, 0.4, 0.2).is_err());
        assert!(log_density(0.3, 1.0, 0.2).is_err());
    }

    #[test]
    fn log_density_is_accurate_at_huge_precision() {
        // φ ≈ 1e8: the naive gamma-function form loses all digits here
        let v = log_density(0.4001, 0.4, 1e-4).unwrap();
        assert!((v - 6.921_659_098_363_863).abs() < 1e-8, "{v}");
    }

    #[test]
    fn log_density_agrees_with_direct_formula_at_moderate_shapes() {
        for &(y, mu, sigma) in &[(0.2, 0.3, 0.5), (0.9, 0.8, 0.1), (0.01, 0.05, 0.9), (0.6, 0.5, 0.3)] {
            let a = log_density(y, mu, sigma).unwrap();
            assert!((a - direct_log_density(y, mu, sigma)).abs() < 1e-11, "{y} {mu} {sigma}");
        }
    }

    fn constant_spec(n: usize, mean: LinkFamily, disp: LinkFamily) -> ModelSpec {
        ModelSpec::new(DMatrix::from_element(n, 1, 1.0), DMatrix::from_element(n, 1, 1.0), mean, disp)
            .unwrap_or_else(|_| panic!("constant spec n={n}"))
    }

    #[test]
    fn spec_validation() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.1, 1.0, 0.2, 1.0, 0.3, 1.0, 0.4]);
        let z = DMatrix::from_row_slice(4, 2, &[1.0, 2.0, 1.0, 4.0, 1.0, 6.0, 1.0, 8.0]);
        // n = 4 cannot identify 2 + 2 + 2 parameters
        let big = ModelSpec::new(x.clone(), x.clone(), LinkFamily::AoAsymmetric, LinkFamily::AoAsymmetric).unwrap();
        assert!(matches!(big.check_identifiable(), Err(Error::Dimension(_))));
        let dup = DMatrix::from_row_slice(4, 2, &[1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(
            ModelSpec::new(dup, z.clone(), LinkFamily::Logit, LinkFamily::Logit),
            Err(Error::RankDeficient("X"))
        ));
        let spec = ModelSpec::new(x, DMatrix::from_element(4, 1, 1.0), LinkFamily::Logit, LinkFamily::Logit).unwrap();
        assert_eq!(spec.n_params(), 3);
        assert_eq!(spec.param_ids(), vec![ParamId::Beta(0), ParamId::Beta(1), ParamId::Gamma(0)]);
    }

    #[test]
    fn pack_and_unpack_follow_layout() {
        let spec = constant_spec(10, LinkFamily::AoAsymmetric, LinkFamily::AoSymmetric)
            .with_lambda_modes(LambdaMode::Fixed(2.0), LambdaMode::Free)
            .unwrap();
        assert_eq!(spec.param_ids(), vec![ParamId::Beta(0), ParamId::Gamma(0), ParamId::Lambda2]);
        let theta = spec.unpack(&DVector::from_vec(vec![0.1, -0.5, 0.4]));
        assert_eq!(theta.lambda1, 2.0);
        assert_eq!(theta.lambda2, 0.4);
        assert_eq!(spec.pack(&theta), DVector::from_vec(vec![0.1, -0.5, 0.4]));
    }

    #[test]
    fn log_likelihood_examples() {
        let spec = constant_spec(3, LinkFamily::Logit, LinkFamily::Logit);
        let sigma = (1.0f64 / 3.0).sqrt();
        let gamma0 = (sigma / (1.0 - sigma)).ln();
        let theta = ParamVector::new(&[0.0], &[gamma0], 1.0, 1.0);
        let y = ResponseVector::new(vec![0.1, 0.5, 0.8]).unwrap();
        assert!(spec.log_likelihood(&theta, &y).unwrap().abs() < 1e-13);
        let short = ResponseVector::new(vec![0.1, 0.5]).unwrap();
        assert!(matches!(spec.log_likelihood(&theta, &short), Err(Error::Dimension(_))));
    }

    #[test]
    fn log_likelihood_is_minus_infinity_outside_symmetric_domain() {
        let spec = constant_spec(3, LinkFamily::AoSymmetric, LinkFamily::Logit);
        let theta = ParamVector::new(&[5.0], &[-1.0], 0.5, 1.0);
        let y = ResponseVector::new(vec![0.1, 0.5, 0.8]).unwrap();
        assert_eq!(spec.log_likelihood(&theta, &y).unwrap(), f64::NEG_INFINITY);
        assert!(matches!(spec.score(&theta, &y), Err(Error::LinkRange { .. })));
    }

    #[test]
    fn observed_quantities_examples() {
        let spec = constant_spec(2, LinkFamily::Logit, LinkFamily::Logit);
        let sigma = 0.5f64.sqrt();
        let theta = ParamVector::new(&[0.0], &[(sigma / (1.0 - sigma)).ln()], 1.0, 1.0);
        let y = ResponseVector::new(vec![0.3, 0.6]).unwrap();
        let q = spec.observed_quantities(&theta, &y).unwrap();
        assert!((q.surfaces.precision_factor[0] - 1.0).abs() < 1e-14);
        assert_eq!(q.mu_star[0], 0.0);
        assert!((q.w[0] - PI * PI / 16.0).abs() < 1e-13);
        assert!((q.var_y_star[1] - PI * PI).abs() < 1e-12);
    }

    #[test]
    fn fisher_weights_match_direct_trigamma_forms() {
        for &(mu, sigma) in &[(0.5, 0.5), (0.2, 0.3), (0.9, 0.05), (0.03, 0.7)] {
            let m = LinkPoint { mu, complement: 1.0 - mu, dmu_deta: 1.0, dmu_dlambda: 0.0 };
            let s = LinkPoint { mu: sigma, complement: 1.0 - sigma, dmu_deta: 1.0, dmu_dlambda: 0.0 };
            let st = ObsState::new(0.0, 0.0, m, s);
            let w = st.expected_weights();
            let phi = st.phi;
            let (p, q) = st.shapes();
            let s3 = sigma * sigma * sigma;
            let c = phi * (2.0 / s3) * ((1.0 - mu) * psi1(q) - mu * psi1(p));
            let d = 4.0 / (s3 * s3) * (mu * mu * psi1(p) + (1.0 - mu).powi(2) * psi1(q) - psi1(phi));
            assert!((w.c - c).abs() <= 1e-9 * c.abs().max(1.0), "c {} vs {}", w.c, c);
            assert!((w.d_star - d).abs() <= 1e-9 * d.abs().max(1.0), "d {} vs {}", w.d_star, d);
        }
    }
}
