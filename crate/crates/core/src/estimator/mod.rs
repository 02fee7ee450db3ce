//! Joint maximum-likelihood estimation of `(β, γ, λ₁, λ₂)`.
//!
//! The optimizer is BFGS on `-ℓ`. Asymmetric link parameters are optimized
//! as `log λ`; symmetric ones on their natural scale, with the sign of a
//! fitted symmetric `λ` reported as positive since the family is even in
//! `λ`. The starting inverse Hessian is the inverse expected information,
//! which makes the first step a Fisher-scoring step.

mod bfgs;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{least_squares, pseudo_inverse, spd_inverse, submatrix};
use crate::links::LinkFamily;
use crate::model::{FittedSurfaces, LambdaMode, ModelSpec, ParamId, ParamVector, ResponseVector};

/// Asymmetric link parameters outside this band are treated as inadmissible.
const ASYMMETRIC_LAMBDA_BAND: (f64, f64) = (1e-8, 1e6);

/// How the optimizer chooses the starting value of one link parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LambdaStart {
    /// 1 for the asymmetric family, 0.5 for the symmetric one.
    Default,
    Explicit(f64),
    /// Try every grid value and keep the best converged fit.
    Grid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Bound on `max|U(θ)|/n` at convergence.
    pub gradient_tolerance: f64,
    pub lambda1_start: LambdaStart,
    pub lambda2_start: LambdaStart,
    /// Retry from the λ grid when the first start fails.
    pub multistart: bool,
    /// Overrides the family's default grid.
    pub lambda1_grid: Option<Vec<f64>>,
    pub lambda2_grid: Option<Vec<f64>>,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iterations: 500,
            gradient_tolerance: 1e-6,
            lambda1_start: LambdaStart::Default,
            lambda2_start: LambdaStart::Default,
            multistart: true,
            lambda1_grid: None,
            lambda2_grid: None,
        }
    }
}

/// Default multistart grid for a family.
pub fn default_grid(family: LinkFamily) -> Vec<f64> {
    match family {
        LinkFamily::AoAsymmetric => vec![0.25, 0.5, 1.0, 2.0, 5.0],
        LinkFamily::AoSymmetric => vec![0.1, 0.39, 0.67, 1.0],
        _ => vec![1.0],
    }
}

fn default_start(family: LinkFamily) -> f64 {
    match family {
        LinkFamily::AoSymmetric => 0.5,
        _ => 1.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub loglik: f64,
    /// Largest gradient component in the optimizer's coordinates.
    pub max_abs_gradient: f64,
}

/// Optimizer history of one start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitTrace {
    pub lambda1_start: f64,
    pub lambda2_start: f64,
    pub converged: bool,
    pub entries: Vec<TraceEntry>,
}

impl FitTrace {
    pub fn iterations(&self) -> usize {
        self.entries.last().map_or(0, |e| e.iteration)
    }

    pub fn best_loglik(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.loglik)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StartRecord {
    pub lambda1: f64,
    pub lambda2: f64,
    /// The default start failed and this one came from the grid.
    pub multistart: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub spec: ModelSpec,
    pub theta_hat: ParamVector,
    pub loglik: f64,
    /// Score over the free parameters at `theta_hat`.
    pub score: DVector<f64>,
    pub fisher: DMatrix<f64>,
    pub cov: DMatrix<f64>,
    /// The information was singular and `cov` is a pseudo-inverse.
    pub fisher_singular: bool,
    pub surfaces: FittedSurfaces,
    pub converged: bool,
    pub iterations: usize,
    pub start_used: StartRecord,
    /// Parameters held at a value during a restricted fit.
    pub pinned: Vec<(ParamId, f64)>,
    pub trace: FitTrace,
}

impl FittedModel {
    /// Number of estimated parameters.
    pub fn n_estimated(&self) -> usize {
        self.spec.n_params() - self.pinned.len()
    }

    pub fn n(&self) -> usize {
        self.spec.n()
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.spec.param_ids()
    }

    pub fn estimates(&self) -> DVector<f64> {
        self.spec.pack(&self.theta_hat)
    }

    pub fn std_errors(&self) -> DVector<f64> {
        self.cov.diagonal().map(|v| v.max(0.0).sqrt())
    }
}

/// Starting values for one choice of link parameters.
pub fn initial_values(spec: &ModelSpec, y: &ResponseVector, options: &FitOptions) -> Result<ParamVector> {
    let pick = |start: LambdaStart, family: LinkFamily| match start {
        LambdaStart::Explicit(v) => v,
        _ => default_start(family),
    };
    let l1 = if spec.lambda1_free() {
        pick(options.lambda1_start, spec.mean_link())
    } else {
        spec.fixed_lambda1()
    };
    let l2 = if spec.lambda2_free() {
        pick(options.lambda2_start, spec.dispersion_link())
    } else {
        spec.fixed_lambda2()
    };
    initial_values_at(spec, y, l1, l2)
}

fn initial_values_at(spec: &ModelSpec, y: &ResponseVector, l1: f64, l2: f64) -> Result<ParamVector> {
    if y.len() != spec.n() {
        return Err(Error::Dimension(format!(
            "response has {} entries, design has {} rows",
            y.len(),
            spec.n()
        )));
    }
    let mean_link = spec.mean_link();
    let g1 = y
        .values()
        .iter()
        .map(|&v| mean_link.link(v.clamp(0.005, 0.995), l1))
        .collect::<Result<Vec<_>>>()?;
    let beta = least_squares(spec.x(), &DVector::from_vec(g1))?;

    let n = y.len() as f64;
    let mean = y.mean();
    let var = y.values().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let s_hat = (var / (mean * (1.0 - mean))).sqrt().clamp(1e-3, 0.9);
    let g2 = spec.dispersion_link().link(s_hat, l2)?;
    let gamma = least_squares(spec.z(), &DVector::from_element(spec.n(), g2))?;

    Ok(ParamVector {
        beta,
        gamma,
        lambda1: l1,
        lambda2: l2,
    })
}

/// Fits the model, retrying from the λ grid if the first start fails.
pub fn fit(spec: &ModelSpec, y: &ResponseVector, options: &FitOptions) -> Result<FittedModel> {
    fit_restricted(spec, y, options, &[])
}

/// Fits the model with some free parameters held at given values.
pub fn fit_restricted(
    spec: &ModelSpec,
    y: &ResponseVector,
    options: &FitOptions,
    pins: &[(ParamId, f64)],
) -> Result<FittedModel> {
    if y.len() != spec.n() {
        return Err(Error::Dimension(format!(
            "response has {} entries, design has {} rows",
            y.len(),
            spec.n()
        )));
    }
    spec.check_identifiable()?;
    if !(options.gradient_tolerance > 0.0) {
        return Err(Error::InvalidInput("gradient tolerance must be positive".into()));
    }
    let ids = spec.param_ids();
    for &(id, value) in pins {
        if !ids.contains(&id) {
            return Err(Error::InvalidInput(format!("{id} is not a free parameter")));
        }
        match id {
            ParamId::Lambda1 => spec.mean_link().check_lambda(value)?,
            ParamId::Lambda2 => spec.dispersion_link().check_lambda(value)?,
            _ => {}
        }
    }

    let pinned_l1 = pins.iter().find(|p| p.0 == ParamId::Lambda1).map(|p| p.1);
    let pinned_l2 = pins.iter().find(|p| p.0 == ParamId::Lambda2).map(|p| p.1);
    let l1_searchable = spec.lambda1_free() && pinned_l1.is_none();
    let l2_searchable = spec.lambda2_free() && pinned_l2.is_none();

    let first = |free: bool, pinned: Option<f64>, start: LambdaStart, family: LinkFamily, fixed: f64| {
        if !free {
            return Some(pinned.unwrap_or(fixed));
        }
        match start {
            LambdaStart::Default => Some(default_start(family)),
            LambdaStart::Explicit(v) => Some(v),
            LambdaStart::Grid => None,
        }
    };
    let l1_first = first(
        l1_searchable,
        pinned_l1,
        options.lambda1_start,
        spec.mean_link(),
        spec.fixed_lambda1(),
    );
    let l2_first = first(
        l2_searchable,
        pinned_l2,
        options.lambda2_start,
        spec.dispersion_link(),
        spec.fixed_lambda2(),
    );

    let grid = |searchable: bool, first: Option<f64>, custom: &Option<Vec<f64>>, family: LinkFamily| {
        if searchable {
            custom.clone().unwrap_or_else(|| default_grid(family))
        } else {
            vec![first.unwrap_or(1.0)]
        }
    };
    let grid1 = grid(l1_searchable, l1_first, &options.lambda1_grid, spec.mean_link());
    let grid2 = grid(l2_searchable, l2_first, &options.lambda2_grid, spec.dispersion_link());

    let mut best_failure: Option<FitTrace> = None;
    let mut note_failure = |trace: FitTrace| {
        if best_failure
            .as_ref()
            .is_none_or(|b| trace.best_loglik() > b.best_loglik())
        {
            best_failure = Some(trace);
        }
    };

    let primary = l1_first.zip(l2_first);
    if let Some((l1, l2)) = primary {
        match run_start(spec, y, options, pins, l1, l2, false) {
            Ok(fitted) => return Ok(fitted),
            Err(trace) => note_failure(trace),
        }
        if !options.multistart {
            return Err(Error::NonConvergence {
                trace: Box::new(best_failure.expect("failed start leaves a trace")),
            });
        }
    }

    let mut best: Option<FittedModel> = None;
    for &l1 in &grid1 {
        for &l2 in &grid2 {
            if primary == Some((l1, l2)) {
                continue;
            }
            match run_start(spec, y, options, pins, l1, l2, primary.is_some()) {
                Ok(fitted) => {
                    if best.as_ref().is_none_or(|b| fitted.loglik > b.loglik) {
                        best = Some(fitted);
                    }
                }
                Err(trace) => note_failure(trace),
            }
        }
    }
    best.ok_or_else(|| Error::NonConvergence {
        trace: Box::new(best_failure.unwrap_or(FitTrace {
            lambda1_start: f64::NAN,
            lambda2_start: f64::NAN,
            converged: false,
            entries: Vec::new(),
        })),
    })
}

/// Fits with both link parameters fixed at every grid cell.
pub fn profile_lambda(
    spec: &ModelSpec,
    y: &ResponseVector,
    options: &FitOptions,
    grid: &[(f64, f64)],
) -> Result<Vec<ProfileCell>> {
    let mut cells = grid
        .par_iter()
        .map(|&(l1, l2)| {
            let fixed = spec
                .clone()
                .with_lambda_modes(LambdaMode::Fixed(l1), LambdaMode::Fixed(l2))?;
            let loglik = fit(&fixed, y, options).ok().map(|f| f.loglik);
            Ok(ProfileCell {
                lambda1: l1,
                lambda2: l2,
                loglik,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    cells.sort_by(|a, b| {
        let key = |c: &ProfileCell| c.loglik.unwrap_or(f64::NEG_INFINITY);
        key(b).total_cmp(&key(a))
    });
    Ok(cells)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileCell {
    pub lambda1: f64,
    pub lambda2: f64,
    /// `None` when the fixed-λ fit did not converge.
    pub loglik: Option<f64>,
}

struct Likelihood<'a> {
    spec: &'a ModelSpec,
    y: &'a ResponseVector,
    /// Free-vector positions the optimizer moves.
    active: Vec<usize>,
    /// Active positions optimized on the log scale.
    log_scale: Vec<bool>,
    base: DVector<f64>,
    tolerance: f64,
}

impl Likelihood<'_> {
    fn free_vector(&self, u: &DVector<f64>) -> DVector<f64> {
        let mut full = self.base.clone();
        for (k, &i) in self.active.iter().enumerate() {
            full[i] = if self.log_scale[k] { u[k].exp() } else { u[k] };
        }
        full
    }

    fn theta(&self, u: &DVector<f64>) -> Option<ParamVector> {
        for (k, &log) in self.log_scale.iter().enumerate() {
            if log {
                let lambda = u[k].exp();
                if !(lambda >= ASYMMETRIC_LAMBDA_BAND.0 && lambda <= ASYMMETRIC_LAMBDA_BAND.1) {
                    return None;
                }
            }
        }
        Some(self.spec.unpack(&self.free_vector(u)))
    }

    /// Factors turning a θ-scale derivative into an optimizer-scale one.
    fn jacobian(&self, u: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            u.len(),
            self.log_scale
                .iter()
                .enumerate()
                .map(|(k, &log)| if log { u[k].exp() } else { 1.0 }),
        )
    }

    fn to_u(&self, theta: &ParamVector) -> DVector<f64> {
        let full = self.spec.pack(theta);
        DVector::from_iterator(
            self.active.len(),
            self.active
                .iter()
                .zip(&self.log_scale)
                .map(|(&i, &log)| if log { full[i].ln() } else { full[i] }),
        )
    }
}

impl bfgs::Objective for Likelihood<'_> {
    fn eval(&self, u: &DVector<f64>) -> Option<(f64, DVector<f64>)> {
        let theta = self.theta(u)?;
        let (ll, score) = self.spec.loglik_and_score(&theta, self.y).ok()?;
        if !ll.is_finite() || score.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let jac = self.jacobian(u);
        let grad = DVector::from_iterator(
            self.active.len(),
            self.active.iter().enumerate().map(|(k, &i)| -score[i] * jac[k]),
        );
        Some((-ll, grad))
    }

    fn inverse_hessian(&self, u: &DVector<f64>) -> Option<DMatrix<f64>> {
        let theta = self.theta(u)?;
        let k = self.spec.fisher_information(&theta).ok()?;
        let mut sub = submatrix(&k, &self.active);
        let jac = self.jacobian(u);
        for i in 0..sub.nrows() {
            for j in 0..sub.ncols() {
                sub[(i, j)] *= jac[i] * jac[j];
            }
        }
        spd_inverse(&sub)
    }

    fn converged(&self, u: &DVector<f64>, grad: &DVector<f64>) -> bool {
        let jac = self.jacobian(u);
        let n = self.spec.n() as f64;
        grad.iter()
            .zip(jac.iter())
            .all(|(g, j)| (g / j).abs() / n <= self.tolerance)
    }

    /// Two ways the likelihood can rise forever: an asymmetric `λ` shrinking
    /// toward the cloglog limit, and a single observation fitted exactly while
    /// its `σ_t` is driven to zero (reachable at finite `η` under the bounded
    /// symmetric link). The search stops at either edge instead of creeping.
    fn stalled(&self, u: &DVector<f64>, grad: &DVector<f64>) -> bool {
        let lambda_edge = self
            .log_scale
            .iter()
            .zip(u.iter().zip(grad.iter()))
            .any(|(&log, (&v, &g))| log && v < BOUNDARY_LAMBDA.ln() && g > 0.0);
        lambda_edge
            || self.theta(u).is_some_and(|theta| {
                self.spec
                    .states(&theta)
                    .is_ok_and(|st| st.iter().any(|s| s.sigma < DEGENERATE_SIGMA))
            })
    }
}

/// Asymmetric `λ` below this with the score pushing it lower is treated as
/// the cloglog boundary.
const BOUNDARY_LAMBDA: f64 = 1e-6;
/// A fitted `σ_t` below this marks a degenerate spike of the likelihood.
const DEGENERATE_SIGMA: f64 = 1e-8;

/// Runs BFGS from the initial values at `(l1, l2)`; a failed start returns
/// its trace.
fn run_start(
    spec: &ModelSpec,
    y: &ResponseVector,
    options: &FitOptions,
    pins: &[(ParamId, f64)],
    l1: f64,
    l2: f64,
    multistart: bool,
) -> std::result::Result<FittedModel, FitTrace> {
    let failed = |entries: Vec<TraceEntry>| FitTrace {
        lambda1_start: l1,
        lambda2_start: l2,
        converged: false,
        entries,
    };

    let ids = spec.param_ids();
    let Ok(mut theta0) = initial_values_at(spec, y, l1, l2) else {
        return Err(failed(Vec::new()));
    };
    for &(id, v) in pins {
        theta0.set(id, v);
    }
    // Least-squares starts can leave a bounded link's domain; shrink the
    // unpinned coefficients toward zero until the start is admissible.
    let is_pinned = |id: ParamId| pins.iter().any(|p| p.0 == id);
    let mut admissible = false;
    for _ in 0..60 {
        if spec
            .log_likelihood(&theta0, y)
            .is_ok_and(|ll| ll.is_finite())
        {
            admissible = true;
            break;
        }
        for i in 0..spec.r() {
            if !is_pinned(ParamId::Beta(i)) {
                theta0.beta[i] *= 0.5;
            }
        }
        for j in 0..spec.s() {
            if !is_pinned(ParamId::Gamma(j)) {
                theta0.gamma[j] *= 0.5;
            }
        }
    }
    if !admissible {
        return Err(failed(Vec::new()));
    }

    let active: Vec<usize> = ids
        .iter()
        .enumerate()
        .filter(|(_, id)| !is_pinned(**id))
        .map(|(i, _)| i)
        .collect();
    let log_scale = active
        .iter()
        .map(|&i| match ids[i] {
            ParamId::Lambda1 => spec.mean_link() == LinkFamily::AoAsymmetric,
            ParamId::Lambda2 => spec.dispersion_link() == LinkFamily::AoAsymmetric,
            _ => false,
        })
        .collect();
    let objective = Likelihood {
        spec,
        y,
        active,
        log_scale,
        base: spec.pack(&theta0),
        tolerance: options.gradient_tolerance,
    };
    let u0 = objective.to_u(&theta0);

    let Some(outcome) = bfgs::minimize(&objective, u0, options.max_iterations) else {
        return Err(failed(Vec::new()));
    };
    let entries: Vec<TraceEntry> = outcome
        .steps
        .iter()
        .enumerate()
        .map(|(iteration, s)| TraceEntry {
            iteration,
            loglik: -s.value,
            max_abs_gradient: s.grad_norm,
        })
        .collect();
    if !outcome.converged {
        return Err(failed(entries));
    }

    let Some(mut theta) = objective.theta(&outcome.x) else {
        return Err(failed(entries));
    };
    if spec.mean_link() == LinkFamily::AoSymmetric && spec.lambda1_free() {
        theta.lambda1 = theta.lambda1.abs();
    }
    if spec.dispersion_link() == LinkFamily::AoSymmetric && spec.lambda2_free() {
        theta.lambda2 = theta.lambda2.abs();
    }
    let trace = FitTrace {
        lambda1_start: l1,
        lambda2_start: l2,
        converged: true,
        entries,
    };
    let start = StartRecord {
        lambda1: l1,
        lambda2: l2,
        multistart,
    };
    assemble(spec, y, theta, pins, outcome.iterations, start, trace).map_err(|_| FitTrace {
        converged: false,
        ..failed(Vec::new())
    })
}

fn assemble(
    spec: &ModelSpec,
    y: &ResponseVector,
    theta: ParamVector,
    pins: &[(ParamId, f64)],
    iterations: usize,
    start_used: StartRecord,
    trace: FitTrace,
) -> Result<FittedModel> {
    let states = spec.states(&theta)?;
    let (loglik, score) = spec.loglik_and_score(&theta, y)?;
    let fisher = spec.fisher_information(&theta)?;
    let (cov, fisher_singular) = match spd_inverse(&fisher) {
        Some(c) => (c, false),
        None => (pseudo_inverse(&fisher), true),
    };
    let surfaces = spec.surfaces(&theta)?;
    debug_assert_eq!(states.len(), surfaces.mu.len());
    Ok(FittedModel {
        spec: spec.clone(),
        theta_hat: theta,
        loglik,
        score,
        fisher,
        cov,
        fisher_singular,
        surfaces,
        converged: true,
        iterations,
        start_used,
        pinned: pins.to_vec(),
        trace,
    })
}
