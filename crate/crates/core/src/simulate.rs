//! Beta variate generation and the Monte Carlo harness for estimator
//! studies.
//!
//! Every random quantity comes from a ChaCha8 stream selected by
//! `(seed, stream)`: stream 0 draws the covariates, stream `i + 1` draws the
//! responses of replication `i`. Results therefore do not depend on how
//! replications are scheduled across threads.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{fit, FitOptions};
use crate::links::LinkFamily;
use crate::model::{ModelSpec, ParamVector, ResponseVector};

/// RNG for one `(seed, stream)` pair.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// `log X` for `X ~ Gamma(shape, 1)`, by Marsaglia–Tsang squeeze
/// acceptance carried out in log space so tiny shapes do not underflow.
pub fn sample_log_gamma<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    if shape < 1.0 {
        // Gamma(a) = Gamma(a + 1) · U^(1/a)
        let u: f64 = rng.random::<f64>();
        return sample_log_gamma(shape + 1.0, rng) + u.ln() / shape;
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x: f64 = rng.sample(StandardNormal);
        let t = 1.0 + c * x;
        if t <= 0.0 {
            continue;
        }
        let v = t * t * t;
        let u: f64 = rng.random::<f64>();
        if u.ln() < 0.5 * x * x + d - d * v + d * v.ln() {
            return d.ln() + v.ln();
        }
    }
}

/// One draw from the beta distribution with mean `mu` and dispersion
/// `sigma`. Draws that round to exactly 0 or 1 are redrawn.
pub fn sample_beta<R: Rng + ?Sized>(mu: f64, sigma: f64, rng: &mut R) -> f64 {
    let phi = (1.0 - sigma) * (1.0 + sigma) / (sigma * sigma);
    let (p, q) = (mu * phi, (1.0 - mu) * phi);
    loop {
        let log_ratio = sample_log_gamma(q, rng) - sample_log_gamma(p, rng);
        let y = 1.0 / (1.0 + log_ratio.exp());
        if y > 0.0 && y < 1.0 {
            return y;
        }
    }
}

/// A Monte Carlo design: true parameters, links and a fixed design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McScenario {
    pub mean_link: LinkFamily,
    pub dispersion_link: LinkFamily,
    pub theta: ParamVector,
    pub n: usize,
    pub replications: usize,
    pub seed: u64,
    pub x: DMatrix<f64>,
    pub z: DMatrix<f64>,
}

impl McScenario {
    /// Draws an intercept plus uniform(0, 1) covariates for both submodels
    /// from stream 0 and checks the truth is admissible on every row.
    pub fn new(
        mean_link: LinkFamily,
        dispersion_link: LinkFamily,
        theta: ParamVector,
        n: usize,
        replications: usize,
        seed: u64,
    ) -> Result<Self> {
        if theta.beta.is_empty() || theta.gamma.is_empty() {
            return Err(Error::InvalidInput("scenario needs at least an intercept in each submodel".into()));
        }
        if replications == 0 {
            return Err(Error::InvalidInput("scenario needs at least one replication".into()));
        }
        let mut rng = stream_rng(seed, 0);
        let mut design = |cols: usize| {
            let mut m = DMatrix::from_element(n, cols, 1.0);
            for t in 0..n {
                for j in 1..cols {
                    m[(t, j)] = rng.random::<f64>();
                }
            }
            m
        };
        let x = design(theta.beta.len());
        let z = design(theta.gamma.len());
        Self::with_design(mean_link, dispersion_link, theta, x, z, replications, seed)
    }

    /// A scenario on a caller-supplied design.
    pub fn with_design(
        mean_link: LinkFamily,
        dispersion_link: LinkFamily,
        theta: ParamVector,
        x: DMatrix<f64>,
        z: DMatrix<f64>,
        replications: usize,
        seed: u64,
    ) -> Result<Self> {
        let scenario = McScenario {
            mean_link,
            dispersion_link,
            theta,
            n: x.nrows(),
            replications,
            seed,
            x,
            z,
        };
        mean_link.check_lambda(scenario.theta.lambda1)?;
        dispersion_link.check_lambda(scenario.theta.lambda2)?;
        scenario.spec()?.states(&scenario.theta).map_err(|e| {
            Error::InvalidInput(format!("true parameters are inadmissible for the design: {e}"))
        })?;
        Ok(scenario)
    }

    /// The model fitted in every replication, with both λ's free.
    pub fn spec(&self) -> Result<ModelSpec> {
        ModelSpec::new(self.x.clone(), self.z.clone(), self.mean_link, self.dispersion_link)
    }

    /// True values in the fitted model's parameter layout.
    pub fn truth(&self) -> Result<DVector<f64>> {
        Ok(self.spec()?.pack(&self.theta))
    }
}

/// Responses of replication `index`.
pub fn simulate_dataset(scenario: &McScenario, index: usize) -> Result<ResponseVector> {
    let surfaces = scenario.spec()?.surfaces(&scenario.theta)?;
    simulate_response(&surfaces.mu, &surfaces.sigma, scenario.seed, index as u64 + 1)
}

/// Independent beta draws for the given `μ_t` and `σ_t` from one stream.
pub fn simulate_response(
    mu: &DVector<f64>,
    sigma: &DVector<f64>,
    seed: u64,
    stream: u64,
) -> Result<ResponseVector> {
    let mut rng = stream_rng(seed, stream);
    let y = mu
        .iter()
        .zip(sigma.iter())
        .map(|(&m, &s)| sample_beta(m, s, &mut rng))
        .collect();
    ResponseVector::new(y)
}

/// Moments of the estimates over the converged replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McSummary {
    pub names: Vec<String>,
    pub truth: Vec<f64>,
    pub mean: Vec<f64>,
    pub bias: Vec<f64>,
    /// `100·bias/truth`; NaN where the truth is zero.
    pub relative_bias: Vec<f64>,
    /// Sample SD with divisor `R - 1`; NaN when fewer than two fits converged.
    pub sd: Vec<f64>,
    pub mse: Vec<f64>,
    pub converged: usize,
    pub failed: usize,
}

impl McSummary {
    pub fn from_estimates(
        names: Vec<String>,
        truth: &DVector<f64>,
        estimates: &[DVector<f64>],
        failed: usize,
    ) -> Self {
        let k = truth.len();
        let r = estimates.len() as f64;
        let mut s = McSummary {
            names,
            truth: truth.iter().copied().collect(),
            mean: vec![f64::NAN; k],
            bias: vec![f64::NAN; k],
            relative_bias: vec![f64::NAN; k],
            sd: vec![f64::NAN; k],
            mse: vec![f64::NAN; k],
            converged: estimates.len(),
            failed,
        };
        if estimates.is_empty() {
            return s;
        }
        for i in 0..k {
            let mean = estimates.iter().map(|e| e[i]).sum::<f64>() / r;
            let ss = estimates.iter().map(|e| (e[i] - mean).powi(2)).sum::<f64>();
            s.mean[i] = mean;
            s.bias[i] = mean - truth[i];
            if truth[i] != 0.0 {
                s.relative_bias[i] = 100.0 * s.bias[i] / truth[i];
            }
            if estimates.len() > 1 {
                s.sd[i] = (ss / (r - 1.0)).sqrt();
            }
            s.mse[i] = estimates.iter().map(|e| (e[i] - truth[i]).powi(2)).sum::<f64>() / r;
        }
        s
    }

    /// SD is undefined with fewer than two converged replications.
    pub fn sd_undefined(&self) -> bool {
        self.converged < 2
    }

    pub fn non_convergence_rate(&self) -> f64 {
        self.failed as f64 / (self.converged + self.failed).max(1) as f64
    }
}

/// Fits every replication and summarizes the converged ones.
pub fn run_mc_study(scenario: &McScenario, options: &FitOptions) -> Result<McSummary> {
    let (estimates, failed) = run_replications(scenario, options, |fitted| Some(fitted.estimates()))?;
    let spec = scenario.spec()?;
    let names = spec.param_ids().iter().map(|id| id.to_string()).collect();
    Ok(McSummary::from_estimates(names, &scenario.truth()?, &estimates, failed))
}

/// Runs every replication in parallel and applies `extract` to each
/// converged fit. Returns the extracted values in replication order and the
/// number of failed fits; fails when more than half the fits failed.
pub fn run_replications<T, F>(
    scenario: &McScenario,
    options: &FitOptions,
    extract: F,
) -> Result<(Vec<T>, usize)>
where
    T: Send,
    F: Fn(&crate::estimator::FittedModel) -> Option<T> + Sync,
{
    let spec = scenario.spec()?;
    let results: Vec<Option<T>> = (0..scenario.replications)
        .into_par_iter()
        .map(|i| {
            let y = simulate_dataset(scenario, i).ok()?;
            let fitted = fit(&spec, &y, options).ok()?;
            extract(&fitted)
        })
        .collect();
    let total = results.len();
    let values: Vec<T> = results.into_iter().flatten().collect();
    let failed = total - values.len();
    if 2 * failed > total {
        return Err(Error::StudyFailed { failed, total });
    }
    Ok((values, failed))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn moments(draws: &[f64]) -> (f64, f64) {
        let n = draws.len() as f64;
        let mean = draws.iter().sum::<f64>() / n;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var)
    }

    fn ks_distance(draws: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
        draws.sort_by(f64::total_cmp);
        let n = draws.len() as f64;
        draws
            .iter()
            .enumerate()
            .map(|(i, &d)| {
                let f = cdf(d);
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn beta_moments_match() {
        let mut rng = stream_rng(11, 0);
        let draws: Vec<f64> = (0..1_000_000).map(|_| sample_beta(0.3, 0.5, &mut rng)).collect();
        let (mean, var) = moments(&draws);
        let true_var: f64 = 0.3 * 0.7 * 0.25;
        let se_mean = (true_var / 1e6).sqrt();
        assert!((mean - 0.3).abs() < 3.0 * se_mean, "mean {mean}");
        // fourth central moment of Beta(p, q) with p = 0.9, q = 2.1
        let (p, q) = (0.9f64, 2.1f64);
        let s = p + q;
        let m4 = 3.0 * p * q * (p * q * (s - 2.0) + 2.0 * s * s)
            / (s.powi(4) * (s + 1.0) * (s + 2.0) * (s + 3.0));
        let se_var = ((m4 - true_var * true_var) / 1e6).sqrt();
        assert!((var - true_var).abs() < 3.0 * se_var, "var {var}");
    }

    #[test]
    fn uniform_case_passes_ks() {
        let mut rng = stream_rng(5, 3);
        let sigma = (1.0f64 / 3.0).sqrt();
        let mut draws: Vec<f64> = (0..100_000).map(|_| sample_beta(0.5, sigma, &mut rng)).collect();
        assert!(ks_distance(&mut draws, |y| y) < 0.01);
    }

    #[test]
    fn arcsine_case_matches_closed_form_cdf() {
        let mut rng = stream_rng(6, 1);
        let sigma = 0.5f64.sqrt();
        let mut draws: Vec<f64> = (0..100_000).map(|_| sample_beta(0.5, sigma, &mut rng)).collect();
        let cdf = |y: f64| 2.0 / std::f64::consts::PI * y.sqrt().asin();
        assert!(ks_distance(&mut draws, cdf) < 0.01);
    }

    #[test]
    fn tiny_shapes_stay_inside_the_unit_interval() {
        let mut rng = stream_rng(1, 1);
        for _ in 0..10_000 {
            let y = sample_beta(0.01, 0.99, &mut rng);
            assert!(y > 0.0 && y < 1.0);
        }
    }

    #[test]
    fn log_gamma_sampler_mean() {
        let mut rng = stream_rng(9, 2);
        for &a in &[0.05, 0.7, 3.0, 250.0] {
            let n = 200_000;
            let draws: Vec<f64> = (0..n).map(|_| sample_log_gamma(a, &mut rng).exp()).collect();
            let (mean, _) = moments(&draws);
            // Var = a
            assert!((mean - a).abs() < 4.0 * (a / n as f64).sqrt(), "a={a} mean={mean}");
        }
    }

    fn table1_scenario(n: usize, replications: usize) -> McScenario {
        McScenario::new(
            LinkFamily::AoSymmetric,
            LinkFamily::AoSymmetric,
            ParamVector::new(&[1.5, -1.0, -1.5], &[-1.7, 1.0, -2.0], 0.5, 0.5),
            n,
            replications,
            2024,
        )
        .unwrap()
    }

    #[test]
    fn scenario_design_is_intercept_plus_uniforms() {
        let s = table1_scenario(50, 1);
        assert!(s.x.column(0).iter().all(|&v| v == 1.0));
        assert!(s.x.columns(1, 2).iter().all(|&v| v > 0.0 && v < 1.0));
        assert_ne!(s.x.column(1), s.z.column(1));
        let surfaces = s.spec().unwrap().surfaces(&s.theta).unwrap();
        assert!(surfaces.mu.iter().chain(surfaces.sigma.iter()).all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn datasets_are_deterministic() {
        let s = table1_scenario(40, 2);
        assert_eq!(simulate_dataset(&s, 1).unwrap(), simulate_dataset(&s, 1).unwrap());
        assert_ne!(simulate_dataset(&s, 0).unwrap(), simulate_dataset(&s, 1).unwrap());
    }

    #[test]
    fn constant_scenario_reduces_to_iid_draws() {
        let theta = ParamVector::new(&[0.0], &[0.0], 1.0, 1.0);
        let x = DMatrix::from_element(5, 1, 1.0);
        let s = McScenario::with_design(LinkFamily::Logit, LinkFamily::Logit, theta, x.clone(), x, 1, 3).unwrap();
        let y = simulate_dataset(&s, 0).unwrap();
        let mut rng = stream_rng(3, 1);
        let iid: Vec<f64> = (0..5).map(|_| sample_beta(0.5, 0.5, &mut rng)).collect();
        assert_eq!(y.values().as_slice(), iid.as_slice());
    }

    #[test]
    fn summary_definitions_are_consistent() {
        let truth = DVector::from_vec(vec![1.0, 0.0]);
        let est = vec![
            DVector::from_vec(vec![1.1, 0.2]),
            DVector::from_vec(vec![0.8, -0.1]),
            DVector::from_vec(vec![1.3, 0.05]),
        ];
        let s = McSummary::from_estimates(vec!["a".into(), "b".into()], &truth, &est, 1);
        for i in 0..2 {
            let r = 3.0;
            let recomposed = s.bias[i].powi(2) + s.sd[i].powi(2) * (r - 1.0) / r;
            assert!((s.mse[i] - recomposed).abs() <= 1e-10 * s.mse[i]);
        }
        assert!((s.relative_bias[0] - 100.0 * s.bias[0]).abs() < 1e-12);
        assert!(s.relative_bias[1].is_nan());
        assert_eq!(s.failed, 1);
    }

    #[test]
    fn single_replication_flags_sd() {
        let truth = DVector::from_vec(vec![2.0]);
        let s = McSummary::from_estimates(vec!["a".into()], &truth, &[DVector::from_vec(vec![2.5])], 0);
        assert!(s.sd_undefined());
        assert!(s.sd[0].is_nan());
        assert_eq!(s.mean[0], 2.5);
    }
}
