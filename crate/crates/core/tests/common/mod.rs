#![allow(dead_code)]

pub mod logit_oracle;

use betalink::simulate::{sample_beta, stream_rng};
use betalink::{LinkFamily, ModelSpec, ParamVector, ResponseVector};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Intercept plus uniform(0, 1) columns.
pub fn uniform_design<R: Rng>(n: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(n, cols, |_, j| if j == 0 { 1.0 } else { rng.random::<f64>() })
}

/// Draws `y_t ~ Beta(μ_t, σ_t)` at `theta`.
pub fn draw_response<R: Rng>(spec: &ModelSpec, theta: &ParamVector, rng: &mut R) -> ResponseVector {
    let s = spec.surfaces(theta).unwrap();
    let y = (0..spec.n()).map(|t| sample_beta(s.mu[t], s.sigma[t], rng)).collect();
    ResponseVector::new(y).unwrap()
}

fn shape(family: LinkFamily, rng: &mut impl Rng) -> f64 {
    match family {
        LinkFamily::AoAsymmetric => 0.3 + 2.0 * rng.random::<f64>(),
        LinkFamily::AoSymmetric => 0.2 + 0.6 * rng.random::<f64>(),
        _ => 1.0,
    }
}

/// A random admissible model, parameter point and response. Coefficients
/// keep every `|λη/2|` well inside a symmetric link's domain.
pub fn random_instance(
    seed: u64,
    n: usize,
    mean: LinkFamily,
    dispersion: LinkFamily,
) -> (ModelSpec, ParamVector, ResponseVector) {
    let mut rng = stream_rng(seed, 0);
    let x = uniform_design(n, 3, &mut rng);
    let z = uniform_design(n, 2, &mut rng);
    let spec = ModelSpec::new(x, z, mean, dispersion).unwrap();
    let mut u = |lo: f64, hi: f64| lo + (hi - lo) * rng.random::<f64>();
    let beta = [u(-0.5, 0.5), u(-0.8, 0.8), u(-0.8, 0.8)];
    let gamma = [u(-1.6, -1.0), u(-0.5, 0.5)];
    let mut rng = stream_rng(seed, 1);
    let theta = ParamVector::new(&beta, &gamma, shape(mean, &mut rng), shape(dispersion, &mut rng));
    let y = draw_response(&spec, &theta, &mut rng);
    (spec, theta, y)
}

/// Central difference of the log-likelihood with one Richardson step.
pub fn fd_score(spec: &ModelSpec, theta: &ParamVector, y: &ResponseVector) -> DVector<f64> {
    let v = spec.pack(theta);
    let ll = |w: &DVector<f64>| spec.log_likelihood(&spec.unpack(w), y).unwrap();
    DVector::from_iterator(
        v.len(),
        (0..v.len()).map(|k| {
            let central = |h: f64| {
                let mut a = v.clone();
                let mut b = v.clone();
                a[k] += h;
                b[k] -= h;
                (ll(&a) - ll(&b)) / (2.0 * h)
            };
            let h = 1e-4 * v[k].abs().max(1.0);
            (4.0 * central(h / 2.0) - central(h)) / 3.0
        }),
    )
}

/// `max_k |a_k - b_k| / max(|b_k|, 1)`.
pub fn max_relative_error(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs() / y.abs().max(1.0))
        .fold(0.0, f64::max)
}
