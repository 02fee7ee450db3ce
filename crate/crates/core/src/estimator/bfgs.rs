//! BFGS minimization with a backtracking Armijo line search.
//!
//! Points where the objective is undefined are reported as `None` and the
//! line search simply shortens the step. The caller supplies the starting
//! inverse Hessian and the stopping rule.
//!
//! Near the optimum the possible decrease can fall below the rounding noise
//! of the objective while the gradient is still above tolerance. A trial
//! point whose value is within that noise is then accepted when it reduces
//! the largest gradient component.

use nalgebra::{DMatrix, DVector};

const ARMIJO_C1: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 40;
/// Relative size of objective changes treated as rounding noise.
const NOISE: f64 = 1e-11;
const MAX_STEP: f64 = 10.0;

pub(crate) trait Objective {
    /// Value and gradient of the function being minimized.
    fn eval(&self, x: &DVector<f64>) -> Option<(f64, DVector<f64>)>;
    /// A good inverse-Hessian approximation at `x`, used at the start and
    /// after a failed line search.
    fn inverse_hessian(&self, x: &DVector<f64>) -> Option<DMatrix<f64>>;
    fn converged(&self, x: &DVector<f64>, grad: &DVector<f64>) -> bool;
    /// True when `x` is as good as the search can get without converging,
    /// e.g. a supremum approached at the edge of the domain.
    fn stalled(&self, _x: &DVector<f64>, _grad: &DVector<f64>) -> bool {
        false
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Step {
    pub value: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct Outcome {
    pub x: DVector<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub steps: Vec<Step>,
}

pub(crate) fn minimize<O: Objective>(
    objective: &O,
    x0: DVector<f64>,
    max_iterations: usize,
) -> Option<Outcome> {
    let mut x = x0;
    let (mut f, mut g) = objective.eval(&x)?;
    let m = x.len();
    let fresh_h = |x: &DVector<f64>| {
        objective
            .inverse_hessian(x)
            .unwrap_or_else(|| DMatrix::identity(m, m))
    };
    let mut h = fresh_h(&x);
    let mut h_is_fresh = true;
    let mut steps = vec![Step {
        value: f,
        grad_norm: g.amax(),
    }];

    for iteration in 0..max_iterations {
        if objective.converged(&x, &g) {
            return Some(Outcome {
                x,
                converged: true,
                iterations: iteration,
                steps,
            });
        }
        if objective.stalled(&x, &g) {
            return Some(Outcome {
                x,
                converged: false,
                iterations: iteration,
                steps,
            });
        }

        let mut d = -(&h * &g);
        let mut slope = g.dot(&d);
        if !(slope < 0.0) {
            h = fresh_h(&x);
            h_is_fresh = true;
            d = -(&h * &g);
            slope = g.dot(&d);
            if !(slope < 0.0) {
                d = -g.clone();
                slope = g.dot(&d);
            }
        }
        let longest = d.amax();
        if longest > MAX_STEP {
            let scale = MAX_STEP / longest;
            d *= scale;
            slope *= scale;
        }

        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let trial = &x + alpha * &d;
            if let Some((ft, gt)) = objective.eval(&trial) {
                let sufficient = ft < f && ft <= f + ARMIJO_C1 * alpha * slope;
                let within_noise = (ft - f).abs() <= NOISE * (1.0 + f.abs()) && gt.amax() < g.amax();
                if ft.is_finite() && (sufficient || within_noise) {
                    accepted = Some((trial, ft, gt));
                    break;
                }
            }
            alpha *= 0.5;
        }

        let Some((x_new, f_new, g_new)) = accepted else {
            if h_is_fresh {
                return Some(Outcome {
                    x,
                    converged: false,
                    iterations: iteration,
                    steps,
                });
            }
            h = fresh_h(&x);
            h_is_fresh = true;
            continue;
        };

        let s = &x_new - &x;
        let yv = &g_new - &g;
        let sy = s.dot(&yv);
        if sy > 1e-12 * s.norm() * yv.norm() {
            let hy = &h * &yv;
            let yhy = yv.dot(&hy);
            let rho = 1.0 / sy;
            // H⁺ = H + (sy + y'Hy)/(sy)² ss' - (Hy s' + s y'H)/sy
            h += (rho * rho * (sy + yhy)) * (&s * s.transpose());
            h -= rho * (&hy * s.transpose() + &s * hy.transpose());
        }
        h_is_fresh = false;
        x = x_new;
        f = f_new;
        g = g_new;
        steps.push(Step {
            value: f,
            grad_norm: g.amax(),
        });
    }

    let converged = objective.converged(&x, &g);
    Some(Outcome {
        x,
        converged,
        iterations: max_iterations,
        steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Rosenbrock;

    impl Objective for Rosenbrock {
        fn eval(&self, x: &DVector<f64>) -> Option<(f64, DVector<f64>)> {
            let (a, b) = (x[0], x[1]);
            let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = DVector::from_vec(vec![
                -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
                200.0 * (b - a * a),
            ]);
            Some((f, g))
        }

        fn inverse_hessian(&self, _: &DVector<f64>) -> Option<DMatrix<f64>> {
            None
        }

        fn converged(&self, _: &DVector<f64>, grad: &DVector<f64>) -> bool {
            grad.amax() < 1e-10
        }
    }

    #[test]
    fn minimizes_rosenbrock() {
        let out = minimize(&Rosenbrock, DVector::from_vec(vec![-1.2, 1.0]), 1000).unwrap();
        assert!(out.converged);
        assert!((out.x[0] - 1.0).abs() < 1e-8 && (out.x[1] - 1.0).abs() < 1e-8);
        assert!(out
            .steps
            .windows(2)
            .all(|w| w[1].value <= w[0].value + NOISE * (1.0 + w[0].value.abs())));
    }

    /// Quadratic that is undefined for x[0] > 1, minimum at the boundary side.
    struct Walled;

    impl Objective for Walled {
        fn eval(&self, x: &DVector<f64>) -> Option<(f64, DVector<f64>)> {
            if x[0] > 1.0 {
                return None;
            }
            let f = (x[0] - 0.9).powi(2) + x[1] * x[1];
            Some((f, DVector::from_vec(vec![2.0 * (x[0] - 0.9), 2.0 * x[1]])))
        }

        fn inverse_hessian(&self, _: &DVector<f64>) -> Option<DMatrix<f64>> {
            Some(DMatrix::identity(2, 2) * 10.0)
        }

        fn converged(&self, _: &DVector<f64>, grad: &DVector<f64>) -> bool {
            grad.amax() < 1e-9
        }
    }

    #[test]
    fn undefined_region_is_backed_out_of() {
        let out = minimize(&Walled, DVector::from_vec(vec![-3.0, 2.0]), 200).unwrap();
        assert!(out.converged);
        assert!((out.x[0] - 0.9).abs() < 1e-9);
    }
}
