//! Logit-link variable-dispersion beta regression written without the
//! library: plain logistic inverse links, libm's lgamma, and Newton's method
//! on finite-difference derivatives.

use nalgebra::{DMatrix, DVector};

pub struct LogitBeta<'a> {
    pub x: &'a DMatrix<f64>,
    pub z: &'a DMatrix<f64>,
    pub y: &'a [f64],
}

fn logistic(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

impl LogitBeta<'_> {
    pub fn loglik(&self, theta: &DVector<f64>) -> f64 {
        let r = self.x.ncols();
        let beta = theta.rows(0, r);
        let gamma = theta.rows(r, theta.len() - r);
        let mut total = 0.0;
        for t in 0..self.y.len() {
            let mu = logistic((self.x.row(t) * beta)[(0, 0)]);
            let sigma = logistic((self.z.row(t) * gamma)[(0, 0)]);
            let phi = (1.0 - sigma * sigma) / (sigma * sigma);
            let (p, q) = (mu * phi, (1.0 - mu) * phi);
            let y = self.y[t];
            total += libm::lgamma(phi) - libm::lgamma(p) - libm::lgamma(q)
                + (p - 1.0) * y.ln()
                + (q - 1.0) * (1.0 - y).ln();
        }
        total
    }

    fn gradient(&self, theta: &DVector<f64>) -> DVector<f64> {
        let h = 1e-6;
        DVector::from_iterator(
            theta.len(),
            (0..theta.len()).map(|k| {
                let mut a = theta.clone();
                let mut b = theta.clone();
                a[k] += h;
                b[k] -= h;
                (self.loglik(&a) - self.loglik(&b)) / (2.0 * h)
            }),
        )
    }

    fn hessian(&self, theta: &DVector<f64>) -> DMatrix<f64> {
        let m = theta.len();
        let h = 1e-4;
        let mut out = DMatrix::zeros(m, m);
        for k in 0..m {
            let mut a = theta.clone();
            let mut b = theta.clone();
            a[k] += h;
            b[k] -= h;
            out.set_column(k, &((self.gradient(&a) - self.gradient(&b)) / (2.0 * h)));
        }
        (&out + out.transpose()) / 2.0
    }

    /// Damped Newton ascent from a crude start.
    pub fn maximize(&self) -> DVector<f64> {
        let (r, s) = (self.x.ncols(), self.z.ncols());
        let mut theta = DVector::zeros(r + s);
        theta[r] = -1.0;
        for _ in 0..200 {
            let g = self.gradient(&theta);
            if g.amax() < 1e-9 {
                break;
            }
            let step = match (-self.hessian(&theta)).cholesky() {
                Some(c) => c.solve(&g),
                None => g.clone() * 1e-3,
            };
            let f0 = self.loglik(&theta);
            let mut alpha = 1.0;
            while alpha > 1e-10 {
                let trial = &theta + alpha * &step;
                if self.loglik(&trial) > f0 - 1e-12 {
                    theta = trial;
                    break;
                }
                alpha /= 2.0;
            }
        }
        theta
    }
}
