//! Main-terms logistic regression fit by Newton-Raphson (IRLS).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Matrix;
use crate::error::{Error, Result};

const MAX_ITER: usize = 50;
const LOGLIK_TOL: f64 = 1e-8;
/// Ridge on the slopes; keeps separated problems finite. The intercept is free,
/// so the intercept score equation (mean fitted = prevalence) still holds.
const SLOPE_RIDGE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub intercept: f64,
    pub coef: Vec<f64>,
    pub iterations: usize,
}

fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

fn log1pexp(eta: f64) -> f64 {
    if eta > 0.0 {
        eta + (-eta).exp().ln_1p()
    } else {
        eta.exp().ln_1p()
    }
}

impl LogisticModel {
    /// Returns the model and whether the fit looks (quasi-)separated.
    pub(super) fn fit(x: &Matrix, y: &[f64]) -> Result<(Self, bool)> {
        if y.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::data("logistic regression needs a 0/1 outcome"));
        }
        let n = x.nrows();
        let d = x.ncols() + 1;
        let design = DMatrix::from_fn(n, d, |i, j| if j == 0 { 1.0 } else { x.get(i, j - 1) });
        let yv = DVector::from_column_slice(y);
        let mut beta = DVector::<f64>::zeros(d);
        let objective = |b: &DVector<f64>| -> f64 {
            let eta = &design * b;
            let ll: f64 = eta.iter().zip(yv.iter()).map(|(e, yi)| yi * e - log1pexp(*e)).sum();
            ll - 0.5 * SLOPE_RIDGE * b.rows(1, d - 1).norm_squared()
        };
        let mut current = objective(&beta);
        let mut iterations = 0;
        for it in 1..=MAX_ITER {
            iterations = it;
            let eta = &design * &beta;
            let prob: Vec<f64> = eta.iter().map(|&e| sigmoid(e)).collect();
            let mut grad = design.transpose() * DVector::from_iterator(n, prob.iter().zip(y).map(|(p, yi)| yi - p));
            let mut hess = DMatrix::<f64>::zeros(d, d);
            for i in 0..n {
                let w = (prob[i] * (1.0 - prob[i])).max(1e-12);
                let row = design.row(i);
                hess.ger(w, &row.transpose(), &row.transpose(), 1.0);
            }
            for j in 1..d {
                hess[(j, j)] += SLOPE_RIDGE;
                grad[j] -= SLOPE_RIDGE * beta[j];
            }
            let Some(chol) = hess.cholesky() else {
                return Err(Error::Numerical("logistic Hessian is not positive definite".into()));
            };
            let step = chol.solve(&grad);
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..40 {
                let cand = &beta + &step * t;
                let val = objective(&cand);
                if val.is_finite() && val >= current - 1e-12 * current.abs() {
                    beta = cand;
                    let change = (val - current).abs();
                    current = val;
                    accepted = true;
                    if change < LOGLIK_TOL {
                        return Ok(Self::finish(&beta, iterations));
                    }
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        Ok(Self::finish(&beta, iterations))
    }

    fn finish(beta: &DVector<f64>, iterations: usize) -> (Self, bool) {
        let separated = beta.iter().skip(1).any(|b| b.abs() > 15.0);
        (
            Self { intercept: beta[0], coef: beta.iter().skip(1).copied().collect(), iterations },
            separated,
        )
    }

    pub fn probability(&self, row: &[f64]) -> f64 {
        sigmoid(self.intercept + row.iter().zip(&self.coef).map(|(a, b)| a * b).sum::<f64>())
    }
}
