//! Linear least-squares learners: OLS, ridge and lasso.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{mean, Matrix};
use crate::error::{Error, Result};

/// Lasso coordinate-descent stopping rule on the largest coefficient change.
const LASSO_TOL: f64 = 1e-7;
const LASSO_MAX_SWEEPS: usize = 10_000;
const LASSO_GRID: usize = 50;
const LASSO_MIN_RATIO: f64 = 1e-4;
const LASSO_CV_FOLDS: usize = 5;
const OLS_FALLBACK_RIDGE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub intercept: f64,
    pub coef: Vec<f64>,
}

impl LinearModel {
    #[inline]
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.intercept + row.iter().zip(&self.coef).map(|(a, b)| a * b).sum::<f64>()
    }
}

fn column_means(x: &Matrix) -> Vec<f64> {
    let mut m = vec![0.0; x.ncols()];
    for r in x.rows() {
        for (a, v) in m.iter_mut().zip(r) {
            *a += v;
        }
    }
    let n = x.nrows() as f64;
    m.iter_mut().for_each(|a| *a /= n);
    m
}

fn centered(x: &Matrix, means: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x.get(i, j) - means[j])
}

fn solve_centered(x: &Matrix, y: &[f64], penalty: f64) -> Result<Option<LinearModel>> {
    let means = column_means(x);
    let ybar = mean(y);
    let xc = centered(x, &means);
    let yc = DVector::from_iterator(y.len(), y.iter().map(|v| v - ybar));
    let mut gram = xc.transpose() * &xc;
    for j in 0..gram.ncols() {
        gram[(j, j)] += penalty;
    }
    let rhs = xc.transpose() * yc;
    let Some(chol) = gram.cholesky() else {
        return Ok(None);
    };
    let beta = chol.solve(&rhs);
    if beta.iter().any(|b| !b.is_finite()) {
        return Ok(None);
    }
    let coef: Vec<f64> = beta.iter().copied().collect();
    let intercept = ybar - coef.iter().zip(&means).map(|(b, m)| b * m).sum::<f64>();
    Ok(Some(LinearModel { intercept, coef }))
}

/// Ordinary least squares with intercept. Returns `(model, fell_back_to_ridge)`.
pub(super) fn ols(x: &Matrix, y: &[f64]) -> Result<(LinearModel, bool)> {
    let p = x.ncols();
    if p == 0 {
        return Ok((LinearModel { intercept: mean(y), coef: vec![] }, false));
    }
    let means = column_means(x);
    let xc = centered(x, &means);
    let ybar = mean(y);
    let yc = DVector::from_iterator(y.len(), y.iter().map(|v| v - ybar));
    if x.nrows() > p {
        let qr = xc.qr();
        let r = qr.r();
        let diag: Vec<f64> = (0..p).map(|j| r[(j, j)].abs()).collect();
        let top = diag.iter().copied().fold(0.0, f64::max);
        // Rank check on the R factor of the centered design.
        let singular = top == 0.0 || diag.iter().any(|&d| d <= 1e-10 * top);
        if !singular {
            if let Some(beta) = r.solve_upper_triangular(&(qr.q().transpose() * &yc)) {
                let coef: Vec<f64> = beta.iter().copied().collect();
                let intercept = ybar - coef.iter().zip(&means).map(|(b, m)| b * m).sum::<f64>();
                return Ok((LinearModel { intercept, coef }, false));
            }
        }
    }
    Ok((ridge(x, y, OLS_FALLBACK_RIDGE)?, true))
}

/// Minimizes `||y - b0 - X b||^2 + penalty * ||b||^2` with an unpenalized intercept.
pub(super) fn ridge(x: &Matrix, y: &[f64], penalty: f64) -> Result<LinearModel> {
    if x.ncols() == 0 {
        return Ok(LinearModel { intercept: mean(y), coef: vec![] });
    }
    // A zero penalty on a rank-deficient design needs a nudge to stay solvable.
    for pen in [penalty, penalty.max(OLS_FALLBACK_RIDGE), 1e-6] {
        if let Some(m) = solve_centered(x, y, pen)? {
            return Ok(m);
        }
    }
    Err(Error::Numerical("ridge normal equations are not positive definite".into()))
}

/// Lasso solution at one penalty, on both the standardized and original scales.
#[derive(Debug, Clone)]
pub struct LassoFit {
    pub model: LinearModel,
    pub penalty: f64,
    pub sweeps: usize,
}

/// Sufficient statistics of a standardized design: Gram matrix and `X'y / n`.
struct Standardized {
    means: Vec<f64>,
    scales: Vec<f64>,
    ybar: f64,
    gram: Vec<f64>,
    xty: Vec<f64>,
    p: usize,
}

impl Standardized {
    fn new(x: &Matrix, y: &[f64]) -> Self {
        let n = x.nrows() as f64;
        let p = x.ncols();
        let means = column_means(x);
        let mut scales = vec![0.0; p];
        for r in x.rows() {
            for j in 0..p {
                let d = r[j] - means[j];
                scales[j] += d * d;
            }
        }
        for s in scales.iter_mut() {
            *s = (*s / n).sqrt();
        }
        let ybar = mean(y);
        let mut gram = vec![0.0; p * p];
        let mut xty = vec![0.0; p];
        let mut z = vec![0.0; p];
        for (r, &yi) in x.rows().zip(y) {
            for j in 0..p {
                z[j] = if scales[j] > 0.0 { (r[j] - means[j]) / scales[j] } else { 0.0 };
            }
            let yc = yi - ybar;
            for j in 0..p {
                xty[j] += z[j] * yc;
                let zj = z[j];
                let row = &mut gram[j * p..(j + 1) * p];
                for (g, zk) in row.iter_mut().zip(&z) {
                    *g += zj * zk;
                }
            }
        }
        gram.iter_mut().for_each(|g| *g /= n);
        xty.iter_mut().for_each(|c| *c /= n);
        Self { means, scales, ybar, gram, xty, p }
    }

    fn lambda_max(&self) -> f64 {
        self.xty.iter().fold(0.0, |m, c| m.max(c.abs()))
    }

    /// Cyclic coordinate descent with covariance updates, warm-started from `beta`.
    fn descend(&self, penalty: f64, beta: &mut [f64]) -> usize {
        let p = self.p;
        // grad[j] = xty[j] - sum_k gram[j,k] beta[k]
        let mut grad = self.xty.clone();
        for k in 0..p {
            if beta[k] != 0.0 {
                for j in 0..p {
                    grad[j] -= self.gram[j * p + k] * beta[k];
                }
            }
        }
        for sweep in 1..=LASSO_MAX_SWEEPS {
            let mut max_delta: f64 = 0.0;
            for j in 0..p {
                let gjj = self.gram[j * p + j];
                if gjj <= 0.0 {
                    continue;
                }
                let old = beta[j];
                let rho = grad[j] + gjj * old;
                let new = soft_threshold(rho, penalty) / gjj;
                let delta = new - old;
                if delta != 0.0 {
                    beta[j] = new;
                    for k in 0..p {
                        grad[k] -= self.gram[k * p + j] * delta;
                    }
                    max_delta = max_delta.max(delta.abs());
                }
            }
            if max_delta < LASSO_TOL {
                return sweep;
            }
        }
        LASSO_MAX_SWEEPS
    }

    fn to_model(&self, beta: &[f64]) -> LinearModel {
        let coef: Vec<f64> = beta
            .iter()
            .zip(&self.scales)
            .map(|(b, s)| if *s > 0.0 { b / s } else { 0.0 })
            .collect();
        let intercept = self.ybar - coef.iter().zip(&self.means).map(|(b, m)| b * m).sum::<f64>();
        LinearModel { intercept, coef }
    }
}

#[inline]
fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// Minimizes `(1/2n)||y - b0 - Z b||^2 + penalty * ||b||_1` over standardized columns `Z`.
pub fn lasso_fit(x: &Matrix, y: &[f64], penalty: f64) -> Result<LassoFit> {
    let st = Standardized::new(x, y);
    let mut beta = vec![0.0; st.p];
    let sweeps = st.descend(penalty, &mut beta);
    Ok(LassoFit { model: st.to_model(&beta), penalty, sweeps })
}

fn penalty_grid(lmax: f64) -> Vec<f64> {
    if lmax <= 0.0 {
        return vec![0.0];
    }
    let lo = (lmax * LASSO_MIN_RATIO).ln();
    let hi = lmax.ln();
    (0..LASSO_GRID)
        .map(|i| (hi + (lo - hi) * i as f64 / (LASSO_GRID - 1) as f64).exp())
        .collect()
}

/// Lasso with the penalty chosen by 5-fold CV over a 50-point log grid.
pub(super) fn lasso_cv(x: &Matrix, y: &[f64], seed: u64) -> Result<LassoFit> {
    let n = y.len();
    let full = Standardized::new(x, y);
    let grid = penalty_grid(full.lambda_max());
    let folds = LASSO_CV_FOLDS.min(n);
    if folds < 2 || grid.len() == 1 {
        return lasso_fit(x, y, grid[0]);
    }
    let plan = crate::cross_validation::make_folds(n, folds, seed)?;
    let mut cv_sse = vec![0.0; grid.len()];
    for v in 0..folds {
        let (train, valid) = plan.split(v);
        let st = Standardized::new(&x.select_rows(&train), &train.iter().map(|&i| y[i]).collect::<Vec<_>>());
        let mut beta = vec![0.0; st.p];
        for (g, &pen) in grid.iter().enumerate() {
            st.descend(pen, &mut beta);
            let m = st.to_model(&beta);
            cv_sse[g] += valid.iter().map(|&i| (y[i] - m.predict_row(x.row(i))).powi(2)).sum::<f64>();
        }
    }
    // First minimum along the decreasing grid keeps the larger penalty on ties.
    let best = (0..grid.len()).fold(0, |b, g| if cv_sse[g] < cv_sse[b] { g } else { b });
    let mut beta = vec![0.0; full.p];
    let mut sweeps = 0;
    for &pen in &grid[..=best] {
        sweeps = full.descend(pen, &mut beta);
    }
    Ok(LassoFit { model: full.to_model(&beta), penalty: grid[best], sweeps })
}
