//! Targeted maximum likelihood estimation of the average treatment effect.
//!
//! The treatment is the first feature column of the outcome regression; the
//! propensity model uses the remaining columns.

use serde::{Deserialize, Serialize};

use crate::cross_validation::FoldPlan;
use crate::data::{Dataset, Matrix};
use crate::error::{Error, Result};
use crate::learners::{self, FittedLearner, LearnerKind, LearnerSpec};
use crate::meta::SimplexWeights;
use crate::super_learner::{base_predictions, combine_predictions, predict_super_learner, SharedFits, SuperLearnerModel};

pub const PROPENSITY_BOUNDS: (f64, f64) = (0.01, 0.99);

/// Anything that predicts `E[Y | A, X]` from `[A, X]` rows.
pub trait OutcomeRegression {
    fn predict_outcome(&self, x: &Matrix) -> Result<Vec<f64>>;
}

impl OutcomeRegression for SuperLearnerModel {
    fn predict_outcome(&self, x: &Matrix) -> Result<Vec<f64>> {
        predict_super_learner(self, x)
    }
}

impl OutcomeRegression for FittedLearner {
    fn predict_outcome(&self, x: &Matrix) -> Result<Vec<f64>> {
        self.predict(x)
    }
}

/// Cross-validated initial fit: row `i` is predicted by the fold fits that did
/// not train on it, combined with the ensemble weights. Inputs must keep the
/// row order of the training data.
#[derive(Debug, Clone, Copy)]
pub struct CrossFittedOutcome<'a> {
    plan: &'a FoldPlan,
    fold_fits: &'a [Vec<FittedLearner>],
    weights: &'a SimplexWeights,
}

impl<'a> CrossFittedOutcome<'a> {
    pub fn new(shared: &'a SharedFits, model: &'a SuperLearnerModel) -> Result<Self> {
        let fold_fits = shared
            .fold_fits
            .as_deref()
            .ok_or_else(|| Error::config("cross-fitted outcome regression needs the fold fits"))?;
        Ok(Self { plan: &shared.level_one.fold_plan, fold_fits, weights: &model.weights })
    }
}

impl OutcomeRegression for CrossFittedOutcome<'_> {
    fn predict_outcome(&self, x: &Matrix) -> Result<Vec<f64>> {
        if x.nrows() != self.plan.n() {
            return Err(Error::dim(format!("cross-fitted predictions need {} rows, got {}", self.plan.n(), x.nrows())));
        }
        let mut out = vec![0.0; x.nrows()];
        for (v, fits) in self.fold_fits.iter().enumerate() {
            let (_, valid) = self.plan.split(v);
            let base = base_predictions(fits, &x.select_rows(&valid))?;
            for (&i, p) in valid.iter().zip(combine_predictions(self.weights, &base)?) {
                out[i] = p;
            }
        }
        Ok(out)
    }
}

impl<F: Fn(&[f64]) -> f64> OutcomeRegression for F {
    fn predict_outcome(&self, x: &Matrix) -> Result<Vec<f64>> {
        Ok(x.rows().map(self).collect())
    }
}

/// Main-terms logistic propensity score, clipped at use.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityModel {
    fit: Option<FittedLearner>,
    constant: f64,
    n_features: usize,
    pub bounds: (f64, f64),
}

impl PropensityModel {
    /// `ĝ ≡ p`.
    pub fn constant(p: f64, n_features: usize) -> Result<Self> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::domain("constant propensity must lie in (0, 1)"));
        }
        Ok(Self { fit: None, constant: p, n_features, bounds: PROPENSITY_BOUNDS })
    }

    /// Fit notes, e.g. separation.
    pub fn notes(&self) -> &[String] {
        self.fit.as_ref().map_or(&[], |f| &f.notes)
    }

    pub fn coefficients(&self) -> Option<(f64, &[f64])> {
        self.fit.as_ref().and_then(FittedLearner::linear_coefficients)
    }

    /// Unclipped probabilities.
    pub fn predict_raw(&self, x: &Matrix) -> Result<Vec<f64>> {
        if x.ncols() != self.n_features {
            return Err(Error::dim(format!("propensity model expects {} covariates, got {}", self.n_features, x.ncols())));
        }
        match &self.fit {
            Some(f) => f.predict(x),
            None => Ok(vec![self.constant; x.nrows()]),
        }
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        let (lo, hi) = self.bounds;
        Ok(self.predict_raw(x)?.into_iter().map(|g| g.clamp(lo, hi)).collect())
    }
}

fn check_binary(a: &[f64]) -> Result<()> {
    if a.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::data("treatment must be coded 0/1"));
    }
    let treated = a.iter().filter(|&&v| v == 1.0).count();
    if treated == 0 || treated == a.len() {
        return Err(Error::data("both treatment arms must be nonempty"));
    }
    Ok(())
}

pub fn fit_propensity(x_adjust: &Matrix, a: &[f64], seed: u64) -> Result<PropensityModel> {
    check_binary(a)?;
    let spec = LearnerSpec::new("propensity", LearnerKind::LogisticGlm);
    let fit = learners::fit(&spec, x_adjust, a, seed)?;
    Ok(PropensityModel { fit: Some(fit), constant: f64::NAN, n_features: x_adjust.ncols(), bounds: PROPENSITY_BOUNDS })
}

/// Fluctuation submodel of the targeting step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fluctuation {
    /// `Q* = Q̂ + εH`, ε by least squares.
    #[default]
    Linear,
    /// `Q* = expit(logit Q̂ + εH)` on the outcome rescaled to `[0, 1]`.
    Logistic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TmleDiagnostics {
    pub propensity_range: (f64, f64),
    pub clever_covariate_range: (f64, f64),
    /// `Σ H_i (y_i − Q*(A_i, X_i))` after targeting.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AteEstimate {
    pub label: String,
    pub estimate: f64,
    /// Fluctuation coefficient (TMLE only).
    pub epsilon: Option<f64>,
    pub diagnostics: Option<TmleDiagnostics>,
}

/// `mean(y | a = 1) − mean(y | a = 0)`.
pub fn unadjusted_ate(y: &[f64], a: &[f64]) -> Result<AteEstimate> {
    if y.len() != a.len() {
        return Err(Error::dim("outcome and treatment lengths differ"));
    }
    check_binary(a)?;
    let (mut s1, mut n1, mut s0, mut n0) = (0.0, 0usize, 0.0, 0usize);
    for (yi, ai) in y.iter().zip(a) {
        if *ai == 1.0 {
            s1 += yi;
            n1 += 1;
        } else {
            s0 += yi;
            n0 += 1;
        }
    }
    Ok(AteEstimate {
        label: "unadjusted".into(),
        estimate: s1 / n1 as f64 - s0 / n0 as f64,
        epsilon: None,
        diagnostics: None,
    })
}

/// Neumaier-compensated sum.
fn exact_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for v in values {
        let t = sum + v;
        c += if sum.abs() >= v.abs() { (sum - t) + v } else { (v - t) + sum };
        sum = t;
    }
    sum + c
}

fn range(v: &[f64]) -> (f64, f64) {
    v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(*x), hi.max(*x)))
}

fn expit(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Targeted estimate of `E[Q(1, X) − Q(0, X)]` with the linear fluctuation.
pub fn tmle_ate(data: &Dataset, outcome: &impl OutcomeRegression, propensity: &PropensityModel) -> Result<AteEstimate> {
    tmle_ate_with(data, outcome, propensity, Fluctuation::Linear)
}

pub fn tmle_ate_with(
    data: &Dataset,
    outcome: &impl OutcomeRegression,
    propensity: &PropensityModel,
    fluctuation: Fluctuation,
) -> Result<AteEstimate> {
    let a = data.treatment.as_deref().ok_or_else(|| Error::data("dataset has no treatment column"))?;
    check_binary(a)?;
    if data.x.column(0) != a {
        return Err(Error::data("the treatment must be the first feature column"));
    }
    let n = data.n();
    let adjust: Vec<usize> = (1..data.p()).collect();
    let g = propensity.predict(&data.x.select_columns(&adjust))?;
    let q_obs = outcome.predict_outcome(&data.x)?;
    let q1 = outcome.predict_outcome(&data.x.with_column_value(0, 1.0))?;
    let q0 = outcome.predict_outcome(&data.x.with_column_value(0, 0.0))?;
    if q_obs.iter().chain(&q1).chain(&q0).any(|v| !v.is_finite()) {
        return Err(Error::Numerical("outcome regression returned non-finite values".into()));
    }
    let h: Vec<f64> = (0..n).map(|i| a[i] / g[i] - (1.0 - a[i]) / (1.0 - g[i])).collect();
    let h1: Vec<f64> = g.iter().map(|gi| 1.0 / gi).collect();
    let h0: Vec<f64> = g.iter().map(|gi| -1.0 / (1.0 - gi)).collect();

    let (epsilon, star_obs, star1, star0) = match fluctuation {
        Fluctuation::Linear => {
            let num = exact_sum((0..n).map(|i| h[i] * (data.y[i] - q_obs[i])));
            let den = exact_sum(h.iter().map(|v| v * v));
            if den <= 0.0 {
                return Err(Error::Numerical("clever covariate is identically zero".into()));
            }
            let eps = num / den;
            let shift = |q: &[f64], hh: &[f64]| -> Vec<f64> { q.iter().zip(hh).map(|(q, h)| q + eps * h).collect() };
            (eps, shift(&q_obs, &h), shift(&q1, &h1), shift(&q0, &h0))
        }
        Fluctuation::Logistic => logistic_fluctuation(&data.y, &q_obs, &q1, &q0, &h, &h1, &h0)?,
    };
    let estimate = exact_sum((0..n).map(|i| star1[i] - star0[i])) / n as f64;
    let score = exact_sum((0..n).map(|i| h[i] * (data.y[i] - star_obs[i])));
    Ok(AteEstimate {
        label: "tmle".into(),
        estimate,
        epsilon: Some(epsilon),
        diagnostics: Some(TmleDiagnostics {
            propensity_range: range(&g),
            clever_covariate_range: range(&h),
            score,
        }),
    })
}

type Targeted = (f64, Vec<f64>, Vec<f64>, Vec<f64>);

/// One-dimensional logistic fluctuation solved by Newton's method on the
/// outcome rescaled to `[0, 1]` by the sample range.
fn logistic_fluctuation(y: &[f64], q: &[f64], q1: &[f64], q0: &[f64], h: &[f64], h1: &[f64], h0: &[f64]) -> Result<Targeted> {
    let (lo, hi) = range(y);
    let width = hi - lo;
    if width <= 0.0 {
        let same = |v: &[f64]| v.to_vec();
        return Ok((0.0, same(q), same(q1), same(q0)));
    }
    let bound = 1e-6;
    let scale = |v: f64| ((v - lo) / width).clamp(bound, 1.0 - bound);
    let ys: Vec<f64> = y.iter().map(|v| (v - lo) / width).collect();
    let off: Vec<f64> = q.iter().map(|v| logit(scale(*v))).collect();
    let mut eps = 0.0;
    for _ in 0..100 {
        let mut grad = 0.0;
        let mut hess = 0.0;
        for i in 0..y.len() {
            let p = expit(off[i] + eps * h[i]);
            grad += h[i] * (ys[i] - p);
            hess += h[i] * h[i] * p * (1.0 - p);
        }
        if hess <= 0.0 {
            break;
        }
        let step = grad / hess;
        eps += step;
        if step.abs() < 1e-12 * (1.0 + eps.abs()) {
            break;
        }
    }
    if !eps.is_finite() {
        return Err(Error::Numerical("logistic fluctuation diverged".into()));
    }
    let back = |qv: &[f64], hv: &[f64]| -> Vec<f64> {
        qv.iter().zip(hv).map(|(q, h)| lo + width * expit(logit(scale(*q)) + eps * h)).collect()
    };
    Ok((eps, back(q, h), back(q1, h1), back(q0, h0)))
}
