//! Prediction metrics and agreement of selected λ across paired splits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Test-set error summaries of one estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub mse: f64,
    pub mae: f64,
    pub r2: f64,
}

/// Scores plus ratios against a reference estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mse: f64,
    pub relative_mse: f64,
    pub mae: f64,
    pub r2: f64,
    /// `R²(this) / R²(reference)`.
    pub re: f64,
}

impl MetricsReport {
    pub fn relative_to(scores: Scores, reference: Scores) -> Self {
        Self {
            mse: scores.mse,
            relative_mse: scores.mse / reference.mse,
            mae: scores.mae,
            r2: scores.r2,
            re: scores.r2 / reference.r2,
        }
    }
}

/// MSE, MAE and `R² = 1 − SSE/SST`.
pub fn score(y_true: &[f64], y_pred: &[f64]) -> Result<Scores> {
    if y_true.len() != y_pred.len() {
        return Err(Error::dim(format!("{} outcomes but {} predictions", y_true.len(), y_pred.len())));
    }
    if y_true.is_empty() {
        return Err(Error::dim("cannot score an empty sample"));
    }
    let n = y_true.len() as f64;
    let mean = y_true.iter().sum::<f64>() / n;
    let mut sse = 0.0;
    let mut sae = 0.0;
    let mut sst = 0.0;
    for (t, p) in y_true.iter().zip(y_pred) {
        sse += (t - p) * (t - p);
        sae += (t - p).abs();
        sst += (t - mean) * (t - mean);
    }
    if sst == 0.0 {
        return Err(Error::domain("R² is undefined for a constant outcome"));
    }
    Ok(Scores { mse: sse / n, mae: sae / n, r2: 1.0 - sse / sst })
}

/// One-way random-effects ICC(1,1) of paired `log10(λ)` values.
pub fn icc(lambda_a: &[f64], lambda_b: &[f64]) -> Result<f64> {
    if lambda_a.len() != lambda_b.len() {
        return Err(Error::dim("ICC needs paired vectors of equal length"));
    }
    if lambda_a.len() < 2 {
        return Err(Error::domain("ICC needs at least two pairs"));
    }
    if lambda_a.iter().chain(lambda_b).any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::domain("λ values must be positive and finite"));
    }
    let pairs: Vec<(f64, f64)> = lambda_a.iter().zip(lambda_b).map(|(a, b)| (a.log10(), b.log10())).collect();
    let n = pairs.len() as f64;
    let grand = pairs.iter().map(|(a, b)| a + b).sum::<f64>() / (2.0 * n);
    let mut ss_between = 0.0;
    let mut ss_within = 0.0;
    for (a, b) in &pairs {
        let m = 0.5 * (a + b);
        ss_between += 2.0 * (m - grand).powi(2);
        ss_within += (a - m).powi(2) + (b - m).powi(2);
    }
    let ms_between = ss_between / (n - 1.0);
    let ms_within = ss_within / n;
    if ms_between + ms_within == 0.0 {
        return Err(Error::domain("ICC is undefined with zero total variance"));
    }
    Ok((ms_between - ms_within) / (ms_between + ms_within))
}

/// Fraction of pairs selecting the same grid index.
pub fn lambda_accuracy(index_a: &[usize], index_b: &[usize]) -> Result<f64> {
    if index_a.len() != index_b.len() || index_a.is_empty() {
        return Err(Error::dim("accuracy needs nonempty paired index vectors"));
    }
    Ok(index_a.iter().zip(index_b).filter(|(a, b)| a == b).count() as f64 / index_a.len() as f64)
}
