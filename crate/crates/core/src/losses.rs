//! Huber and squared-error losses and their empirical risks.
//!
//! The Huber loss carries the `1/2` factor on its quadratic branch; the squared
//! error loss does not. Risks are sample means so they are comparable across
//! folds of different sizes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Robustification parameter: the residual magnitude where the Huber loss turns linear.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct HuberParam(f64);

impl HuberParam {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::domain(format!("Huber lambda must be positive and finite, got {lambda}")));
        }
        Ok(Self(lambda))
    }

    pub fn lambda(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for HuberParam {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        Self::new(v)
    }
}

impl From<HuberParam> for f64 {
    fn from(p: HuberParam) -> f64 {
        p.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Squared,
    Huber(HuberParam),
}

impl LossKind {
    pub fn huber(lambda: f64) -> Result<Self> {
        Ok(LossKind::Huber(HuberParam::new(lambda)?))
    }

    /// Loss at residual `r`, without the finiteness check.
    #[inline]
    pub(crate) fn value_unchecked(self, r: f64) -> f64 {
        match self {
            LossKind::Squared => r * r,
            LossKind::Huber(p) => {
                let lambda = p.0;
                let a = r.abs();
                if a <= lambda {
                    0.5 * r * r
                } else {
                    lambda * (a - 0.5 * lambda)
                }
            }
        }
    }

    /// Derivative of the loss with respect to the residual.
    #[inline]
    pub(crate) fn derivative_unchecked(self, r: f64) -> f64 {
        match self {
            LossKind::Squared => 2.0 * r,
            LossKind::Huber(p) => r.clamp(-p.0, p.0),
        }
    }

    pub fn value(self, r: f64) -> Result<f64> {
        check_finite(r)?;
        Ok(self.value_unchecked(r))
    }
}

fn check_finite(r: f64) -> Result<()> {
    if r.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("non-finite residual {r}")))
    }
}

/// `½r²` for `|r| ≤ λ`, `λ(|r| − ½λ)` otherwise.
pub fn huber_loss(residual: f64, param: HuberParam) -> Result<f64> {
    LossKind::Huber(param).value(residual)
}

/// Derivative of [`huber_loss`]: the residual clipped to `[-λ, λ]`.
pub fn huber_psi(residual: f64, param: HuberParam) -> Result<f64> {
    check_finite(residual)?;
    Ok(LossKind::Huber(param).derivative_unchecked(residual))
}

pub fn empirical_risk(predictions: &[f64], outcomes: &[f64], loss: LossKind) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::data("empirical risk of an empty sample"));
    }
    if predictions.len() != outcomes.len() {
        return Err(Error::dim(format!(
            "{} predictions for {} outcomes",
            predictions.len(),
            outcomes.len()
        )));
    }
    let mut total = 0.0;
    for (&p, &y) in predictions.iter().zip(outcomes) {
        total += loss.value(y - p)?;
    }
    Ok(total / predictions.len() as f64)
}
