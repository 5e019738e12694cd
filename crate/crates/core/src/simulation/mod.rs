//! Data-generating processes for the cost-prediction and treatment-effect studies,
//! plus the descriptive statistics used to calibrate them.

mod experiment;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, Gamma, Normal, Poisson, Uniform};
use serde::{Deserialize, Serialize};

use crate::data::Matrix;
use crate::error::{Error, Result};
use crate::seed;

pub use experiment::*;

/// Number of covariates drawn by [`gen_covariates`].
pub const N_COVARIATES: usize = 10;
/// Upper bound of simulated costs.
pub const COST_CAP: f64 = 1e6;

/// The ten-covariate generator. Only the reading of `Normal(0, 3)` is adjustable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovariateSpec {
    /// Standard deviation of `X8`.
    pub x8_sd: f64,
}

impl Default for CovariateSpec {
    fn default() -> Self {
        Self { x8_sd: 3.0 }
    }
}

impl CovariateSpec {
    /// Reads `Normal(0, 3)` as variance 3.
    pub fn variance_reading() -> Self {
        Self { x8_sd: 3f64.sqrt() }
    }

    pub fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> Result<Matrix> {
        if n == 0 {
            return Err(Error::domain("need n >= 1 covariate draws"));
        }
        let b05 = Bernoulli::new(0.5).expect("valid");
        let b02 = Bernoulli::new(0.2).expect("valid");
        let u01 = Uniform::new(0.0, 1.0).expect("valid");
        let u11 = Uniform::new(-1.0, 1.0).expect("valid");
        let n01 = Normal::new(0.0, 1.0).expect("valid");
        let n8 = Normal::new(0.0, self.x8_sd).map_err(|e| Error::domain(e.to_string()))?;
        let g11 = Gamma::new(1.0, 1.0).expect("valid");
        let g05 = Gamma::new(0.5, 1.0).expect("valid");
        let p1 = Poisson::new(1.0).expect("valid");
        let p2 = Poisson::new(2.0).expect("valid");
        let mut data = Vec::with_capacity(n * N_COVARIATES);
        for _ in 0..n {
            data.push(f64::from(u8::from(b05.sample(rng))));
            data.push(u01.sample(rng));
            data.push(n01.sample(rng));
            data.push(g11.sample(rng));
            data.push(p1.sample(rng));
            data.push(f64::from(u8::from(b02.sample(rng))));
            data.push(u11.sample(rng));
            data.push(n8.sample(rng));
            data.push(g05.sample(rng));
            data.push(p2.sample(rng));
        }
        Matrix::from_row_major(n, N_COVARIATES, data)
    }
}

/// `n x 10` covariate matrix, deterministic in `seed`.
pub fn gen_covariates(n: usize, seed: u64) -> Result<Matrix> {
    CovariateSpec::default().sample(n, &mut seed::rng(seed))
}

fn check_canonical(x: &Matrix) -> Result<()> {
    if x.ncols() != N_COVARIATES {
        return Err(Error::dim(format!("expected {N_COVARIATES} covariates, got {}", x.ncols())));
    }
    Ok(())
}

/// Gamma draw that treats a zero shape as a point mass at zero.
fn gamma_or_zero(shape: f64, scale: f64, rng: &mut ChaCha8Rng) -> f64 {
    if shape <= 0.0 {
        return 0.0;
    }
    Gamma::new(shape, scale).expect("positive parameters").sample(rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutlierRegime {
    Low,
    Medium,
    High,
}

impl OutlierRegime {
    pub fn label(self) -> &'static str {
        match self {
            OutlierRegime::Low => "low",
            OutlierRegime::Medium => "medium",
            OutlierRegime::High => "high",
        }
    }

    pub fn all() -> [OutlierRegime; 3] {
        [OutlierRegime::Low, OutlierRegime::Medium, OutlierRegime::High]
    }
}

/// Which event the zero-part logit describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeroLink {
    /// `logit P(cost > 0 | X) = μ_β(X)`: about 35% zeros.
    #[default]
    PositiveProbability,
    /// `logit P(cost = 0 | X) = μ_β(X)`: about 65% zeros.
    ZeroProbability,
}

/// Zero-inflated gamma cost model with regime-specific tail inflation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostScenario {
    pub regime: OutlierRegime,
    /// Sample size the tail rule is keyed on (250 versus larger).
    pub n: usize,
    #[serde(default)]
    pub zero_link: ZeroLink,
    #[serde(default = "default_cap")]
    pub cap: f64,
}

fn default_cap() -> f64 {
    COST_CAP
}

pub fn mu_beta(r: &[f64]) -> f64 {
    let (x1, x2, x3, x4, x5) = (r[0], r[1], r[2], r[3], r[4]);
    0.6 + 0.1 * (x1 + x2 - x3 + x4 - x5 + x1 * x2 - x2 * x3 + x3 * x4 - x4 * x5)
}

pub fn mu_k(r: &[f64]) -> f64 {
    let (x1, x2, x3, x4, x5) = (r[0], r[1], r[2], r[3], r[4]);
    x1 + x2 + x3 + x4 + x5 + x1 * x2 + x2 * x3 + x3 * x4 + x4 * x5
}

pub fn mu_alpha(r: &[f64]) -> f64 {
    let (x1, x2, x3, x4, x5) = (r[0], r[1], r[2], r[3], r[4]);
    x1 + x2 + x3 + x1 * x4 + x1 * x5 + x2 * x3 + x4 * x5
}

pub const GAMMA_SHAPE_FACTOR: f64 = 10.0;
pub const GAMMA_SCALE: f64 = 1.5;

impl CostScenario {
    pub fn new(regime: OutlierRegime, n: usize) -> Self {
        Self { regime, n, zero_link: ZeroLink::default(), cap: COST_CAP }
    }

    /// Multiplier `c` of the tail component `Γ(c·μ_k², 1.5)`; `None` for the low regime.
    pub fn tail_shape(&self) -> Option<f64> {
        let small = self.n <= 250;
        match self.regime {
            OutlierRegime::Low => None,
            OutlierRegime::Medium => Some(if small { 1.13 } else { 0.71 }),
            OutlierRegime::High => Some(if small { 38.0 } else { 2.9 }),
        }
    }

    /// `P(cost > 0 | x)`.
    pub fn positive_probability(&self, row: &[f64]) -> f64 {
        let p = 1.0 / (1.0 + (-mu_beta(row)).exp());
        match self.zero_link {
            ZeroLink::PositiveProbability => p,
            ZeroLink::ZeroProbability => 1.0 - p,
        }
    }
}

/// Costs before tail inflation and capping, together with the positive mask.
fn draw_base_costs(x: &Matrix, scenario: &CostScenario, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<bool>) {
    let n = x.nrows();
    let mut y = vec![0.0; n];
    let mut positive = vec![false; n];
    for i in 0..n {
        let row = x.row(i);
        let u: f64 = rng.random();
        let g = gamma_or_zero(GAMMA_SHAPE_FACTOR * mu_k(row).abs(), GAMMA_SCALE, rng);
        if u < scenario.positive_probability(row) {
            positive[i] = true;
            y[i] = g;
        }
    }
    (y, positive)
}

/// Zero-inflated costs: logistic zero part, gamma positive part, tail inflation
/// of observations above the sample upper quartile, then truncation at the cap.
pub fn gen_cost_two_stage(x: &Matrix, scenario: &CostScenario, seed: u64) -> Result<Vec<f64>> {
    check_canonical(x)?;
    if !(scenario.cap > 0.0) {
        return Err(Error::config("cost cap must be positive"));
    }
    let mut rng = seed::rng(seed);
    let (mut y, positive) = draw_base_costs(x, scenario, &mut rng);
    if let Some(c) = scenario.tail_shape() {
        let q3 = quantile(&y, 0.75)?;
        for i in 0..y.len() {
            if positive[i] && y[i] > q3 {
                let m = mu_k(x.row(i));
                y[i] += gamma_or_zero(c * m * m, GAMMA_SCALE, &mut rng);
            }
        }
    }
    for v in y.iter_mut() {
        *v = v.min(scenario.cap);
    }
    Ok(y)
}

/// Compound Poisson-gamma draw with mean `mu` and variance `phi * mu^p`.
pub fn sample_tweedie(mu: f64, p: f64, phi: f64, rng: &mut ChaCha8Rng) -> Result<f64> {
    if !(p > 1.0 && p < 2.0) {
        return Err(Error::domain(format!("Tweedie power must lie in (1, 2), got {p}")));
    }
    if !(phi > 0.0 && phi.is_finite()) {
        return Err(Error::domain(format!("dispersion must be positive, got {phi}")));
    }
    if !(mu >= 0.0 && mu.is_finite()) {
        return Err(Error::domain(format!("Tweedie mean must be finite and >= 0, got {mu}")));
    }
    if mu == 0.0 {
        return Ok(0.0);
    }
    let rate = mu.powf(2.0 - p) / (phi * (2.0 - p));
    let count = Poisson::new(rate).map_err(|e| Error::domain(e.to_string()))?.sample(rng);
    if count == 0.0 {
        return Ok(0.0);
    }
    let shape = count * (2.0 - p) / (p - 1.0);
    let scale = phi * (p - 1.0) * mu.powf(p - 1.0);
    Ok(gamma_or_zero(shape, scale, rng))
}

/// Mean function of a Tweedie scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum TweedieMean {
    /// `shift + |μ_α(X)|`
    ShiftedAbs { shift: f64 },
    /// `μ_α(X)²`
    Squared,
}

impl TweedieMean {
    pub fn eval(&self, row: &[f64]) -> f64 {
        let m = mu_alpha(row);
        match self {
            TweedieMean::ShiftedAbs { shift } => shift + m.abs(),
            TweedieMean::Squared => m * m,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TweedieScenario {
    pub mean: TweedieMean,
    pub power: f64,
    pub dispersion: f64,
    pub multiplier: f64,
}

impl TweedieScenario {
    pub fn preset(regime: OutlierRegime) -> Self {
        match regime {
            OutlierRegime::Low => Self {
                mean: TweedieMean::ShiftedAbs { shift: 15.0 },
                power: 1.5,
                dispersion: 5.0,
                multiplier: 9200.0,
            },
            OutlierRegime::Medium => Self { mean: TweedieMean::Squared, power: 1.5, dispersion: 1.9, multiplier: 1000.0 },
            OutlierRegime::High => Self { mean: TweedieMean::Squared, power: 1.932, dispersion: 10.0, multiplier: 1000.0 },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.power > 1.0 && self.power < 2.0) {
            return Err(Error::config("Tweedie power must lie in (1, 2)"));
        }
        if !(self.dispersion > 0.0 && self.multiplier > 0.0) {
            return Err(Error::config("dispersion and multiplier must be positive"));
        }
        Ok(())
    }

    /// `E[Y | X = row]`.
    pub fn conditional_mean(&self, row: &[f64]) -> f64 {
        self.multiplier * self.mean.eval(row)
    }
}

/// One Tweedie outcome per row, times the scenario multiplier.
pub fn gen_tweedie_outcome(x: &Matrix, scenario: &TweedieScenario, seed: u64) -> Result<Vec<f64>> {
    check_canonical(x)?;
    scenario.validate()?;
    let mut rng = seed::rng(seed);
    x.rows()
        .map(|r| Ok(scenario.multiplier * sample_tweedie(scenario.mean.eval(r), scenario.power, scenario.dispersion, &mut rng)?))
        .collect()
}

/// ATE of `X1` on the outcome, `E[E(Y | X1=1, X) − E(Y | X1=0, X)]`, averaged over
/// `draws` covariate vectors.
pub fn true_ate(scenario: &TweedieScenario, draws: usize, seed: u64) -> Result<f64> {
    true_ate_with(scenario, &CovariateSpec::default(), draws, seed)
}

pub fn true_ate_with(scenario: &TweedieScenario, covariates: &CovariateSpec, draws: usize, seed: u64) -> Result<f64> {
    let x = covariates.sample(draws, &mut seed::rng(seed))?;
    let mut sum = 0.0;
    let mut row = [0.0; N_COVARIATES];
    for r in x.rows() {
        row.copy_from_slice(r);
        row[0] = 1.0;
        let treated = scenario.conditional_mean(&row);
        row[0] = 0.0;
        sum += treated - scenario.conditional_mean(&row);
    }
    Ok(sum / draws as f64)
}

/// Linear-interpolation quantile between order statistics (`h = (n-1)p`).
pub fn quantile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::domain("quantile of an empty sample"));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::domain(format!("quantile level {p} outside [0, 1]")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(quantile_sorted(&sorted, p))
}

fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Share of observations strictly above `Q3 + 1.5 IQR`.
pub fn outlier_fraction(y: &[f64]) -> Result<f64> {
    if y.len() < 4 {
        return Err(Error::domain("outlier fraction needs at least four observations"));
    }
    let mut sorted = y.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q1 = quantile_sorted(&sorted, 0.25);
    let q3 = quantile_sorted(&sorted, 0.75);
    let threshold = q3 + 1.5 * (q3 - q1);
    Ok(y.iter().filter(|&&v| v > threshold).count() as f64 / y.len() as f64)
}

/// Fraction of exact zeros.
pub fn zero_fraction(y: &[f64]) -> f64 {
    y.iter().filter(|&&v| v == 0.0).count() as f64 / y.len().max(1) as f64
}

/// Sample skewness `m3 / m2^{3/2}` with population moments.
pub fn skewness(y: &[f64]) -> Result<f64> {
    if y.len() < 3 {
        return Err(Error::domain("skewness needs at least three observations"));
    }
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let m2 = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    if m2 == 0.0 {
        return Err(Error::domain("skewness of a constant sample"));
    }
    let m3 = y.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / n;
    Ok(m3 / m2.powf(1.5))
}

#[cfg(test)]
mod tests;
