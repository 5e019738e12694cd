//! TOML run configuration.
//!
//! One file format serves every subcommand. Sections that a command does not
//! use are ignored; unknown keys are rejected.
//!
//! ```toml
//! seed = 2024
//!
//! [scenario]          # simulate / ate
//! regime = "high"
//! n_train = 250       # simulate (`n` for ate)
//! replications = 200
//!
//! [fit]               # fit
//! loss = "huber_nested_cv"
//! ensemble = "convex"
//! folds = 10
//!
//! [lambda_grid]
//! count = 29
//!
//! [[learners]]
//! name = "ols"
//! kind = "ols"
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lambda::LambdaGrid;
use crate::learners::Registry;
use crate::meta::{EnsembleMode, MetaSolveOptions};
use crate::simulation::{
    prediction_registry, AteExperimentConfig, CovariateSpec, EstimatorSpec, GridSpec, LossChoice, OutlierRegime,
    PredictionExperimentConfig, TweedieScenario, ZeroLink, DEFAULT_GRID_COUNT,
};
use crate::super_learner::{SuperLearnerConfig, Variant, DEFAULT_FOLDS};
use crate::tmle::Fluctuation;

pub const DEFAULT_SEED: u64 = 1;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<ScenarioSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_grid: Option<GridSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learners: Option<Registry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<MetaSolveOptions>,
}

/// Data-generating process and replication settings.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    pub name: Option<String>,
    pub regime: Option<OutlierRegime>,
    pub n_train: Option<usize>,
    pub n_test: Option<usize>,
    /// Sample size of the ATE experiment.
    pub n: Option<usize>,
    pub replications: Option<usize>,
    pub folds: Option<usize>,
    pub inner_folds: Option<usize>,
    pub lambda_stability: Option<bool>,
    pub zero_link: Option<ZeroLink>,
    pub cap: Option<f64>,
    pub x8_sd: Option<f64>,
    pub estimators: Option<Vec<EstimatorSpec>>,
    pub ensemble: Option<EnsembleMode>,
    pub tweedie: Option<TweedieScenario>,
    pub true_ate_draws: Option<usize>,
    pub fluctuation: Option<Fluctuation>,
    pub cross_fit_outcome: Option<bool>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossName {
    #[default]
    Standard,
    HuberFixed,
    HuberPartialCv,
    HuberNestedCv,
}

/// Settings of a single super learner fit.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSection {
    #[serde(default)]
    pub loss: LossName,
    /// Required by `huber_fixed`.
    pub lambda: Option<f64>,
    #[serde(default)]
    pub ensemble: EnsembleMode,
    pub folds: Option<usize>,
    pub inner_folds: Option<usize>,
}

impl FitSection {
    pub fn estimator(&self) -> Result<EstimatorSpec> {
        let loss = match (self.loss, self.lambda) {
            (LossName::Standard, _) => LossChoice::Standard,
            (LossName::HuberFixed, Some(lambda)) => LossChoice::HuberFixed { lambda },
            (LossName::HuberFixed, None) => return Err(Error::config("[fit] loss = \"huber_fixed\" needs lambda")),
            (LossName::HuberPartialCv, _) => LossChoice::HuberPartialCv,
            (LossName::HuberNestedCv, _) => LossChoice::HuberNestedCv,
        };
        Ok(EstimatorSpec::new(loss, self.ensemble))
    }
}

fn need<T>(v: Option<T>, key: &str) -> Result<T> {
    v.ok_or_else(|| Error::config(format!("missing [scenario] {key}")))
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn seed_or_default(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_SEED)
    }

    fn scenario(&self) -> Result<&ScenarioSection> {
        self.scenario.as_ref().ok_or_else(|| Error::config("missing [scenario] section"))
    }

    fn covariates(s: &ScenarioSection) -> CovariateSpec {
        s.x8_sd.map_or_else(CovariateSpec::default, |x8_sd| CovariateSpec { x8_sd })
    }

    pub fn prediction_experiment(&self) -> Result<PredictionExperimentConfig> {
        let s = self.scenario()?;
        let mut c = PredictionExperimentConfig::new(need(s.regime, "regime")?, need(s.n_train, "n_train")?, self.seed_or_default());
        c.name = s.name.clone();
        c.n_test = s.n_test.unwrap_or(c.n_test);
        c.replications = s.replications.unwrap_or(c.replications);
        c.folds = s.folds.unwrap_or(c.folds);
        c.inner_folds = s.inner_folds.unwrap_or(c.inner_folds);
        c.lambda_stability = s.lambda_stability.unwrap_or(false);
        c.zero_link = s.zero_link.unwrap_or_default();
        c.cap = s.cap.unwrap_or(c.cap);
        c.covariates = Self::covariates(s);
        if let Some(e) = &s.estimators {
            c.estimators = e.clone();
        }
        if let Some(g) = &self.lambda_grid {
            c.grid = g.clone();
        }
        if let Some(l) = &self.learners {
            c.learners = l.clone();
        }
        if let Some(m) = &self.meta {
            c.meta = m.clone();
        }
        c.validate()?;
        Ok(c)
    }

    pub fn ate_experiment(&self) -> Result<AteExperimentConfig> {
        let s = self.scenario()?;
        let mut c = AteExperimentConfig::new(need(s.regime, "regime")?, need(s.n, "n")?, self.seed_or_default());
        c.name = s.name.clone();
        c.tweedie = s.tweedie.clone();
        c.replications = s.replications.unwrap_or(c.replications);
        c.folds = s.folds.unwrap_or(c.folds);
        c.inner_folds = s.inner_folds.unwrap_or(c.inner_folds);
        c.ensemble = s.ensemble.unwrap_or_default();
        c.true_ate_draws = s.true_ate_draws.unwrap_or(c.true_ate_draws);
        c.fluctuation = s.fluctuation.unwrap_or_default();
        c.cross_fit_outcome = s.cross_fit_outcome.unwrap_or(c.cross_fit_outcome);
        c.covariates = Self::covariates(s);
        if let Some(g) = &self.lambda_grid {
            c.grid = g.clone();
        }
        if let Some(l) = &self.learners {
            c.learners = l.clone();
        }
        if let Some(m) = &self.meta {
            c.meta = m.clone();
        }
        c.validate()?;
        Ok(c)
    }

    /// Super learner configuration for a training outcome `y`; the λ grid is
    /// resolved against `y`.
    pub fn super_learner(&self, y: &[f64]) -> Result<SuperLearnerConfig> {
        let fit = self.fit.clone().unwrap_or_default();
        let grid: LambdaGrid =
            self.lambda_grid.clone().unwrap_or_else(|| GridSpec::data_range(DEFAULT_GRID_COUNT)).resolve(y)?;
        let variant: Variant = fit.estimator()?.resolve(&grid, fit.inner_folds.unwrap_or(DEFAULT_FOLDS));
        let learners = self.learners.clone().unwrap_or_else(prediction_registry);
        let mut c = SuperLearnerConfig::new(learners, variant, self.seed_or_default());
        c.folds = fit.folds.unwrap_or(DEFAULT_FOLDS);
        if let Some(m) = &self.meta {
            c.meta = m.clone();
        }
        c.validate()?;
        Ok(c)
    }
}
