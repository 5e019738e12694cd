//! Monte Carlo experiments: test-set accuracy of ensemble variants on the
//! zero-inflated cost model, and TMLE estimates of the ATE on Tweedie outcomes.
//!
//! Replication `r` draws everything from `derive(seed, [tag("replication"), r])`,
//! so a replication's result does not depend on how many others run or in what
//! order. Aggregation walks replications by index.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    gen_cost_two_stage, gen_tweedie_outcome, outlier_fraction, skewness, true_ate_with, zero_fraction, CostScenario,
    CovariateSpec, OutlierRegime, TweedieScenario, ZeroLink, COST_CAP,
};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::lambda::{GridSpacing, LambdaGrid, GRID_FLOOR};
use crate::learners::{LearnerKind, LearnerSpec, Registry};
use crate::meta::{EnsembleMode, MetaSolveOptions};
use crate::metrics::{icc, lambda_accuracy, score, Scores};
use crate::report::Report;
use crate::seed;
use crate::super_learner::{
    base_predictions, combine_predictions, fit_shared, fit_variant, inner_folds_of, LossMode, SharedFits, Variant,
    DEFAULT_FOLDS,
};
use crate::tmle::{fit_propensity, tmle_ate_with, unadjusted_ate, AteEstimate, CrossFittedOutcome, Fluctuation};

pub const DEFAULT_REPLICATIONS: usize = 200;
pub const DEFAULT_TEST_SIZE: usize = 5000;
pub const DEFAULT_GRID_COUNT: usize = 29;
pub const DEFAULT_ATE_GRID_COUNT: usize = 37;
pub const DEFAULT_ATE_GRID_MAX: f64 = 1e8;
pub const DEFAULT_TRUE_ATE_DRAWS: usize = 1_000_000;
const DEFAULT_KNN: usize = 10;
/// The ATE models see the treatment `X1` and the prognostic covariates `X2..X5`.
pub const ATE_MODEL_COLUMNS: usize = 5;

pub fn replication_seed(seed: u64, r: usize) -> u64 {
    seed::derive(seed, &[seed::tag("replication"), r as u64])
}

fn sub_seed(rep_seed: u64, label: &str) -> u64 {
    seed::derive(rep_seed, &[seed::tag(label)])
}

/// {OLS, lasso, random forest, KNN}.
pub fn prediction_registry() -> Registry {
    Registry::new(vec![
        LearnerSpec::ols(),
        LearnerSpec::lasso(),
        LearnerSpec::random_forest(crate::learners::DEFAULT_TREES),
        LearnerSpec::knn(DEFAULT_KNN),
    ])
    .expect("valid registry")
}

/// The prediction registry plus a logistic-times-OLS two-stage model.
pub fn ate_registry() -> Registry {
    let mut specs: Vec<LearnerSpec> = prediction_registry().into();
    specs.push(two_stage_spec());
    Registry::new(specs).expect("valid registry")
}

pub fn two_stage_spec() -> LearnerSpec {
    LearnerSpec::new(
        "two_stage",
        LearnerKind::TwoStage {
            stage1: Box::new(LearnerSpec::new("logit", LearnerKind::LogisticGlm)),
            stage2: Box::new(LearnerSpec::ols()),
        },
    )
}

/// Rule for building the λ grid of one replication from its training outcomes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(default = "grid_floor")]
    pub lo: f64,
    /// Upper end; absent means the largest `|y|` of the training sample.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hi: Option<f64>,
    pub count: usize,
    #[serde(default)]
    pub spacing: GridSpacing,
    /// Drop candidates above the largest `|y|` of the training sample.
    #[serde(default)]
    pub truncate_to_data: bool,
}

fn grid_floor() -> f64 {
    GRID_FLOOR
}

impl GridSpec {
    /// `count` log-spaced values from 0.1 to `max |y|`.
    pub fn data_range(count: usize) -> Self {
        Self { lo: GRID_FLOOR, hi: None, count, spacing: GridSpacing::Log, truncate_to_data: false }
    }

    /// A fixed log grid on `[lo, hi]`, cut at `max |y|`.
    pub fn fixed_truncated(lo: f64, hi: f64, count: usize) -> Self {
        Self { lo, hi: Some(hi), count, spacing: GridSpacing::Log, truncate_to_data: true }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lo.is_finite() && self.lo > 0.0) {
            return Err(Error::config("grid lower end must be positive and finite"));
        }
        if self.count == 0 {
            return Err(Error::config("grid needs at least one value"));
        }
        if let Some(hi) = self.hi {
            if !(hi.is_finite() && hi > self.lo) {
                return Err(Error::config("grid upper end must be finite and above the lower end"));
            }
        }
        Ok(())
    }

    pub fn resolve(&self, y: &[f64]) -> Result<LambdaGrid> {
        let ymax = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let hi = self.hi.unwrap_or(ymax);
        let grid = if hi <= self.lo || self.count == 1 {
            LambdaGrid::new(vec![self.lo])?
        } else {
            LambdaGrid::spaced(self.lo, hi, self.count, self.spacing)?
        };
        Ok(if self.truncate_to_data { grid.truncated(ymax) } else { grid })
    }
}

/// Loss of an estimator, with the grid and inner folds filled in per replication.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "loss", rename_all = "snake_case")]
pub enum LossChoice {
    Standard,
    HuberFixed { lambda: f64 },
    HuberPartialCv,
    HuberNestedCv,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSpec {
    #[serde(flatten)]
    pub loss: LossChoice,
    pub ensemble: EnsembleMode,
}

impl EstimatorSpec {
    pub fn new(loss: LossChoice, ensemble: EnsembleMode) -> Self {
        Self { loss, ensemble }
    }

    /// Standard, partial-CV and nested-CV losses, convex then discrete.
    pub fn six() -> Vec<Self> {
        let losses = [LossChoice::Standard, LossChoice::HuberPartialCv, LossChoice::HuberNestedCv];
        [EnsembleMode::Convex, EnsembleMode::Discrete]
            .into_iter()
            .flat_map(|e| losses.into_iter().map(move |l| Self::new(l, e)))
            .collect()
    }

    pub fn loss_label(&self) -> &'static str {
        match self.loss {
            LossChoice::Standard => "standard",
            LossChoice::HuberFixed { .. } => "huber_fixed",
            LossChoice::HuberPartialCv => "huber_partial",
            LossChoice::HuberNestedCv => "huber_nested",
        }
    }

    pub fn label(&self) -> String {
        format!("{}/{}", self.loss_label(), self.ensemble.label())
    }

    pub fn selects_lambda(&self) -> bool {
        matches!(self.loss, LossChoice::HuberPartialCv | LossChoice::HuberNestedCv)
    }

    pub fn resolve(&self, grid: &LambdaGrid, inner_folds: usize) -> Variant {
        let loss = match self.loss {
            LossChoice::Standard => LossMode::Standard,
            LossChoice::HuberFixed { lambda } => LossMode::HuberFixed { lambda },
            LossChoice::HuberPartialCv => LossMode::HuberPartialCv { grid: grid.clone() },
            LossChoice::HuberNestedCv => LossMode::HuberNestedCv { grid: grid.clone(), inner_folds },
        };
        Variant::new(loss, self.ensemble)
    }

    fn validate(&self) -> Result<()> {
        match self.loss {
            LossChoice::HuberFixed { lambda } if !(lambda.is_finite() && lambda > 0.0) => {
                Err(Error::config("fixed Huber lambda must be positive and finite"))
            }
            _ => Ok(()),
        }
    }
}

fn validate_estimators(estimators: &[EstimatorSpec]) -> Result<()> {
    if estimators.is_empty() {
        return Err(Error::config("no estimators configured"));
    }
    let mut labels: Vec<String> = estimators.iter().map(EstimatorSpec::label).collect();
    labels.sort();
    if labels.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::config("estimators must be distinct"));
    }
    estimators.iter().try_for_each(EstimatorSpec::validate)
}

fn validate_common(replications: usize, folds: usize, inner_folds: usize, n: usize, covariates: &CovariateSpec) -> Result<()> {
    if replications == 0 {
        return Err(Error::config("replications must be >= 1"));
    }
    if folds < 2 || inner_folds < 2 {
        return Err(Error::config("fold counts must be >= 2"));
    }
    if n < 2 * folds {
        return Err(Error::config(format!("training size {n} is below 2V = {}", 2 * folds)));
    }
    if !(covariates.x8_sd.is_finite() && covariates.x8_sd > 0.0) {
        return Err(Error::config("x8_sd must be positive"));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationFailure {
    pub index: usize,
    pub message: String,
}

/// Runs `job` for every replication in parallel, returning successes in index
/// order. If none succeed the first error is returned.
fn run_replications<T: Send>(
    replications: usize,
    job: impl Fn(usize) -> Result<T> + Sync + Send,
) -> Result<(Vec<T>, Vec<ReplicationFailure>)> {
    let results: Vec<Result<T>> = (0..replications).into_par_iter().map(job).collect();
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    let mut first_err = None;
    for (index, r) in results.into_iter().enumerate() {
        match r {
            Ok(v) => ok.push(v),
            Err(e) => {
                failed.push(ReplicationFailure { index, message: e.to_string() });
                first_err.get_or_insert(e);
            }
        }
    }
    match first_err {
        Some(e) if ok.is_empty() => Err(e),
        _ => Ok((ok, failed)),
    }
}

fn mean(v: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = v.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

/// Mean and standard error of the finite entries.
fn mean_se(v: &[f64]) -> (f64, f64) {
    let vals: Vec<f64> = v.iter().copied().filter(|x| x.is_finite()).collect();
    let m = mean(vals.iter().copied());
    if vals.len() < 2 {
        return (m, f64::NAN);
    }
    let var = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (vals.len() - 1) as f64;
    (m, (var / vals.len() as f64).sqrt())
}

fn median(v: &[f64]) -> f64 {
    let mut s: Vec<f64> = v.to_vec();
    s.sort_by(f64::total_cmp);
    match s.len() {
        0 => f64::NAN,
        n if n % 2 == 1 => s[n / 2],
        n => 0.5 * (s[n / 2 - 1] + s[n / 2]),
    }
}

/// Fraction of zeros, outlier fraction and skewness of an outcome sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutcomeSummary {
    pub zero_fraction: f64,
    pub outlier_fraction: f64,
    pub skewness: f64,
}

impl OutcomeSummary {
    pub fn of(y: &[f64]) -> Self {
        Self {
            zero_fraction: zero_fraction(y),
            outlier_fraction: outlier_fraction(y).unwrap_or(f64::NAN),
            skewness: skewness(y).unwrap_or(f64::NAN),
        }
    }
}

fn push_summary(report: &mut Report, scenario: &str, summaries: &[OutcomeSummary]) {
    let col = |f: fn(&OutcomeSummary) -> f64| mean_se(&summaries.iter().map(f).collect::<Vec<_>>()).0;
    report.push(scenario, "data", "zero_fraction", col(|s| s.zero_fraction));
    report.push(scenario, "data", "outlier_fraction", col(|s| s.outlier_fraction));
    report.push(scenario, "data", "skewness", col(|s| s.skewness));
}

fn default_replications() -> usize {
    DEFAULT_REPLICATIONS
}

fn default_test_size() -> usize {
    DEFAULT_TEST_SIZE
}

fn default_folds() -> usize {
    DEFAULT_FOLDS
}

fn default_prediction_grid() -> GridSpec {
    GridSpec::data_range(DEFAULT_GRID_COUNT)
}

fn default_ate_grid() -> GridSpec {
    GridSpec::fixed_truncated(GRID_FLOOR, DEFAULT_ATE_GRID_MAX, DEFAULT_ATE_GRID_COUNT)
}

fn default_true_ate_draws() -> usize {
    DEFAULT_TRUE_ATE_DRAWS
}

fn default_cap() -> f64 {
    COST_CAP
}

/// Test-set accuracy of several ensemble variants on the zero-inflated cost model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionExperimentConfig {
    /// Scenario label in the report; defaults to `<regime>_n<n_train>`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub regime: OutlierRegime,
    pub n_train: usize,
    #[serde(default = "default_test_size")]
    pub n_test: usize,
    #[serde(default = "default_replications")]
    pub replications: usize,
    pub seed: u64,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_folds")]
    pub inner_folds: usize,
    #[serde(default = "default_prediction_grid")]
    pub grid: GridSpec,
    #[serde(default = "prediction_registry")]
    pub learners: Registry,
    #[serde(default = "EstimatorSpec::six")]
    pub estimators: Vec<EstimatorSpec>,
    /// Re-select λ on an independent second training sample and report ICC and accuracy.
    #[serde(default)]
    pub lambda_stability: bool,
    #[serde(default)]
    pub covariates: CovariateSpec,
    #[serde(default)]
    pub zero_link: ZeroLink,
    #[serde(default = "default_cap")]
    pub cap: f64,
    #[serde(default)]
    pub meta: MetaSolveOptions,
}

impl PredictionExperimentConfig {
    pub fn new(regime: OutlierRegime, n_train: usize, seed: u64) -> Self {
        Self {
            name: None,
            regime,
            n_train,
            n_test: DEFAULT_TEST_SIZE,
            replications: DEFAULT_REPLICATIONS,
            seed,
            folds: DEFAULT_FOLDS,
            inner_folds: DEFAULT_FOLDS,
            grid: default_prediction_grid(),
            learners: prediction_registry(),
            estimators: EstimatorSpec::six(),
            lambda_stability: false,
            covariates: CovariateSpec::default(),
            zero_link: ZeroLink::default(),
            cap: COST_CAP,
            meta: MetaSolveOptions::default(),
        }
    }

    pub fn scenario_label(&self) -> String {
        self.name.clone().unwrap_or_else(|| format!("{}_n{}", self.regime.label(), self.n_train))
    }

    pub fn validate(&self) -> Result<()> {
        validate_common(self.replications, self.folds, self.inner_folds, self.n_train, &self.covariates)?;
        if self.n_test < 2 {
            return Err(Error::config("n_test must be >= 2"));
        }
        if !(self.cap > 0.0) {
            return Err(Error::config("cap must be positive"));
        }
        self.grid.validate()?;
        self.meta.validate()?;
        validate_estimators(&self.estimators)
    }

    fn cost_scenario(&self) -> CostScenario {
        CostScenario { regime: self.regime, n: self.n_train, zero_link: self.zero_link, cap: self.cap }
    }

    fn draw(&self, n: usize, seed: u64) -> Result<Dataset> {
        let x = self.covariates.sample(n, &mut seed::rng(seed::derive(seed, &[0])))?;
        let y = gen_cost_two_stage(&x, &self.cost_scenario(), seed::derive(seed, &[1]))?;
        Dataset::new(x, y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionReplication {
    pub index: usize,
    pub seed: u64,
    /// Test-set scores, one per estimator.
    pub scores: Vec<Scores>,
    /// Selected or fixed λ per estimator.
    pub lambdas: Vec<Option<f64>>,
    pub lambda_indices: Vec<Option<usize>>,
    /// λ index chosen on the independent second sample, for λ-selecting estimators.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub stability_indices: Vec<Option<usize>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub stability_lambdas: Vec<Option<f64>>,
    pub training: OutcomeSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutcome<T> {
    pub report: Report,
    pub replications: Vec<T>,
    pub failures: Vec<ReplicationFailure>,
}

fn shared_for(data: &Dataset, learners: &Registry, folds: usize, variants: &[Variant], seed: u64) -> Result<SharedFits> {
    fit_shared(data, learners, folds, seed, &inner_folds_of(variants), false)
}

fn default_true() -> bool {
    true
}

fn prediction_replication(cfg: &PredictionExperimentConfig, index: usize) -> Result<PredictionReplication> {
    let rep_seed = replication_seed(cfg.seed, index);
    let train = cfg.draw(cfg.n_train, sub_seed(rep_seed, "train"))?;
    let test = cfg.draw(cfg.n_test, sub_seed(rep_seed, "test"))?;
    let grid = cfg.grid.resolve(&train.y)?;
    let variants: Vec<Variant> = cfg.estimators.iter().map(|e| e.resolve(&grid, cfg.inner_folds)).collect();
    let fit_seed = sub_seed(rep_seed, "fit");
    let shared = shared_for(&train, &cfg.learners, cfg.folds, &variants, fit_seed)?;
    let base = base_predictions(&shared.full, &test.x)?;
    let mut scores = Vec::with_capacity(variants.len());
    let mut lambdas = Vec::with_capacity(variants.len());
    let mut lambda_indices = Vec::with_capacity(variants.len());
    for v in &variants {
        let model = fit_variant(&shared, &train.y, v, fit_seed, &cfg.meta)?;
        scores.push(score(&test.y, &combine_predictions(&model.weights, &base)?)?);
        lambdas.push(model.lambda);
        lambda_indices.push(model.lambda_selection.as_ref().map(|s| s.chosen_index));
    }
    let (mut stability_indices, mut stability_lambdas) = (Vec::new(), Vec::new());
    if cfg.lambda_stability {
        let second = cfg.draw(cfg.n_train, sub_seed(rep_seed, "stability"))?;
        let seed2 = sub_seed(rep_seed, "stability-fit");
        let selecting: Vec<Variant> = cfg
            .estimators
            .iter()
            .zip(&variants)
            .filter(|(e, _)| e.selects_lambda())
            .map(|(_, v)| v.clone())
            .collect();
        let shared2 = shared_for(&second, &cfg.learners, cfg.folds, &selecting, seed2)?;
        for (e, v) in cfg.estimators.iter().zip(&variants) {
            if e.selects_lambda() {
                let m = fit_variant(&shared2, &second.y, v, seed2, &cfg.meta)?;
                stability_indices.push(m.lambda_selection.as_ref().map(|s| s.chosen_index));
                stability_lambdas.push(m.lambda);
            } else {
                stability_indices.push(None);
                stability_lambdas.push(None);
            }
        }
    }
    Ok(PredictionReplication {
        index,
        seed: rep_seed,
        scores,
        lambdas,
        lambda_indices,
        stability_indices,
        stability_lambdas,
        training: OutcomeSummary::of(&train.y),
    })
}

/// Simulates, fits every estimator and scores it on a fresh test sample, per replication.
///
/// Report rows per estimator: `mse`, `mse_se`, `mae`, `r2`, and when the standard
/// estimator of the same ensemble mode is present, `relative_mse` (ratio of mean
/// MSEs) and `re` (ratio of mean R²). λ-selecting estimators add `lambda_median`,
/// plus `lambda_icc` and `lambda_accuracy` with the stability pass.
pub fn run_prediction_experiment(cfg: &PredictionExperimentConfig) -> Result<ExperimentOutcome<PredictionReplication>> {
    cfg.validate()?;
    let (reps, failures) = run_replications(cfg.replications, |r| prediction_replication(cfg, r))?;
    let scenario = cfg.scenario_label();
    let mut report = Report::new();
    let means: Vec<(f64, f64)> = (0..cfg.estimators.len())
        .map(|e| (mean(reps.iter().map(|r| r.scores[e].mse)), mean(reps.iter().map(|r| r.scores[e].r2))))
        .collect();
    for (e, est) in cfg.estimators.iter().enumerate() {
        let label = est.label();
        let mses: Vec<f64> = reps.iter().map(|r| r.scores[e].mse).collect();
        report.push(&scenario, &label, "mse", means[e].0);
        report.push(&scenario, &label, "mse_se", mean_se(&mses).1);
        report.push(&scenario, &label, "mae", mean(reps.iter().map(|r| r.scores[e].mae)));
        report.push(&scenario, &label, "r2", means[e].1);
        let reference = cfg
            .estimators
            .iter()
            .position(|o| o.loss == LossChoice::Standard && o.ensemble == est.ensemble);
        if let Some(k) = reference {
            report.push(&scenario, &label, "relative_mse", means[e].0 / means[k].0);
            report.push(&scenario, &label, "re", means[e].1 / means[k].1);
        }
        if est.selects_lambda() {
            let lams: Vec<f64> = reps.iter().filter_map(|r| r.lambdas[e]).collect();
            report.push(&scenario, &label, "lambda_median", median(&lams));
            if cfg.lambda_stability {
                push_stability(&mut report, &scenario, &label, &reps, e);
            }
        }
    }
    report.push(&scenario, "data", "replications", reps.len() as f64);
    report.push(&scenario, "data", "failed_replications", failures.len() as f64);
    push_summary(&mut report, &scenario, &reps.iter().map(|r| r.training).collect::<Vec<_>>());
    Ok(ExperimentOutcome { report, replications: reps, failures })
}

fn push_stability(report: &mut Report, scenario: &str, label: &str, reps: &[PredictionReplication], e: usize) {
    let pairs: Vec<(f64, f64, usize, usize)> = reps
        .iter()
        .filter_map(|r| {
            Some((r.lambdas[e]?, r.stability_lambdas.get(e).copied().flatten()?, r.lambda_indices[e]?, r.stability_indices[e]?))
        })
        .collect();
    let a: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let b: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    if let Ok(v) = icc(&a, &b) {
        report.push(scenario, label, "lambda_icc", v);
    }
    let ia: Vec<usize> = pairs.iter().map(|p| p.2).collect();
    let ib: Vec<usize> = pairs.iter().map(|p| p.3).collect();
    if let Ok(v) = lambda_accuracy(&ia, &ib) {
        report.push(scenario, label, "lambda_accuracy", v);
    }
}

/// TMLE of the effect of `X1` on a Tweedie outcome, against the unadjusted difference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AteExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub regime: OutlierRegime,
    /// Replaces the regime's preset outcome model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tweedie: Option<TweedieScenario>,
    pub n: usize,
    #[serde(default = "default_replications")]
    pub replications: usize,
    pub seed: u64,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_folds")]
    pub inner_folds: usize,
    #[serde(default = "default_ate_grid")]
    pub grid: GridSpec,
    #[serde(default = "ate_registry")]
    pub learners: Registry,
    #[serde(default)]
    pub ensemble: EnsembleMode,
    #[serde(default = "default_true_ate_draws")]
    pub true_ate_draws: usize,
    #[serde(default)]
    pub fluctuation: Fluctuation,
    /// Initial outcome predictions from the fold fits that did not see each row,
    /// instead of the full-data fits.
    #[serde(default = "default_true")]
    pub cross_fit_outcome: bool,
    #[serde(default)]
    pub covariates: CovariateSpec,
    #[serde(default)]
    pub meta: MetaSolveOptions,
}

impl AteExperimentConfig {
    pub fn new(regime: OutlierRegime, n: usize, seed: u64) -> Self {
        Self {
            name: None,
            regime,
            tweedie: None,
            n,
            replications: DEFAULT_REPLICATIONS,
            seed,
            folds: DEFAULT_FOLDS,
            inner_folds: DEFAULT_FOLDS,
            grid: default_ate_grid(),
            learners: ate_registry(),
            ensemble: EnsembleMode::Convex,
            true_ate_draws: DEFAULT_TRUE_ATE_DRAWS,
            fluctuation: Fluctuation::default(),
            cross_fit_outcome: true,
            covariates: CovariateSpec::default(),
            meta: MetaSolveOptions::default(),
        }
    }

    pub fn scenario_label(&self) -> String {
        self.name.clone().unwrap_or_else(|| format!("ate_{}_n{}", self.regime.label(), self.n))
    }

    pub fn scenario(&self) -> TweedieScenario {
        self.tweedie.clone().unwrap_or_else(|| TweedieScenario::preset(self.regime))
    }

    pub fn validate(&self) -> Result<()> {
        validate_common(self.replications, self.folds, self.inner_folds, self.n, &self.covariates)?;
        if self.true_ate_draws == 0 {
            return Err(Error::config("true_ate_draws must be >= 1"));
        }
        self.scenario().validate()?;
        self.grid.validate()?;
        self.meta.validate()
    }

    /// Unadjusted difference, then TMLE with standard, partial-CV and nested-CV outcome models.
    pub fn estimators(&self) -> Vec<EstimatorSpec> {
        [LossChoice::Standard, LossChoice::HuberPartialCv, LossChoice::HuberNestedCv]
            .into_iter()
            .map(|l| EstimatorSpec::new(l, self.ensemble))
            .collect()
    }

    pub fn estimator_labels(&self) -> Vec<String> {
        std::iter::once("unadjusted".to_string())
            .chain(self.estimators().iter().map(|e| format!("tmle_{}", e.loss_label())))
            .collect()
    }

    pub fn true_ate(&self) -> Result<f64> {
        true_ate_with(&self.scenario(), &self.covariates, self.true_ate_draws, seed::derive(self.seed, &[seed::tag("true-ate")]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AteReplication {
    pub index: usize,
    pub seed: u64,
    /// Unadjusted first, then one TMLE per outcome model.
    pub estimates: Vec<AteEstimate>,
    pub lambdas: Vec<Option<f64>>,
    pub outcome: OutcomeSummary,
}

fn ate_replication(cfg: &AteExperimentConfig, index: usize) -> Result<AteReplication> {
    let rep_seed = replication_seed(cfg.seed, index);
    let x = cfg.covariates.sample(cfg.n, &mut seed::rng(sub_seed(rep_seed, "covariates")))?;
    let y = gen_tweedie_outcome(&x, &cfg.scenario(), sub_seed(rep_seed, "outcome"))?;
    let a = x.column(0);
    let x = x.select_columns(&(0..ATE_MODEL_COLUMNS).collect::<Vec<_>>());
    let data = Dataset::new(x, y)?.with_treatment(a)?;
    let grid = cfg.grid.resolve(&data.y)?;
    let variants: Vec<Variant> = cfg.estimators().iter().map(|e| e.resolve(&grid, cfg.inner_folds)).collect();
    let fit_seed = sub_seed(rep_seed, "fit");
    let shared = fit_shared(&data, &cfg.learners, cfg.folds, fit_seed, &inner_folds_of(&variants), cfg.cross_fit_outcome)?;
    let adjust: Vec<usize> = (1..data.p()).collect();
    let treatment = data.treatment.clone().expect("treatment set above");
    let propensity = fit_propensity(&data.x.select_columns(&adjust), &treatment, sub_seed(rep_seed, "propensity"))?;
    let mut estimates = vec![unadjusted_ate(&data.y, &treatment)?];
    let mut lambdas = vec![None];
    for (v, label) in variants.iter().zip(cfg.estimator_labels().into_iter().skip(1)) {
        let model = fit_variant(&shared, &data.y, v, fit_seed, &cfg.meta)?;
        let mut est = if cfg.cross_fit_outcome {
            tmle_ate_with(&data, &CrossFittedOutcome::new(&shared, &model)?, &propensity, cfg.fluctuation)?
        } else {
            tmle_ate_with(&data, &model, &propensity, cfg.fluctuation)?
        };
        est.label = label;
        estimates.push(est);
        lambdas.push(model.lambda);
    }
    Ok(AteReplication { index, seed: rep_seed, estimates, lambdas, outcome: OutcomeSummary::of(&data.y) })
}

/// Per estimator: `estimate` (mean), `bias`, `bias_se`, `variance`, `mse` and
/// `relative_mse` against the standard-learner TMLE; TMLE rows add `max_abs_score`.
pub fn run_ate_experiment(cfg: &AteExperimentConfig) -> Result<ExperimentOutcome<AteReplication>> {
    cfg.validate()?;
    let truth = cfg.true_ate()?;
    let (reps, failures) = run_replications(cfg.replications, |r| ate_replication(cfg, r))?;
    let scenario = cfg.scenario_label();
    let labels = cfg.estimator_labels();
    let mut report = Report::new();
    let mse_of = |e: usize| mean(reps.iter().map(|r| (r.estimates[e].estimate - truth).powi(2)));
    let reference = mse_of(1);
    for (e, label) in labels.iter().enumerate() {
        let est: Vec<f64> = reps.iter().map(|r| r.estimates[e].estimate).collect();
        let (m, se) = mean_se(&est);
        let variance = if est.len() > 1 {
            est.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (est.len() - 1) as f64
        } else {
            f64::NAN
        };
        let mse = mse_of(e);
        report.push(&scenario, label, "estimate", m);
        report.push(&scenario, label, "bias", m - truth);
        report.push(&scenario, label, "bias_se", se);
        report.push(&scenario, label, "variance", variance);
        report.push(&scenario, label, "mse", mse);
        report.push(&scenario, label, "relative_mse", mse / reference);
        if e > 0 {
            let score = reps
                .iter()
                .filter_map(|r| r.estimates[e].diagnostics.as_ref().map(|d| d.score.abs()))
                .fold(0.0, f64::max);
            report.push(&scenario, label, "max_abs_score", score);
        }
        if e > 1 {
            let lams: Vec<f64> = reps.iter().filter_map(|r| r.lambdas[e]).collect();
            report.push(&scenario, label, "lambda_median", median(&lams));
        }
    }
    report.push(&scenario, "data", "true_ate", truth);
    report.push(&scenario, "data", "replications", reps.len() as f64);
    report.push(&scenario, "data", "failed_replications", failures.len() as f64);
    push_summary(&mut report, &scenario, &reps.iter().map(|r| r.outcome).collect::<Vec<_>>());
    Ok(ExperimentOutcome { report, replications: reps, failures })
}
