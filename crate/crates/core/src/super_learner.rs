//! End-to-end super learner: base fits, level-one matrix, weights, combination.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cross_validation::{cross_validate, fit_or_fallback, make_folds, FitEvent, FitLog, LevelOneMatrix};
use crate::data::{Dataset, Matrix};
use crate::error::{Error, Result};
use crate::lambda::{build_nested_inner, nested_select_from, partial_cv_select, LambdaGrid, LambdaSelection, NestedInner};
use crate::learners::{FittedLearner, Registry};
use crate::losses::LossKind;
use crate::meta::{cv_objective, fit_weights, minimize, EnsembleMode, MetaProblem, MetaSolveOptions, SimplexWeights};
use crate::seed;

/// Schema version of persisted models.
pub const MODEL_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_FOLDS: usize = 10;

/// How the meta-learning loss is chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum LossMode {
    Standard,
    HuberFixed { lambda: f64 },
    HuberPartialCv { grid: LambdaGrid },
    HuberNestedCv { grid: LambdaGrid, inner_folds: usize },
}

impl LossMode {
    pub fn label(&self) -> &'static str {
        match self {
            LossMode::Standard => "standard",
            LossMode::HuberFixed { .. } => "huber_fixed",
            LossMode::HuberPartialCv { .. } => "huber_partial",
            LossMode::HuberNestedCv { .. } => "huber_nested",
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            LossMode::HuberFixed { lambda } => LossKind::huber(*lambda).map(|_| ()).map_err(|e| Error::config(e.to_string())),
            LossMode::HuberNestedCv { inner_folds, .. } if *inner_folds < 2 => Err(Error::config("inner_folds must be >= 2")),
            _ => Ok(()),
        }
    }
}

/// One estimator: loss mode plus ensemble mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub loss: LossMode,
    pub ensemble: EnsembleMode,
}

impl Variant {
    pub fn new(loss: LossMode, ensemble: EnsembleMode) -> Self {
        Self { loss, ensemble }
    }

    /// e.g. `huber_nested/convex`.
    pub fn label(&self) -> String {
        format!("{}/{}", self.loss.label(), self.ensemble.label())
    }

    /// Standard, partial-CV and nested-CV variants for both ensemble modes.
    pub fn six(grid: &LambdaGrid, inner_folds: usize) -> Vec<Variant> {
        let losses = [
            LossMode::Standard,
            LossMode::HuberPartialCv { grid: grid.clone() },
            LossMode::HuberNestedCv { grid: grid.clone(), inner_folds },
        ];
        [EnsembleMode::Convex, EnsembleMode::Discrete]
            .into_iter()
            .flat_map(|e| losses.iter().cloned().map(move |l| Variant::new(l, e)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuperLearnerConfig {
    pub learners: Registry,
    pub folds: usize,
    pub variant: Variant,
    pub seed: u64,
    #[serde(default)]
    pub meta: MetaSolveOptions,
}

impl SuperLearnerConfig {
    pub fn new(learners: Registry, variant: Variant, seed: u64) -> Self {
        Self { learners, folds: DEFAULT_FOLDS, variant, seed, meta: MetaSolveOptions::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::config("folds must be >= 2"));
        }
        for spec in self.learners.specs() {
            spec.validate()?;
        }
        self.variant.loss.validate()?;
        self.meta.validate()
    }
}

/// Cross-validated summaries kept with a fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelOneDiagnostics {
    /// Cross-validated squared error (sum of fold means over `V`) per learner.
    pub learner_cv_mse: Vec<f64>,
    /// Meta objective of the chosen weights at the working loss.
    pub ensemble_cv_risk: f64,
    pub fold_sizes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuperLearnerModel {
    pub format_version: u32,
    pub variant: Variant,
    pub seed: u64,
    pub folds: usize,
    pub learners: Vec<FittedLearner>,
    pub weights: SimplexWeights,
    /// Working λ (Huber variants only).
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_selection: Option<LambdaSelection>,
    pub diagnostics: LevelOneDiagnostics,
    pub fit_log: FitLog,
    /// Covariate column names in training order, when known.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub feature_names: Vec<String>,
}

impl SuperLearnerModel {
    pub fn n_features(&self) -> usize {
        self.learners.first().map_or(0, |l| l.n_features)
    }

    pub fn learner_names(&self) -> Vec<String> {
        self.learners.iter().map(|l| l.spec.name.clone()).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Numerical(format!("model serialization failed: {e}")))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Header {
            format_version: u32,
        }
        let header: Header = serde_json::from_str(text).map_err(|e| Error::data(format!("model JSON: {e}")))?;
        if header.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::data(format!(
                "model format version {} is not supported (expected {MODEL_FORMAT_VERSION})",
                header.format_version
            )));
        }
        let model: Self = serde_json::from_str(text).map_err(|e| Error::data(format!("model JSON: {e}")))?;
        if model.weights.len() != model.learners.len() {
            return Err(Error::data("model weights do not match its learners"));
        }
        if !model.feature_names.is_empty() && model.learners.iter().any(|l| l.n_features != model.feature_names.len()) {
            return Err(Error::data("model feature names do not match its learners"));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Base fits shared by every variant fitted on one dataset.
#[derive(Debug, Clone)]
pub struct SharedFits {
    pub full: Vec<FittedLearner>,
    pub level_one: LevelOneMatrix,
    /// `fold_fits[v][k]`, present when requested.
    pub fold_fits: Option<Vec<Vec<FittedLearner>>>,
    pub log: FitLog,
    nested: BTreeMap<usize, NestedInner>,
}

impl SharedFits {
    pub fn nested_inner(&self, inner_folds: usize) -> Option<&NestedInner> {
        self.nested.get(&inner_folds)
    }
}

fn check_data(data: &Dataset, folds: usize) -> Result<()> {
    data.check_finite()?;
    if data.n() < 2 * folds {
        return Err(Error::data(format!("need n >= 2V = {}, got n = {}", 2 * folds, data.n())));
    }
    Ok(())
}

pub(crate) fn fold_seed(seed: u64) -> u64 {
    seed::derive(seed, &[seed::tag("folds")])
}

fn full_fit_seed(seed: u64, k: usize) -> u64 {
    seed::derive(seed, &[seed::tag("full-fit"), k as u64])
}

/// Fits the base learners on the full data and on every training split, plus
/// nested inner cross-validations for the requested inner fold counts.
pub fn fit_shared(
    data: &Dataset,
    learners: &Registry,
    folds: usize,
    seed: u64,
    inner_folds: &[usize],
    keep_fold_fits: bool,
) -> Result<SharedFits> {
    check_data(data, folds)?;
    let plan = make_folds(data.n(), folds, fold_seed(seed))?;
    let full: Vec<(FittedLearner, Vec<FitEvent>)> = learners
        .specs()
        .par_iter()
        .enumerate()
        .map(|(k, spec)| fit_or_fallback(spec, &data.x, &data.y, full_fit_seed(seed, k), None))
        .collect();
    let cv = cross_validate(data, learners, &plan, seed, keep_fold_fits)?;
    let mut log = FitLog { base_fits: full.len(), events: Vec::new() };
    let mut fits = Vec::with_capacity(full.len());
    for (f, events) in full {
        log.events.extend(events);
        fits.push(f);
    }
    log.merge(cv.log);
    let mut nested = BTreeMap::new();
    for &d in inner_folds {
        if let std::collections::btree_map::Entry::Vacant(e) = nested.entry(d) {
            let inner = build_nested_inner(data, learners, &plan, d, seed)?;
            log.merge(inner.log.clone());
            e.insert(inner);
        }
    }
    Ok(SharedFits { full: fits, level_one: cv.level_one, fold_fits: cv.fold_fits, log, nested })
}

/// Sum over folds of per-fold mean squared error, divided by `V`, for every column.
fn learner_cv_mse(level_one: &LevelOneMatrix, y: &[f64]) -> Vec<f64> {
    (0..level_one.k())
        .map(|k| cv_objective(level_one, y, LossKind::Squared, &SimplexWeights::vertex(level_one.k(), k)).unwrap_or(f64::NAN))
        .collect()
}

/// Builds the model of one variant from shared fits.
pub fn fit_variant(
    shared: &SharedFits,
    y: &[f64],
    variant: &Variant,
    seed: u64,
    opts: &MetaSolveOptions,
) -> Result<SuperLearnerModel> {
    variant.loss.validate()?;
    let l1 = &shared.level_one;
    let mode = variant.ensemble;
    let (weights, lambda, selection, working) = match &variant.loss {
        LossMode::Standard => (fit_weights(l1, y, LossKind::Squared, mode, opts)?, None, None, LossKind::Squared),
        LossMode::HuberFixed { lambda } => {
            let loss = LossKind::huber(*lambda)?;
            (fit_weights(l1, y, loss, mode, opts)?, Some(*lambda), None, loss)
        }
        LossMode::HuberPartialCv { grid } => {
            let sel = partial_cv_select(l1, y, grid, mode, opts)?;
            let w = sel.weights[sel.chosen_index].clone();
            let lam = sel.chosen_lambda;
            (w, Some(lam), Some(sel), LossKind::huber(lam)?)
        }
        LossMode::HuberNestedCv { grid, inner_folds } => {
            let inner = shared
                .nested_inner(*inner_folds)
                .ok_or_else(|| Error::config(format!("no inner cross-validation with D = {inner_folds} was run")))?;
            let sel = nested_select_from(inner, l1, y, grid, mode, opts)?;
            let lam = sel.selection.chosen_lambda;
            (sel.weights, Some(lam), Some(sel.selection), LossKind::huber(lam)?)
        }
    };
    let diagnostics = LevelOneDiagnostics {
        learner_cv_mse: learner_cv_mse(l1, y),
        ensemble_cv_risk: cv_objective(l1, y, working, &weights)?,
        fold_sizes: l1.fold_plan.fold_sizes(),
    };
    Ok(SuperLearnerModel {
        format_version: MODEL_FORMAT_VERSION,
        variant: variant.clone(),
        seed,
        folds: l1.fold_plan.folds(),
        learners: shared.full.clone(),
        weights,
        lambda,
        lambda_selection: selection,
        diagnostics,
        fit_log: shared.log.clone(),
        feature_names: Vec::new(),
    })
}

pub(crate) fn inner_folds_of(variants: &[Variant]) -> Vec<usize> {
    variants
        .iter()
        .filter_map(|v| match v.loss {
            LossMode::HuberNestedCv { inner_folds, .. } => Some(inner_folds),
            _ => None,
        })
        .collect()
}

/// Fits several variants on one dataset with a single set of base fits.
pub fn fit_super_learner_variants(
    data: &Dataset,
    learners: &Registry,
    folds: usize,
    variants: &[Variant],
    seed: u64,
    opts: &MetaSolveOptions,
) -> Result<Vec<SuperLearnerModel>> {
    for v in variants {
        v.loss.validate()?;
    }
    let shared = fit_shared(data, learners, folds, seed, &inner_folds_of(variants), false)?;
    variants
        .iter()
        .map(|v| {
            let mut m = fit_variant(&shared, &data.y, v, seed, opts)?;
            m.feature_names = data.feature_names.clone();
            Ok(m)
        })
        .collect()
}

pub fn fit_super_learner(data: &Dataset, config: &SuperLearnerConfig) -> Result<SuperLearnerModel> {
    config.validate()?;
    let mut models = fit_super_learner_variants(
        data,
        &config.learners,
        config.folds,
        std::slice::from_ref(&config.variant),
        config.seed,
        &config.meta,
    )?;
    Ok(models.remove(0))
}

/// `Σ_k α_k Q̂_k(x)` for every row of `x`.
pub fn predict_super_learner(model: &SuperLearnerModel, x: &Matrix) -> Result<Vec<f64>> {
    if x.ncols() != model.n_features() {
        return Err(Error::dim(format!("model expects {} features, got {}", model.n_features(), x.ncols())));
    }
    let mut out = vec![0.0; x.nrows()];
    for (learner, &a) in model.learners.iter().zip(model.weights.as_slice()) {
        if a == 0.0 {
            continue;
        }
        accumulate(&mut out, a, &learner.predict(x)?);
    }
    Ok(out)
}

fn accumulate(out: &mut [f64], a: f64, pred: &[f64]) {
    for (o, p) in out.iter_mut().zip(pred) {
        *o += a * p;
    }
}

/// Predictions of every learner on `x`, one vector per learner.
pub fn base_predictions(learners: &[FittedLearner], x: &Matrix) -> Result<Vec<Vec<f64>>> {
    learners.iter().map(|l| l.predict(x)).collect()
}

/// Weighted combination of precomputed base predictions. Matches
/// [`predict_super_learner`] bit for bit.
pub fn combine_predictions(weights: &SimplexWeights, base: &[Vec<f64>]) -> Result<Vec<f64>> {
    if base.len() != weights.len() {
        return Err(Error::dim(format!("{} weights for {} learners", weights.len(), base.len())));
    }
    let mut out = vec![0.0; base.first().map_or(0, Vec::len)];
    for (pred, &a) in base.iter().zip(weights.as_slice()) {
        if a != 0.0 {
            accumulate(&mut out, a, pred);
        }
    }
    Ok(out)
}

/// Monte Carlo stand-in for the true risk: a large fresh sample from the data-generating process.
#[derive(Debug, Clone)]
pub struct RiskOracle {
    pub x: Matrix,
    pub y: Vec<f64>,
}

/// Empirical weights against the oracle weights on the same fold-specific fits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleComparison {
    pub oracle_weights: SimplexWeights,
    /// `Σ_v R(α̂) − Σ_v R(α̃)`, estimated on the oracle sample.
    pub gap: f64,
    /// Monte Carlo standard error of `gap`.
    pub gap_se: f64,
    pub draws: usize,
}

/// Level-one design of the oracle sample: `V` stacked blocks, block `v` holding
/// the predictions of the fold-`v` fits.
fn oracle_design(fold_fits: &[Vec<FittedLearner>], oracle: &RiskOracle) -> Result<Matrix> {
    let v_count = fold_fits.len();
    let k = fold_fits.first().map_or(0, Vec::len);
    if v_count == 0 || k == 0 {
        return Err(Error::dim("no fold fits supplied"));
    }
    let m = oracle.y.len();
    let blocks: Vec<Vec<Vec<f64>>> = fold_fits
        .par_iter()
        .map(|fits| fits.iter().map(|f| f.predict(&oracle.x)).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    let mut z = Matrix::zeros(v_count * m, k);
    for (v, block) in blocks.iter().enumerate() {
        for (j, col) in block.iter().enumerate() {
            for (i, p) in col.iter().enumerate() {
                z.set(v * m + i, j, *p);
            }
        }
    }
    Ok(z)
}

/// Weights minimizing the oracle-estimated `Σ_v R_λ(Q̂_{α,v})` over the simplex.
pub fn oracle_weights(
    fold_fits: &[Vec<FittedLearner>],
    oracle: &RiskOracle,
    loss: LossKind,
    opts: &MetaSolveOptions,
) -> Result<SimplexWeights> {
    let z = oracle_design(fold_fits, oracle)?;
    let y: Vec<f64> = (0..fold_fits.len()).flat_map(|_| oracle.y.iter().copied()).collect();
    let problem = MetaProblem::new(&z, &y, None, loss)?;
    Ok(minimize(&problem, opts)?.weights)
}

/// Oracle weights and the risk gap of `alpha_hat`, with common random numbers.
pub fn oracle_gap(
    fold_fits: &[Vec<FittedLearner>],
    oracle: &RiskOracle,
    loss: LossKind,
    alpha_hat: &SimplexWeights,
    opts: &MetaSolveOptions,
) -> Result<OracleComparison> {
    let z = oracle_design(fold_fits, oracle)?;
    let m = oracle.y.len();
    let v_count = fold_fits.len();
    if alpha_hat.len() != z.ncols() {
        return Err(Error::dim("weights do not match the number of learners"));
    }
    if m < 2 {
        return Err(Error::data("oracle sample needs at least two draws"));
    }
    let y: Vec<f64> = (0..v_count).flat_map(|_| oracle.y.iter().copied()).collect();
    let problem = MetaProblem::new(&z, &y, None, loss)?;
    let tilde = minimize(&problem, opts)?.weights;
    let diffs: Vec<f64> = (0..m)
        .map(|i| {
            (0..v_count)
                .map(|v| {
                    let row = z.row(v * m + i);
                    let yi = oracle.y[i];
                    loss.value_unchecked(yi - alpha_hat.combine(row)) - loss.value_unchecked(yi - tilde.combine(row))
                })
                .sum::<f64>()
        })
        .collect();
    let mean = diffs.iter().sum::<f64>() / m as f64;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
    Ok(OracleComparison { oracle_weights: tilde, gap: mean, gap_se: (var / m as f64).sqrt(), draws: m })
}
