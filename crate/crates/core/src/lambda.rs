//! Grid search for the Huber robustification parameter.
//!
//! Both selectors judge candidate ensembles by squared error: Huber loss is only
//! the working loss used to fit the weights.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cross_validation::{cross_validate, make_folds, FitLog, FoldPlan, LevelOneMatrix};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::learners::Registry;
use crate::losses::LossKind;
use crate::meta::{fit_weights, EnsembleMode, MetaSolveOptions, SimplexWeights};
use crate::seed;

/// Lower end of every default grid.
pub const GRID_FLOOR: f64 = 0.1;

/// Strictly increasing positive candidate values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct LambdaGrid(Vec<f64>);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridSpacing {
    #[default]
    Log,
    Linear,
}

impl LambdaGrid {
    /// Sorts the candidates; rejects empty, non-positive, non-finite or repeated values.
    pub fn new(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::config("lambda grid is empty"));
        }
        if values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::config("lambda values must be finite and positive"));
        }
        values.sort_by(f64::total_cmp);
        if values.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::config("lambda grid has repeated values"));
        }
        Ok(Self(values))
    }

    /// `count` points from `lo` to `hi` inclusive.
    pub fn spaced(lo: f64, hi: f64, count: usize, spacing: GridSpacing) -> Result<Self> {
        if !(lo > 0.0 && hi > lo && hi.is_finite()) {
            return Err(Error::config(format!("invalid lambda range [{lo}, {hi}]")));
        }
        if count < 2 {
            return Err(Error::config("a spaced grid needs at least two points"));
        }
        let t = |j: usize| j as f64 / (count - 1) as f64;
        let mut values: Vec<f64> = match spacing {
            GridSpacing::Log => (0..count).map(|j| (lo.ln() + (hi.ln() - lo.ln()) * t(j)).exp()).collect(),
            GridSpacing::Linear => (0..count).map(|j| lo + (hi - lo) * t(j)).collect(),
        };
        values[0] = lo;
        values[count - 1] = hi;
        Self::new(values)
    }

    /// Keeps the values not above `max`; the smallest value always survives.
    pub fn truncated(&self, max: f64) -> Self {
        let keep: Vec<f64> = self.0.iter().copied().filter(|&v| v <= max).collect();
        if keep.is_empty() {
            Self(vec![self.0[0]])
        } else {
            Self(keep)
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn index_of(&self, lambda: f64) -> Option<usize> {
        self.0.iter().position(|&v| v == lambda)
    }
}

impl TryFrom<Vec<f64>> for LambdaGrid {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<LambdaGrid> for Vec<f64> {
    fn from(g: LambdaGrid) -> Self {
        g.0
    }
}

/// Log-spaced grid from 0.1 to `max|y|`. When `max|y| <= 0.1` the grid is the
/// single point 0.1 and a warning is returned alongside it.
pub fn default_lambda_grid(y: &[f64], count: usize) -> Result<(LambdaGrid, Option<String>)> {
    if count < 2 {
        return Err(Error::config("default grid needs J >= 2"));
    }
    if y.is_empty() || y.iter().any(|v| !v.is_finite()) {
        return Err(Error::data("outcomes must be nonempty and finite"));
    }
    let max_abs = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max_abs <= GRID_FLOOR {
        let warning = format!("max |y| = {max_abs} is not above {GRID_FLOOR}; using the single-point grid");
        return Ok((LambdaGrid(vec![GRID_FLOOR]), Some(warning)));
    }
    Ok((LambdaGrid::spaced(GRID_FLOOR, max_abs, count, GridSpacing::Log)?, None))
}

/// Outcome of a grid search over λ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaSelection {
    pub chosen_index: usize,
    pub chosen_lambda: f64,
    /// Squared-error criterion per grid value.
    pub cv_mse: Vec<f64>,
    /// Weights fitted for each grid value on the full level-one matrix
    /// (partial CV only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub weights: Vec<SimplexWeights>,
}

/// Lowest index among the minima.
fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (j, v) in values.iter().enumerate() {
        if *v < values[best] {
            best = j;
        }
    }
    best
}

fn squared_error_sum(level_one: &LevelOneMatrix, rows: &[usize], y: &[f64], alpha: &SimplexWeights) -> f64 {
    rows.iter().map(|&i| (y[i] - alpha.combine(level_one.z.row(i))).powi(2)).sum()
}

fn check_outcomes(level_one: &LevelOneMatrix, y: &[f64]) -> Result<()> {
    if level_one.n() != y.len() {
        return Err(Error::dim(format!("{} level-one rows for {} outcomes", level_one.n(), y.len())));
    }
    Ok(())
}

/// Fits weights for every λ on the same level-one matrix and keeps the one
/// whose ensemble has the smallest squared error on that matrix.
pub fn partial_cv_select(
    level_one: &LevelOneMatrix,
    y: &[f64],
    grid: &LambdaGrid,
    mode: EnsembleMode,
    opts: &MetaSolveOptions,
) -> Result<LambdaSelection> {
    check_outcomes(level_one, y)?;
    let all: Vec<usize> = (0..y.len()).collect();
    let weights: Vec<SimplexWeights> = grid
        .values()
        .par_iter()
        .map(|&lam| fit_weights(level_one, y, LossKind::huber(lam)?, mode, opts))
        .collect::<Result<_>>()?;
    let n = y.len() as f64;
    let cv_mse: Vec<f64> = weights.iter().map(|a| squared_error_sum(level_one, &all, y, a) / n).collect();
    let chosen_index = argmin(&cv_mse);
    Ok(LambdaSelection { chosen_index, chosen_lambda: grid.values()[chosen_index], cv_mse, weights })
}

/// Inner level-one matrices, one per outer training sample.
#[derive(Debug, Clone)]
pub struct NestedInner {
    /// Outer training indices per fold.
    pub outer_train: Vec<Vec<usize>>,
    pub inner: Vec<LevelOneMatrix>,
    pub log: FitLog,
}

pub(crate) fn inner_seed(seed: u64, v: usize) -> u64 {
    seed::derive(seed, &[seed::tag("inner-cv"), v as u64])
}

/// Runs a `D`-fold cross-validation inside every outer training sample.
pub fn build_nested_inner(
    data: &Dataset,
    learners: &Registry,
    outer: &FoldPlan,
    inner_folds: usize,
    seed: u64,
) -> Result<NestedInner> {
    if inner_folds < 2 {
        return Err(Error::config("nested CV needs D >= 2"));
    }
    let fold_sizes = outer.fold_sizes();
    let smallest_train = data.n() - fold_sizes.iter().max().copied().unwrap_or(0);
    if smallest_train < inner_folds || smallest_train - smallest_train.div_ceil(inner_folds) < 2 {
        return Err(Error::config(format!(
            "outer training sample of {smallest_train} rows is too small for {inner_folds} inner folds"
        )));
    }
    let results: Vec<(Vec<usize>, LevelOneMatrix, FitLog)> = (0..outer.folds())
        .into_par_iter()
        .map(|v| {
            let (train, _) = outer.split(v);
            let sub = data.subset(&train);
            let s = inner_seed(seed, v);
            let plan = make_folds(train.len(), inner_folds, s)?;
            let cv = cross_validate(&sub, learners, &plan, s, false)?;
            Ok((train, cv.level_one, cv.log))
        })
        .collect::<Result<_>>()?;
    let mut out = NestedInner { outer_train: Vec::new(), inner: Vec::new(), log: FitLog::default() };
    for (train, l1, log) in results {
        out.outer_train.push(train);
        out.inner.push(l1);
        out.log.merge(log);
    }
    Ok(out)
}

/// Nested-CV selection result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NestedSelection {
    pub selection: LambdaSelection,
    /// Weights re-solved on the full level-one matrix at the chosen λ.
    pub weights: SimplexWeights,
    /// `fold_weights[j][v]`: inner ensemble for λ_j trained on outer sample `v`.
    pub fold_weights: Vec<Vec<SimplexWeights>>,
}

/// Scores inner ensembles on the outer validation folds.
///
/// The row `i` of `outer` holds the predictions of learners trained on the
/// outer training sample of `i`'s fold, so `outer.z[i]·α_{j,v}` is the outer
/// ensemble prediction of observation `i`.
pub fn nested_select_from(
    inner: &NestedInner,
    outer: &LevelOneMatrix,
    y: &[f64],
    grid: &LambdaGrid,
    mode: EnsembleMode,
    opts: &MetaSolveOptions,
) -> Result<NestedSelection> {
    check_outcomes(outer, y)?;
    let v_count = outer.fold_plan.folds();
    if inner.inner.len() != v_count {
        return Err(Error::dim("inner matrices do not match the outer folds"));
    }
    let tasks: Vec<(usize, usize)> =
        (0..grid.len()).flat_map(|j| (0..v_count).map(move |v| (j, v))).collect();
    let solved: Vec<SimplexWeights> = tasks
        .par_iter()
        .map(|&(j, v)| {
            let y_train: Vec<f64> = inner.outer_train[v].iter().map(|&i| y[i]).collect();
            fit_weights(&inner.inner[v], &y_train, LossKind::huber(grid.values()[j])?, mode, opts)
        })
        .collect::<Result<_>>()?;
    let mut fold_weights: Vec<Vec<SimplexWeights>> = vec![Vec::with_capacity(v_count); grid.len()];
    for (&(j, _), w) in tasks.iter().zip(solved) {
        fold_weights[j].push(w);
    }
    let valid: Vec<Vec<usize>> = (0..v_count).map(|v| outer.fold_plan.split(v).1).collect();
    let n = y.len() as f64;
    let cv_mse: Vec<f64> = fold_weights
        .iter()
        .map(|per_fold| {
            (0..v_count).map(|v| squared_error_sum(outer, &valid[v], y, &per_fold[v])).sum::<f64>() / n
        })
        .collect();
    let chosen_index = argmin(&cv_mse);
    let chosen_lambda = grid.values()[chosen_index];
    let weights = fit_weights(outer, y, LossKind::huber(chosen_lambda)?, mode, opts)?;
    Ok(NestedSelection {
        selection: LambdaSelection { chosen_index, chosen_lambda, cv_mse, weights: Vec::new() },
        weights,
        fold_weights,
    })
}

/// Nested-CV λ selection from scratch: outer `V`-fold level-one matrix, then a
/// `D`-fold cross-validation inside each outer training sample.
#[allow(clippy::too_many_arguments)]
pub fn nested_cv_select(
    data: &Dataset,
    learners: &Registry,
    grid: &LambdaGrid,
    outer_folds: usize,
    inner_folds: usize,
    seed: u64,
    mode: EnsembleMode,
    opts: &MetaSolveOptions,
) -> Result<(NestedSelection, FitLog)> {
    let plan = make_folds(data.n(), outer_folds, seed)?;
    let outer = cross_validate(data, learners, &plan, seed, false)?;
    let inner = build_nested_inner(data, learners, &plan, inner_folds, seed)?;
    let sel = nested_select_from(&inner, &outer.level_one, &data.y, grid, mode, opts)?;
    let mut log = outer.log;
    log.merge(inner.log);
    Ok((sel, log))
}
