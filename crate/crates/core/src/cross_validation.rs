//! Fold construction and assembly of the level-one (out-of-fold prediction) matrix.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Matrix};
use crate::error::{Error, Result};
use crate::learners::{self, FittedLearner, Registry};
use crate::seed;

/// Assignment of `n` observations to `V` mutually exclusive, exhaustive folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    n: usize,
    folds: usize,
    assignment: Vec<usize>,
}

impl FoldPlan {
    /// Builds a plan from an explicit assignment; every fold must be nonempty.
    pub fn from_assignment(folds: usize, assignment: Vec<usize>) -> Result<Self> {
        let n = assignment.len();
        if folds < 2 || folds > n {
            return Err(Error::config(format!("need 2 <= V <= n, got V={folds}, n={n}")));
        }
        let mut sizes = vec![0usize; folds];
        for &a in &assignment {
            if a >= folds {
                return Err(Error::config(format!("fold index {a} out of range for V={folds}")));
            }
            sizes[a] += 1;
        }
        if sizes.contains(&0) {
            return Err(Error::config("every fold must contain at least one observation"));
        }
        Ok(Self { n, folds, assignment })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn folds(&self) -> usize {
        self.folds
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn fold_of(&self, i: usize) -> usize {
        self.assignment[i]
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.folds];
        for &a in &self.assignment {
            sizes[a] += 1;
        }
        sizes
    }

    /// `(training, validation)` indices of fold `v`, both ascending.
    pub fn split(&self, v: usize) -> (Vec<usize>, Vec<usize>) {
        (0..self.n).partition(|&i| self.assignment[i] != v)
    }

    /// Per-observation weight `1 / |I_v(i)|`, so weighted sums are sums of fold means.
    pub fn fold_mean_weights(&self) -> Vec<f64> {
        let sizes = self.fold_sizes();
        self.assignment.iter().map(|&a| 1.0 / sizes[a] as f64).collect()
    }
}

/// Uniform random permutation followed by round-robin assignment.
pub fn make_folds(n: usize, folds: usize, seed: u64) -> Result<FoldPlan> {
    if folds < 2 || folds > n {
        return Err(Error::config(format!("need 2 <= V <= n, got V={folds}, n={n}")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut seed::rng(seed));
    let mut assignment = vec![0; n];
    for (pos, &i) in perm.iter().enumerate() {
        assignment[i] = pos % folds;
    }
    Ok(FoldPlan { n, folds, assignment })
}

/// Like [`make_folds`] but deals zero and positive outcomes separately so each
/// fold sees a similar share of zeros. Fold sizes still differ by at most one.
pub fn make_folds_stratified_zero(y: &[f64], folds: usize, seed: u64) -> Result<FoldPlan> {
    let n = y.len();
    if folds < 2 || folds > n {
        return Err(Error::config(format!("need 2 <= V <= n, got V={folds}, n={n}")));
    }
    let mut rng = seed::rng(seed);
    let (mut zeros, mut pos): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| y[i] == 0.0);
    zeros.shuffle(&mut rng);
    pos.shuffle(&mut rng);
    let mut assignment = vec![0; n];
    for (k, &i) in zeros.iter().chain(pos.iter()).enumerate() {
        assignment[i] = k % folds;
    }
    Ok(FoldPlan { n, folds, assignment })
}

/// Out-of-fold base-learner predictions: `z[i][k]` comes from learner `k`
/// trained without fold `fold_of(i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelOneMatrix {
    pub z: Matrix,
    pub fold_plan: FoldPlan,
    pub learner_names: Vec<String>,
}

impl LevelOneMatrix {
    pub fn new(z: Matrix, fold_plan: FoldPlan, learner_names: Vec<String>) -> Result<Self> {
        if z.nrows() != fold_plan.n() {
            return Err(Error::dim("level-one rows do not match the fold plan"));
        }
        if z.ncols() != learner_names.len() {
            return Err(Error::dim("level-one columns do not match learner names"));
        }
        Ok(Self { z, fold_plan, learner_names })
    }

    pub fn n(&self) -> usize {
        self.z.nrows()
    }

    pub fn k(&self) -> usize {
        self.z.ncols()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitEvent {
    pub learner: String,
    /// Fold index for cross-validation fits; `None` for full-data fits.
    pub fold: Option<usize>,
    pub message: String,
}

/// Record of base-learner trainings and any degradations taken along the way.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitLog {
    pub base_fits: usize,
    pub events: Vec<FitEvent>,
}

impl FitLog {
    pub fn merge(&mut self, other: FitLog) {
        self.base_fits += other.base_fits;
        self.events.extend(other.events);
    }
}

/// Fits one learner, replacing a failure by the training-mean predictor.
pub(crate) fn fit_or_fallback(
    spec: &learners::LearnerSpec,
    x: &Matrix,
    y: &[f64],
    seed: u64,
    fold: Option<usize>,
) -> (FittedLearner, Vec<FitEvent>) {
    let event = |message: String| FitEvent { learner: spec.name.clone(), fold, message };
    match learners::fit(spec, x, y, seed) {
        Ok(f) => {
            let events = f.notes.iter().map(|m| event(m.clone())).collect();
            (f, events)
        }
        Err(e) => {
            let f = learners::mean_fallback(spec, x, y, &e.to_string());
            let events = f.notes.iter().map(|m| event(m.clone())).collect();
            (f, events)
        }
    }
}

/// Level-one matrix plus, optionally, the `V x K` fold-specific fits.
#[derive(Debug, Clone)]
pub struct CrossValidated {
    pub level_one: LevelOneMatrix,
    pub log: FitLog,
    /// `fold_fits[v][k]`, kept only on request.
    pub fold_fits: Option<Vec<Vec<FittedLearner>>>,
}

/// Seed of learner `k` trained on the training sample of fold `v`.
pub(crate) fn fold_fit_seed(seed: u64, k: usize, v: usize) -> u64 {
    seed::derive(seed, &[seed::tag("fold-fit"), k as u64, v as u64])
}

pub fn build_level_one(data: &Dataset, learners: &Registry, plan: &FoldPlan, seed: u64) -> Result<LevelOneMatrix> {
    Ok(cross_validate(data, learners, plan, seed, false)?.level_one)
}

/// Trains every learner on every training split and collects out-of-fold predictions.
pub fn cross_validate(
    data: &Dataset,
    learners: &Registry,
    plan: &FoldPlan,
    seed: u64,
    keep_fits: bool,
) -> Result<CrossValidated> {
    if plan.n() != data.n() {
        return Err(Error::dim(format!("fold plan covers {} rows, data has {}", plan.n(), data.n())));
    }
    let k_count = learners.len();
    let v_count = plan.folds();
    let splits: Vec<(Vec<usize>, Vec<usize>)> = (0..v_count).map(|v| plan.split(v)).collect();
    let tasks: Vec<(usize, usize)> = (0..v_count).flat_map(|v| (0..k_count).map(move |k| (v, k))).collect();
    let results: Vec<(Vec<f64>, FittedLearner, Vec<FitEvent>)> = tasks
        .par_iter()
        .map(|&(v, k)| {
            let (train, valid) = &splits[v];
            let x_train = data.x.select_rows(train);
            let y_train: Vec<f64> = train.iter().map(|&i| data.y[i]).collect();
            let (fit, events) =
                fit_or_fallback(&learners.specs()[k], &x_train, &y_train, fold_fit_seed(seed, k, v), Some(v));
            let preds = fit.predict(&data.x.select_rows(valid))?;
            Ok((preds, fit, events))
        })
        .collect::<Result<_>>()?;

    let mut z = Matrix::zeros(data.n(), k_count);
    let mut log = FitLog::default();
    let mut fold_fits: Vec<Vec<FittedLearner>> = Vec::new();
    for (&(v, k), (preds, fit, events)) in tasks.iter().zip(results) {
        for (&i, p) in splits[v].1.iter().zip(preds) {
            z.set(i, k, p);
        }
        log.base_fits += 1;
        log.events.extend(events);
        if keep_fits {
            if k == 0 {
                fold_fits.push(Vec::with_capacity(k_count));
            }
            fold_fits[v].push(fit);
        }
    }
    Ok(CrossValidated {
        level_one: LevelOneMatrix::new(z, plan.clone(), learners.names())?,
        log,
        fold_fits: keep_fits.then_some(fold_fits),
    })
}
