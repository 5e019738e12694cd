//! Base-learner registry: each learner maps a training sample to a prediction function.
//!
//! Every fitted learner clamps its output to `[min(y) - range(y), max(y) + range(y)]`
//! of its own training outcomes, so predictions are bounded for any finite input.

mod knn;
mod linear;
mod logistic;
mod tree;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::data::{mean, Matrix};
use crate::error::{Error, Result};

pub use knn::KnnModel;
pub use linear::{lasso_fit, LassoFit, LinearModel};
pub use logistic::LogisticModel;
pub use tree::{Forest, Tree, TreeParams};

/// Default number of forest trees.
pub const DEFAULT_TREES: usize = 200;
/// Default minimum leaf size for forests.
pub const DEFAULT_MIN_LEAF: usize = 5;

fn default_trees() -> usize {
    DEFAULT_TREES
}

fn default_min_leaf() -> usize {
    DEFAULT_MIN_LEAF
}

fn default_tree_min_leaf() -> usize {
    1
}

/// Algorithm and hyperparameters of a base learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LearnerKind {
    Mean,
    Ols,
    Ridge {
        penalty: f64,
    },
    /// `penalty = None` selects the penalty by internal 5-fold CV.
    Lasso {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        penalty: Option<f64>,
    },
    Knn {
        k: usize,
    },
    RegressionTree {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max_depth: Option<usize>,
        #[serde(default = "default_tree_min_leaf")]
        min_leaf: usize,
    },
    RandomForest {
        #[serde(default = "default_trees")]
        trees: usize,
        /// Features tried per split; `None` means `ceil(p / 3)`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max_features: Option<usize>,
        #[serde(default = "default_min_leaf")]
        min_leaf: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max_depth: Option<usize>,
    },
    LogisticGlm,
    TwoStage {
        stage1: Box<LearnerSpec>,
        stage2: Box<LearnerSpec>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: LearnerKind,
}

impl LearnerSpec {
    pub fn new(name: impl Into<String>, kind: LearnerKind) -> Self {
        Self { name: name.into(), kind }
    }

    pub fn mean() -> Self {
        Self::new("mean", LearnerKind::Mean)
    }

    pub fn ols() -> Self {
        Self::new("ols", LearnerKind::Ols)
    }

    pub fn lasso() -> Self {
        Self::new("lasso", LearnerKind::Lasso { penalty: None })
    }

    pub fn knn(k: usize) -> Self {
        Self::new(format!("knn{k}"), LearnerKind::Knn { k })
    }

    pub fn random_forest(trees: usize) -> Self {
        Self::new(
            "rf",
            LearnerKind::RandomForest {
                trees,
                max_features: None,
                min_leaf: DEFAULT_MIN_LEAF,
                max_depth: None,
            },
        )
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::config(format!("learner '{}': {msg}", self.name)));
        match &self.kind {
            LearnerKind::Ridge { penalty } if !(penalty.is_finite() && *penalty >= 0.0) => {
                bad("ridge penalty must be finite and >= 0")
            }
            LearnerKind::Lasso { penalty: Some(p) } if !(p.is_finite() && *p >= 0.0) => {
                bad("lasso penalty must be finite and >= 0")
            }
            LearnerKind::Knn { k } if *k == 0 => bad("k must be >= 1"),
            LearnerKind::RegressionTree { max_depth, min_leaf } => {
                if *max_depth == Some(0) {
                    bad("tree depth must be >= 1")
                } else if *min_leaf == 0 {
                    bad("min_leaf must be >= 1")
                } else {
                    Ok(())
                }
            }
            LearnerKind::RandomForest { trees, max_features, min_leaf, max_depth } => {
                if *trees == 0 {
                    bad("forest size must be >= 1")
                } else if *max_features == Some(0) {
                    bad("max_features must be >= 1")
                } else if *min_leaf == 0 {
                    bad("min_leaf must be >= 1")
                } else if *max_depth == Some(0) {
                    bad("tree depth must be >= 1")
                } else {
                    Ok(())
                }
            }
            LearnerKind::TwoStage { stage1, stage2 } => {
                stage1.validate()?;
                stage2.validate()
            }
            _ => Ok(()),
        }
    }
}

/// Validated, ordered collection of learner specs with unique names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<LearnerSpec>", into = "Vec<LearnerSpec>")]
pub struct Registry(Vec<LearnerSpec>);

impl Registry {
    pub fn new(specs: Vec<LearnerSpec>) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::config("learner registry is empty"));
        }
        let mut seen = BTreeSet::new();
        for s in &specs {
            s.validate()?;
            if !seen.insert(s.name.as_str()) {
                return Err(Error::config(format!("duplicate learner name '{}'", s.name)));
            }
        }
        Ok(Self(specs))
    }

    pub fn specs(&self) -> &[LearnerSpec] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.0.iter().map(|s| s.name.clone()).collect()
    }
}

impl TryFrom<Vec<LearnerSpec>> for Registry {
    type Error = Error;
    fn try_from(v: Vec<LearnerSpec>) -> Result<Self> {
        Registry::new(v)
    }
}

impl From<Registry> for Vec<LearnerSpec> {
    fn from(r: Registry) -> Self {
        r.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum FittedState {
    Constant { value: f64 },
    Linear(LinearModel),
    Knn(KnnModel),
    Tree(Tree),
    Forest(Forest),
    Logistic(LogisticModel),
    TwoStage { stage1: Box<FittedLearner>, stage2: Box<FittedLearner> },
}

/// A trained learner. Immutable after fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedLearner {
    pub spec: LearnerSpec,
    pub n_features: usize,
    /// Output range `[lo, hi]`.
    pub clamp: (f64, f64),
    /// Degradations taken during fitting (fallback paths), in order.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
    state: FittedState,
}

fn clamp_range(y: &[f64]) -> (f64, f64) {
    let lo = y.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    (lo - range, hi + range)
}

fn check_training(x: &Matrix, y: &[f64]) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::dim(format!("{} rows but {} outcomes", x.nrows(), y.len())));
    }
    if y.len() < 2 {
        return Err(Error::data("at least two observations are required to fit"));
    }
    if !x.all_finite() || y.iter().any(|v| !v.is_finite()) {
        return Err(Error::data("training data contain non-finite values"));
    }
    Ok(())
}

/// Fits `spec` on `(x, y)`. Deterministic given `seed`.
pub fn fit(spec: &LearnerSpec, x: &Matrix, y: &[f64], seed: u64) -> Result<FittedLearner> {
    check_training(x, y)?;
    spec.validate()?;
    let mut notes = Vec::new();
    let state = match &spec.kind {
        LearnerKind::Mean => FittedState::Constant { value: mean(y) },
        LearnerKind::Ols => {
            let (m, singular) = linear::ols(x, y)?;
            if singular {
                notes.push("singular design: fell back to ridge(1e-8)".to_string());
            }
            FittedState::Linear(m)
        }
        LearnerKind::Ridge { penalty } => FittedState::Linear(linear::ridge(x, y, *penalty)?),
        LearnerKind::Lasso { penalty } => {
            let fit = match penalty {
                Some(p) => linear::lasso_fit(x, y, *p)?,
                None => linear::lasso_cv(x, y, seed)?,
            };
            FittedState::Linear(fit.model)
        }
        LearnerKind::Knn { k } => FittedState::Knn(KnnModel::fit(x, y, *k)),
        LearnerKind::RegressionTree { max_depth, min_leaf } => {
            let params = TreeParams { max_depth: *max_depth, min_leaf: *min_leaf, max_features: None };
            FittedState::Tree(Tree::fit(x, y, &params, seed))
        }
        LearnerKind::RandomForest { trees, max_features, min_leaf, max_depth } => {
            let params = TreeParams {
                max_depth: *max_depth,
                min_leaf: *min_leaf,
                max_features: Some(max_features.unwrap_or_else(|| x.ncols().div_ceil(3).max(1))),
            };
            FittedState::Forest(Forest::fit(x, y, *trees, &params, seed))
        }
        LearnerKind::LogisticGlm => {
            let (m, separated) = LogisticModel::fit(x, y)?;
            if separated {
                notes.push("quasi-separation: ridge-stabilized fit".to_string());
            }
            FittedState::Logistic(m)
        }
        LearnerKind::TwoStage { stage1, stage2 } => {
            return fit_two_stage(stage1, stage2, x, y, seed);
        }
    };
    let clamp = match state {
        FittedState::Logistic(_) => (0.0, 1.0),
        _ => clamp_range(y),
    };
    Ok(FittedLearner { spec: spec.clone(), n_features: x.ncols(), clamp, notes, state })
}

/// Zero-inflated composite: `P(Y > 0 | x) * E[Y | Y > 0, x]`.
///
/// Without zeros the stage-2 model is returned alone; without positives the
/// composite degrades to the mean learner.
pub fn fit_two_stage(
    stage1: &LearnerSpec,
    stage2: &LearnerSpec,
    x: &Matrix,
    y: &[f64],
    seed: u64,
) -> Result<FittedLearner> {
    check_training(x, y)?;
    if y.iter().any(|&v| v < 0.0) {
        return Err(Error::domain("two-stage learner requires nonnegative outcomes"));
    }
    let spec = LearnerSpec::new(
        format!("{}*{}", stage1.name, stage2.name),
        LearnerKind::TwoStage { stage1: Box::new(stage1.clone()), stage2: Box::new(stage2.clone()) },
    );
    let positive: Vec<usize> = (0..y.len()).filter(|&i| y[i] > 0.0).collect();
    let clamp = clamp_range(y);
    if positive.is_empty() {
        return Ok(FittedLearner {
            spec,
            n_features: x.ncols(),
            clamp,
            notes: vec!["no positive outcomes: mean learner".to_string()],
            state: FittedState::Constant { value: mean(y) },
        });
    }
    let x_pos = x.select_rows(&positive);
    let y_pos: Vec<f64> = positive.iter().map(|&i| y[i]).collect();
    if positive.len() == y.len() {
        let mut inner = fit(stage2, x, y, crate::seed::derive(seed, &[2]))?;
        inner.notes.push("no zero outcomes: stage-2 model alone".to_string());
        inner.spec = spec;
        return Ok(inner);
    }
    let indicator: Vec<f64> = y.iter().map(|&v| if v > 0.0 { 1.0 } else { 0.0 }).collect();
    let mut s1 = fit(stage1, x, &indicator, crate::seed::derive(seed, &[1]))?;
    s1.clamp = (0.0, 1.0);
    let s2 = if y_pos.len() >= 2 {
        fit(stage2, &x_pos, &y_pos, crate::seed::derive(seed, &[2]))?
    } else {
        let v = y_pos[0];
        FittedLearner {
            spec: stage2.clone(),
            n_features: x.ncols(),
            clamp: (v, v),
            notes: vec!["single positive outcome: constant stage 2".to_string()],
            state: FittedState::Constant { value: v },
        }
    };
    Ok(FittedLearner {
        spec,
        n_features: x.ncols(),
        clamp,
        notes: Vec::new(),
        state: FittedState::TwoStage { stage1: Box::new(s1), stage2: Box::new(s2) },
    })
}

/// Constant predictor at the training mean; used when a learner fails on a split.
pub fn mean_fallback(spec: &LearnerSpec, x: &Matrix, y: &[f64], reason: &str) -> FittedLearner {
    FittedLearner {
        spec: spec.clone(),
        n_features: x.ncols(),
        clamp: clamp_range(y),
        notes: vec![format!("fit failed ({reason}): training-mean fallback")],
        state: FittedState::Constant { value: mean(y) },
    }
}

impl FittedLearner {
    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        if x.ncols() != self.n_features {
            return Err(Error::dim(format!(
                "learner '{}' trained on {} features, got {}",
                self.spec.name,
                self.n_features,
                x.ncols()
            )));
        }
        let raw = match &self.state {
            FittedState::Constant { value } => vec![*value; x.nrows()],
            FittedState::Linear(m) => x.rows().map(|r| m.predict_row(r)).collect(),
            FittedState::Knn(m) => m.predict(x),
            FittedState::Tree(t) => x.rows().map(|r| t.predict_row(r)).collect(),
            FittedState::Forest(f) => f.predict(x),
            FittedState::Logistic(m) => x.rows().map(|r| m.probability(r)).collect(),
            FittedState::TwoStage { stage1, stage2 } => {
                let p = stage1.predict(x)?;
                let m = stage2.predict(x)?;
                p.iter().zip(&m).map(|(a, b)| a * b).collect()
            }
        };
        let (lo, hi) = self.clamp;
        Ok(raw
            .into_iter()
            .map(|v| if v.is_finite() { v.clamp(lo, hi) } else { 0.5 * (lo + hi) })
            .collect())
    }

    /// Fitted linear coefficients `(intercept, slopes)` for linear and logistic learners.
    pub fn linear_coefficients(&self) -> Option<(f64, &[f64])> {
        match &self.state {
            FittedState::Linear(m) => Some((m.intercept, &m.coef)),
            FittedState::Logistic(m) => Some((m.intercept, &m.coef)),
            _ => None,
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.state, FittedState::Constant { .. })
    }
}
