//! Simplex-constrained minimization of cross-validated risk over ensemble weights.
//!
//! The objective for weights `α` is
//! `F(α) = Σ_i w_i L(y_i - z_i·α) / Σ_i w_i` with `w_i = 1/|I_v(i)|`, i.e. the
//! average over folds of the per-fold mean loss. It is convex in `α` for both
//! loss kinds, so any stationary point on the simplex is a global minimum.

use serde::{Deserialize, Serialize};

use crate::cross_validation::LevelOneMatrix;
use crate::data::Matrix;
use crate::error::{Error, Result};
use crate::losses::LossKind;

/// Sum-to-one tolerance of [`SimplexWeights`].
pub const SIMPLEX_TOL: f64 = 1e-10;

/// Convex-combination weights: nonnegative and summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct SimplexWeights(Vec<f64>);

impl SimplexWeights {
    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        if alpha.is_empty() {
            return Err(Error::domain("weight vector is empty"));
        }
        if alpha.iter().any(|a| !a.is_finite() || *a < 0.0) {
            return Err(Error::domain("weights must be finite and nonnegative"));
        }
        let s: f64 = alpha.iter().sum();
        if (s - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::domain(format!("weights sum to {s}, not 1")));
        }
        Ok(Self(alpha))
    }

    pub fn uniform(k: usize) -> Self {
        Self(vec![1.0 / k as f64; k])
    }

    pub fn vertex(k: usize, at: usize) -> Self {
        let mut v = vec![0.0; k];
        v[at] = 1.0;
        Self(v)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the active coordinate when the weights are one-hot.
    pub fn vertex_index(&self) -> Option<usize> {
        let ones: Vec<usize> = (0..self.0.len()).filter(|&k| self.0[k] == 1.0).collect();
        (ones.len() == 1 && self.0.iter().filter(|&&a| a != 0.0).count() == 1).then(|| ones[0])
    }

    /// `Σ_k α_k z_k`.
    pub fn combine(&self, row: &[f64]) -> f64 {
        row.iter().zip(&self.0).map(|(z, a)| z * a).sum()
    }
}

impl TryFrom<Vec<f64>> for SimplexWeights {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<SimplexWeights> for Vec<f64> {
    fn from(w: SimplexWeights) -> Self {
        w.0
    }
}

/// Euclidean projection onto the probability simplex (sort-and-threshold).
pub fn project_to_simplex(v: &[f64]) -> Result<SimplexWeights> {
    if v.is_empty() {
        return Err(Error::domain("cannot project an empty vector"));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::domain("cannot project a non-finite vector"));
    }
    Ok(SimplexWeights(project_raw(v)))
}

fn project_raw(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cumsum += uj;
        let t = (cumsum - 1.0) / (j + 1) as f64;
        if uj - t > 0.0 {
            theta = t;
        }
    }
    let mut out: Vec<f64> = v.iter().map(|x| (x - theta).max(0.0)).collect();
    // Absorb rounding so the sum is 1 to working precision.
    let s: f64 = out.iter().sum();
    if s > 0.0 && s != 1.0 {
        out.iter_mut().for_each(|a| *a /= s);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialPoint {
    Uniform,
    Given(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetaSolveOptions {
    pub max_iterations: usize,
    pub relative_objective_tolerance: f64,
    /// Largest weight change still counted as converged.
    pub weight_tolerance: f64,
    pub initial_point: InitialPoint,
    /// When set, minimize over the lattice `{α : m·α ∈ ℕ^K}` by enumeration
    /// instead of continuously.
    pub grid_snap: Option<usize>,
}

impl Default for MetaSolveOptions {
    fn default() -> Self {
        Self {
            max_iterations: 5000,
            relative_objective_tolerance: 1e-9,
            weight_tolerance: 1e-8,
            initial_point: InitialPoint::Uniform,
            grid_snap: None,
        }
    }
}

impl MetaSolveOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::config("max_iterations must be >= 1"));
        }
        if !(self.relative_objective_tolerance > 0.0 && self.weight_tolerance > 0.0) {
            return Err(Error::config("solver tolerances must be positive"));
        }
        if self.grid_snap == Some(0) {
            return Err(Error::config("grid_snap resolution must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetaSolution {
    pub weights: SimplexWeights,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after each accepted iterate, starting with the initial point.
    pub trace: Vec<f64>,
}

/// Objective evaluator over a fixed design.
pub struct MetaProblem<'a> {
    z: &'a Matrix,
    y: &'a [f64],
    w: Vec<f64>,
    loss: LossKind,
}

impl<'a> MetaProblem<'a> {
    /// `obs_weights = None` weights every row equally.
    pub fn new(z: &'a Matrix, y: &'a [f64], obs_weights: Option<&[f64]>, loss: LossKind) -> Result<Self> {
        if z.nrows() != y.len() {
            return Err(Error::dim(format!("{} level-one rows for {} outcomes", z.nrows(), y.len())));
        }
        if z.ncols() == 0 || z.nrows() == 0 {
            return Err(Error::dim("level-one matrix is empty"));
        }
        if !z.all_finite() {
            return Err(Error::domain("level-one matrix has non-finite entries"));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("outcomes contain non-finite values"));
        }
        let w = match obs_weights {
            Some(w) => {
                if w.len() != y.len() {
                    return Err(Error::dim("observation weights do not match outcomes"));
                }
                let s: f64 = w.iter().sum();
                w.iter().map(|v| v / s).collect()
            }
            None => vec![1.0 / y.len() as f64; y.len()],
        };
        Ok(Self { z, y, w, loss })
    }

    pub fn k(&self) -> usize {
        self.z.ncols()
    }

    pub fn objective(&self, alpha: &[f64]) -> f64 {
        let mut f = 0.0;
        for i in 0..self.y.len() {
            let r = self.y[i] - dot(self.z.row(i), alpha);
            f += self.w[i] * self.loss.value_unchecked(r);
        }
        f
    }

    fn objective_and_gradient(&self, alpha: &[f64], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut f = 0.0;
        for i in 0..self.y.len() {
            let row = self.z.row(i);
            let r = self.y[i] - dot(row, alpha);
            f += self.w[i] * self.loss.value_unchecked(r);
            let d = self.w[i] * self.loss.derivative_unchecked(r);
            for (g, zk) in grad.iter_mut().zip(row) {
                *g -= d * zk;
            }
        }
        f
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimizes the cross-validated risk of `Zα` over the simplex.
pub fn solve_weights(
    level_one: &LevelOneMatrix,
    y: &[f64],
    loss: LossKind,
    opts: &MetaSolveOptions,
) -> Result<SimplexWeights> {
    Ok(solve_weights_detailed(level_one, y, loss, opts)?.weights)
}

pub fn solve_weights_detailed(
    level_one: &LevelOneMatrix,
    y: &[f64],
    loss: LossKind,
    opts: &MetaSolveOptions,
) -> Result<MetaSolution> {
    let w = level_one.fold_plan.fold_mean_weights();
    let problem = MetaProblem::new(&level_one.z, y, Some(&w), loss)?;
    minimize(&problem, opts)
}

/// Continuous (or lattice, with `grid_snap`) minimization of a [`MetaProblem`].
///
/// Accelerated projected gradient: each step projects a gradient step taken from
/// a momentum-extrapolated point, with the step length found by backtracking
/// (halving) until the quadratic upper bound holds. A step that would raise the
/// objective is discarded and momentum restarts, so the accepted objective
/// sequence is nonincreasing.
pub fn minimize(problem: &MetaProblem<'_>, opts: &MetaSolveOptions) -> Result<MetaSolution> {
    opts.validate()?;
    let k = problem.k();
    if let Some(m) = opts.grid_snap {
        return Ok(lattice_minimum(problem, m));
    }
    let mut alpha = match &opts.initial_point {
        InitialPoint::Uniform => vec![1.0 / k as f64; k],
        InitialPoint::Given(v) => {
            if v.len() != k {
                return Err(Error::dim("initial point has the wrong length"));
            }
            project_to_simplex(v)?.0
        }
    };
    let f0 = problem.objective(&alpha);
    let mut trace = vec![f0];
    if k == 1 || f0 == 0.0 {
        return Ok(MetaSolution { weights: SimplexWeights(alpha), objective: f0, iterations: 0, converged: true, trace });
    }
    // Work with F / F(α0) so the unit initial step is scale free.
    let scale = f0;
    let mut f = 1.0;
    let mut prev = alpha.clone();
    let mut theta: f64 = 1.0;
    let mut step = 0.5;
    let mut grad = vec![0.0; k];
    let mut point = vec![0.0; k];
    let mut cand = vec![0.0; k];
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=opts.max_iterations {
        iterations = it;
        let theta_next = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
        let momentum = (theta - 1.0) / theta_next;
        for j in 0..k {
            point[j] = alpha[j] + momentum * (alpha[j] - prev[j]);
        }
        let mut f_cand = backtrack(problem, scale, &point, &mut grad, &mut step, &mut cand);
        let mut restarted = false;
        if f_cand > f && momentum != 0.0 {
            restarted = true;
            point.copy_from_slice(&alpha);
            f_cand = backtrack(problem, scale, &point, &mut grad, &mut step, &mut cand);
        }
        if f_cand > f {
            converged = true;
            break;
        }
        let rel_decrease = (f - f_cand) / f.abs().max(f64::MIN_POSITIVE);
        let max_move = cand.iter().zip(&alpha).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prev.copy_from_slice(&alpha);
        alpha.copy_from_slice(&cand);
        f = f_cand;
        trace.push(f * scale);
        theta = if restarted { 1.0 } else { theta_next };
        if (rel_decrease <= opts.relative_objective_tolerance && max_move <= opts.weight_tolerance)
            || max_move == 0.0
            || f == 0.0
        {
            converged = true;
            break;
        }
    }
    Ok(MetaSolution {
        objective: problem.objective(&alpha),
        weights: SimplexWeights(alpha),
        iterations,
        converged,
        trace,
    })
}

/// Projected gradient step from `point` with halving until the quadratic upper
/// bound holds. The trial step starts at twice the last accepted one.
fn backtrack(
    problem: &MetaProblem<'_>,
    scale: f64,
    point: &[f64],
    grad: &mut [f64],
    step: &mut f64,
    cand: &mut Vec<f64>,
) -> f64 {
    let k = point.len();
    let fp = problem.objective_and_gradient(point, grad) / scale;
    grad.iter_mut().for_each(|g| *g /= scale);
    let mut t = *step * 2.0;
    let mut trial = vec![0.0; k];
    loop {
        for j in 0..k {
            trial[j] = point[j] - t * grad[j];
        }
        *cand = project_raw(&trial);
        let f_cand = problem.objective(cand) / scale;
        let mut lin = 0.0;
        let mut sq = 0.0;
        for j in 0..k {
            let d = cand[j] - point[j];
            lin += grad[j] * d;
            sq += d * d;
        }
        if f_cand <= fp + lin + sq / (2.0 * t) + 1e-15 * fp.abs() || t < 1e-30 {
            *step = t;
            return f_cand;
        }
        t *= 0.5;
    }
}

/// Exhaustive minimum over the lattice of step `1/m`; ties keep the first point
/// in lexicographic enumeration order.
fn lattice_minimum(problem: &MetaProblem<'_>, m: usize) -> MetaSolution {
    let k = problem.k();
    let mut counts = vec![0usize; k];
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut evaluated = 0;
    enumerate_compositions(m, 0, &mut counts, &mut |c| {
        let alpha: Vec<f64> = c.iter().map(|&v| v as f64 / m as f64).collect();
        let f = problem.objective(&alpha);
        evaluated += 1;
        if best.as_ref().is_none_or(|(bf, _)| f < *bf) {
            best = Some((f, alpha));
        }
    });
    let (objective, alpha) = best.expect("lattice is nonempty");
    MetaSolution { weights: SimplexWeights(alpha), objective, iterations: evaluated, converged: true, trace: vec![objective] }
}

fn enumerate_compositions(remaining: usize, at: usize, counts: &mut [usize], visit: &mut dyn FnMut(&[usize])) {
    let k = counts.len();
    if at == k - 1 {
        counts[at] = remaining;
        visit(counts);
        return;
    }
    for c in (0..=remaining).rev() {
        counts[at] = c;
        enumerate_compositions(remaining - c, at + 1, counts, visit);
    }
}

/// Cross-validation selector: the single column with the lowest cross-validated risk.
pub fn discrete_select(level_one: &LevelOneMatrix, y: &[f64], loss: LossKind) -> Result<SimplexWeights> {
    let w = level_one.fold_plan.fold_mean_weights();
    let problem = MetaProblem::new(&level_one.z, y, Some(&w), loss)?;
    Ok(discrete_minimum(&problem))
}

pub(crate) fn discrete_minimum(problem: &MetaProblem<'_>) -> SimplexWeights {
    let k = problem.k();
    let mut best = (f64::INFINITY, 0);
    for j in 0..k {
        let f = problem.objective(SimplexWeights::vertex(k, j).as_slice());
        if f < best.0 {
            best = (f, j);
        }
    }
    SimplexWeights::vertex(k, best.1)
}

/// Convex weights or a single selected learner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleMode {
    #[default]
    Convex,
    Discrete,
}

impl EnsembleMode {
    pub fn label(self) -> &'static str {
        match self {
            EnsembleMode::Convex => "convex",
            EnsembleMode::Discrete => "discrete",
        }
    }
}

/// Weights for `level_one` under the given ensemble mode.
pub fn fit_weights(
    level_one: &LevelOneMatrix,
    y: &[f64],
    loss: LossKind,
    mode: EnsembleMode,
    opts: &MetaSolveOptions,
) -> Result<SimplexWeights> {
    match mode {
        EnsembleMode::Convex => solve_weights(level_one, y, loss, opts),
        EnsembleMode::Discrete => discrete_select(level_one, y, loss),
    }
}

/// Cross-validated objective of given weights, for reporting.
pub fn cv_objective(level_one: &LevelOneMatrix, y: &[f64], loss: LossKind, alpha: &SimplexWeights) -> Result<f64> {
    let w = level_one.fold_plan.fold_mean_weights();
    let problem = MetaProblem::new(&level_one.z, y, Some(&w), loss)?;
    if alpha.len() != problem.k() {
        return Err(Error::dim("weight length does not match level-one columns"));
    }
    Ok(problem.objective(alpha.as_slice()))
}

#[cfg(test)]
mod tests;
