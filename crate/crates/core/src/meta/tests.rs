use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::*;
use crate::cross_validation::{make_folds, FoldPlan};
use crate::seed;

fn level_one(z: Matrix, plan: FoldPlan) -> LevelOneMatrix {
    let k = z.ncols();
    LevelOneMatrix::new(z, plan, (0..k).map(|j| format!("c{j}")).collect()).unwrap()
}

/// Correlated columns around a signal, plus outcome with heavy-tailed noise.
fn random_problem(n: usize, k: usize, s: u64) -> (LevelOneMatrix, Vec<f64>) {
    let mut rng = seed::rng(s);
    let signal: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let y: Vec<f64> = signal
        .iter()
        .map(|m| {
            let e: f64 = StandardNormal.sample(&mut rng);
            m + if rng.random::<f64>() < 0.1 { 8.0 * e } else { 0.5 * e }
        })
        .collect();
    let mut z = Matrix::zeros(n, k);
    for i in 0..n {
        for j in 0..k {
            let noise: f64 = StandardNormal.sample(&mut rng);
            z.set(i, j, signal[i] * (0.5 + 0.3 * j as f64) + noise * (0.3 + 0.2 * j as f64));
        }
    }
    (level_one(z, make_folds(n, 5, s).unwrap()), y)
}

/// Objective written out independently of the solver.
fn oracle_objective(l1: &LevelOneMatrix, y: &[f64], loss: LossKind, alpha: &[f64]) -> f64 {
    let v = l1.fold_plan.folds();
    let mut total = 0.0;
    for fold in 0..v {
        let (_, valid) = l1.fold_plan.split(fold);
        let s: f64 = valid
            .iter()
            .map(|&i| {
                let pred: f64 = (0..l1.k()).map(|j| alpha[j] * l1.z.get(i, j)).sum();
                let r = y[i] - pred;
                match loss {
                    LossKind::Squared => r * r,
                    LossKind::Huber(p) => {
                        let lam = p.lambda();
                        if r.abs() <= lam { 0.5 * r * r } else { lam * (r.abs() - 0.5 * lam) }
                    }
                }
            })
            .sum();
        total += s / valid.len() as f64;
    }
    total / v as f64
}

fn grid_minimum(l1: &LevelOneMatrix, y: &[f64], loss: LossKind, m: usize) -> f64 {
    let mut best = f64::INFINITY;
    for a in 0..=m {
        for b in 0..=(m - a) {
            let alpha = [a as f64 / m as f64, b as f64 / m as f64, (m - a - b) as f64 / m as f64];
            best = best.min(oracle_objective(l1, y, loss, &alpha));
        }
    }
    best
}

#[test]
fn projection_examples() {
    assert_eq!(project_to_simplex(&[0.2, 0.3, 0.5]).unwrap().as_slice(), &[0.2, 0.3, 0.5]);
    assert_eq!(project_to_simplex(&[5.0, 0.0]).unwrap().as_slice(), &[1.0, 0.0]);
    let p = project_to_simplex(&[1.0, 1.0, -3.0]).unwrap();
    assert_eq!(p.as_slice(), &[0.5, 0.5, 0.0]);
    assert!(project_to_simplex(&[]).is_err());
    assert!(project_to_simplex(&[f64::NAN]).is_err());
}

#[test]
fn simplex_weights_validate() {
    assert!(SimplexWeights::new(vec![0.5, 0.5]).is_ok());
    assert!(SimplexWeights::new(vec![0.6, 0.5]).is_err());
    assert!(SimplexWeights::new(vec![1.5, -0.5]).is_err());
    assert!(serde_json::from_str::<SimplexWeights>("[0.7, 0.7]").is_err());
    assert_eq!(SimplexWeights::vertex(3, 1).vertex_index(), Some(1));
    assert_eq!(SimplexWeights::uniform(2).vertex_index(), None);
}

#[test]
fn matches_lattice_oracle_for_both_losses() {
    for s in 0..4 {
        let (l1, y) = random_problem(120, 3, 100 + s);
        for loss in [LossKind::Squared, LossKind::huber(0.5).unwrap(), LossKind::huber(3.0).unwrap()] {
            let sol = solve_weights_detailed(&l1, &y, loss, &MetaSolveOptions::default()).unwrap();
            let f = oracle_objective(&l1, &y, loss, sol.weights.as_slice());
            assert!((f - sol.objective).abs() <= 1e-12 * f.max(1.0));
            let grid = grid_minimum(&l1, &y, loss, 400);
            assert!(f <= grid + 1e-7, "seed {s}: solver {f} vs grid {grid}");
        }
    }
}

#[test]
fn grid_snap_returns_lattice_minimum() {
    let (l1, y) = random_problem(80, 3, 7);
    let loss = LossKind::huber(1.0).unwrap();
    let opts = MetaSolveOptions { grid_snap: Some(50), ..Default::default() };
    let sol = solve_weights_detailed(&l1, &y, loss, &opts).unwrap();
    assert!((sol.objective - grid_minimum(&l1, &y, loss, 50)).abs() < 1e-12);
    for a in sol.weights.as_slice() {
        assert!(((a * 50.0).round() - a * 50.0).abs() < 1e-9);
    }
}

#[test]
fn exact_column_is_found() {
    let mut rng = seed::rng(3);
    let n = 60;
    let y: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let mut z = Matrix::zeros(n, 3);
    for i in 0..n {
        z.set(i, 0, StandardNormal.sample(&mut rng));
        z.set(i, 1, y[i]);
        z.set(i, 2, StandardNormal.sample(&mut rng));
    }
    let l1 = level_one(z, make_folds(n, 5, 1).unwrap());
    for loss in [LossKind::Squared, LossKind::huber(0.3).unwrap()] {
        let sol = solve_weights_detailed(&l1, &y, loss, &MetaSolveOptions::default()).unwrap();
        assert!((sol.weights.as_slice()[1] - 1.0).abs() < 1e-4);
        assert!(sol.objective <= 1e-8);
    }
}

#[test]
fn objective_trace_never_increases() {
    for s in 0..5 {
        let (l1, y) = random_problem(150, 4, 200 + s);
        let sol = solve_weights_detailed(&l1, &y, LossKind::huber(0.8).unwrap(), &MetaSolveOptions::default()).unwrap();
        assert!(sol.converged);
        for w in sol.trace.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }
}

#[test]
fn wide_huber_matches_squared_loss() {
    for s in 0..5 {
        let (l1, y) = random_problem(100, 4, 300 + s);
        let max_y = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let max_z = l1.z.as_slice().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let huber = LossKind::huber(max_y + max_z).unwrap();
        let a = solve_weights(&l1, &y, huber, &MetaSolveOptions::default()).unwrap();
        let b = solve_weights(&l1, &y, LossKind::Squared, &MetaSolveOptions::default()).unwrap();
        for (x, w) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((x - w).abs() <= 1e-5);
        }
    }
}

#[test]
fn weights_are_scale_equivariant() {
    let (l1, y) = random_problem(100, 3, 41);
    let lam = 0.7;
    let base = solve_weights(&l1, &y, LossKind::huber(lam).unwrap(), &MetaSolveOptions::default()).unwrap();
    for c in [0.01, 4.0, 1000.0] {
        let mut z = l1.z.clone();
        for i in 0..z.nrows() {
            for j in 0..z.ncols() {
                z.set(i, j, z.get(i, j) * c);
            }
        }
        let scaled = level_one(z, l1.fold_plan.clone());
        let yc: Vec<f64> = y.iter().map(|v| v * c).collect();
        let w = solve_weights(&scaled, &yc, LossKind::huber(lam * c).unwrap(), &MetaSolveOptions::default()).unwrap();
        for (a, b) in base.as_slice().iter().zip(w.as_slice()) {
            assert!((a - b).abs() < 1e-6, "scale {c}");
        }
    }
}

#[test]
fn discrete_select_picks_lowest_risk_column() {
    let n = 40;
    let y: Vec<f64> = (0..n).map(|i| i as f64).collect();
    let mut z = Matrix::zeros(n, 3);
    for i in 0..n {
        z.set(i, 0, y[i] + 3.0);
        z.set(i, 1, y[i] + 1.0);
        z.set(i, 2, y[i] - 1.0);
    }
    let l1 = level_one(z, make_folds(n, 4, 0).unwrap());
    let w = discrete_select(&l1, &y, LossKind::Squared).unwrap();
    assert_eq!(w.vertex_index(), Some(1));
}

#[test]
fn single_column_and_zero_objective_short_circuit() {
    let y = vec![1.0, 2.0, 3.0, 4.0];
    let l1 = level_one(Matrix::column_vector(&[0.0, 0.0, 1.0, 1.0]), make_folds(4, 2, 0).unwrap());
    let w = solve_weights(&l1, &y, LossKind::Squared, &MetaSolveOptions::default()).unwrap();
    assert_eq!(w.as_slice(), &[1.0]);
    let z = Matrix::from_rows(&y.iter().map(|v| vec![*v, *v]).collect::<Vec<_>>()).unwrap();
    let l1 = level_one(z, make_folds(4, 2, 0).unwrap());
    let sol = solve_weights_detailed(&l1, &y, LossKind::Squared, &MetaSolveOptions::default()).unwrap();
    assert_eq!(sol.iterations, 0);
}

#[test]
fn rejects_mismatched_inputs() {
    let (l1, y) = random_problem(20, 2, 1);
    assert!(matches!(solve_weights(&l1, &y[..10], LossKind::Squared, &MetaSolveOptions::default()), Err(Error::Dimension(_))));
    let mut bad = y.clone();
    bad[0] = f64::INFINITY;
    assert!(solve_weights(&l1, &bad, LossKind::Squared, &MetaSolveOptions::default()).is_err());
    let opts = MetaSolveOptions { max_iterations: 0, ..Default::default() };
    assert!(matches!(solve_weights(&l1, &y, LossKind::Squared, &opts), Err(Error::Config(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn projection_is_feasible_and_idempotent(v in prop::collection::vec(-100.0f64..100.0, 1..8)) {
        let p = project_to_simplex(&v).unwrap();
        prop_assert!(p.as_slice().iter().all(|&a| a >= 0.0));
        prop_assert!((p.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-10);
        let again = project_to_simplex(p.as_slice()).unwrap();
        for (a, b) in p.as_slice().iter().zip(again.as_slice()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn projection_is_closest_feasible_point(v in prop::collection::vec(-5.0f64..5.0, 3), a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let p = project_to_simplex(&v).unwrap();
        let (a, b) = if a + b > 1.0 { (1.0 - a, 1.0 - b) } else { (a, b) };
        let q = [a, b, 1.0 - a - b];
        let dist = |x: &[f64]| x.iter().zip(&v).map(|(s, t)| (s - t).powi(2)).sum::<f64>();
        prop_assert!(dist(p.as_slice()) <= dist(&q) + 1e-12);
    }

    #[test]
    fn solution_beats_every_vertex(s in 0u64..1000, lam in 0.1f64..5.0) {
        let (l1, y) = random_problem(60, 3, s);
        let loss = LossKind::huber(lam).unwrap();
        let sol = solve_weights_detailed(&l1, &y, loss, &MetaSolveOptions::default()).unwrap();
        for k in 0..3 {
            let f = oracle_objective(&l1, &y, loss, SimplexWeights::vertex(3, k).as_slice());
            prop_assert!(sol.objective <= f + 1e-12);
        }
    }
}
