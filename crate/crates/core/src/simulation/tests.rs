use proptest::prelude::*;
use rand::Rng;

use super::*;

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn var(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
}

#[test]
fn covariate_moments() {
    let n = 40_000;
    let x = gen_covariates(n, 1).unwrap();
    let se = |sd: f64| 4.0 * sd / (n as f64).sqrt();
    assert!((mean(&x.column(0)) - 0.5).abs() < se(0.5));
    assert!((mean(&x.column(1)) - 0.5).abs() < se((1.0f64 / 12.0).sqrt()));
    assert!((mean(&x.column(3)) - 1.0).abs() < se(1.0));
    assert!((var(&x.column(4)) - 1.0).abs() < 0.05);
    assert!((mean(&x.column(5)) - 0.2).abs() < se(0.4));
    assert!((var(&x.column(7)).sqrt() - 3.0).abs() < 0.05);
    assert!((mean(&x.column(8)) - 0.5).abs() < se(0.5f64.sqrt()));
    assert!((mean(&x.column(9)) - 2.0).abs() < se(2.0f64.sqrt()));
    assert!(x.column(0).iter().all(|&v| v == 0.0 || v == 1.0));
    let alt = CovariateSpec::variance_reading().sample(n, &mut seed::rng(1)).unwrap();
    assert!((var(&alt.column(7)) - 3.0).abs() < 0.1);
    assert_eq!(gen_covariates(5, 3).unwrap(), gen_covariates(5, 3).unwrap());
    assert!(gen_covariates(0, 0).is_err());
}

#[test]
fn quantile_matches_hand_values() {
    assert_eq!(quantile(&[1.0, 2.0, 3.0, 4.0], 0.75).unwrap(), 3.25);
    assert_eq!(quantile(&[5.0], 0.3).unwrap(), 5.0);
    assert_eq!(quantile(&[3.0, 1.0, 2.0], 0.5).unwrap(), 2.0);
    assert!(quantile(&[], 0.5).is_err());
}

#[test]
fn outlier_fraction_examples() {
    assert_eq!(outlier_fraction(&[0.0, 0.0, 0.0, 0.0, 100.0]).unwrap(), 0.2);
    let grid: Vec<f64> = (0..100).map(f64::from).collect();
    assert_eq!(outlier_fraction(&grid).unwrap(), 0.0);
    assert!(outlier_fraction(&[1.0, 2.0, 3.0]).is_err());
}

/// Independent quartiles: position-based interpolation written from scratch.
fn oracle_outliers(y: &[f64]) -> f64 {
    let mut s = y.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q = |p: f64| {
        let pos = p * (s.len() as f64 - 1.0);
        let i = pos as usize;
        let frac = pos - i as f64;
        if i + 1 < s.len() { s[i] * (1.0 - frac) + s[i + 1] * frac } else { s[i] }
    };
    let t = q(0.75) + 1.5 * (q(0.75) - q(0.25));
    y.iter().filter(|&&v| v > t).count() as f64 / y.len() as f64
}

#[test]
fn outlier_fraction_matches_second_implementation() {
    let mut rng = seed::rng(5);
    for _ in 0..100 {
        let n = rng.random_range(4..200);
        let y: Vec<f64> = (0..n).map(|_| rng.random::<f64>().powi(4) * 100.0).collect();
        assert_eq!(outlier_fraction(&y).unwrap(), oracle_outliers(&y));
    }
}

#[test]
fn skewness_examples() {
    assert_eq!(skewness(&[-1.0, 0.0, 1.0]).unwrap(), 0.0);
    assert!(skewness(&[0.0, 0.0, 1.0]).unwrap() > 0.0);
    assert!(skewness(&[2.0, 2.0, 2.0]).is_err());
    let mut rng = seed::rng(6);
    for _ in 0..50 {
        let y: Vec<f64> = (0..30).map(|_| rng.random::<f64>().powi(3)).collect();
        let n = y.len() as f64;
        let m = y.iter().sum::<f64>() / n;
        let (mut s2, mut s3) = (0.0, 0.0);
        for v in &y {
            s2 += (v - m) * (v - m);
            s3 += (v - m) * (v - m) * (v - m);
        }
        let brute = (s3 / n) / (s2 / n).sqrt().powi(3);
        assert!((skewness(&y).unwrap() - brute).abs() < 1e-12);
    }
}

#[test]
fn cost_draws_are_bounded_and_zero_inflated() {
    let x = gen_covariates(10_000, 7).unwrap();
    for regime in OutlierRegime::all() {
        let y = gen_cost_two_stage(&x, &CostScenario::new(regime, 10_000), 8).unwrap();
        assert!(y.iter().all(|&v| (0.0..=COST_CAP).contains(&v)));
        assert!((zero_fraction(&y) - 0.35).abs() < 0.03);
    }
    let flipped = CostScenario { zero_link: ZeroLink::ZeroProbability, ..CostScenario::new(OutlierRegime::Low, 10_000) };
    assert!((zero_fraction(&gen_cost_two_stage(&x, &flipped, 8).unwrap()) - 0.65).abs() < 0.03);
}

#[test]
fn tail_rule_leaves_lower_quartile_values_alone() {
    let x = gen_covariates(2_000, 9).unwrap();
    let low = gen_cost_two_stage(&x, &CostScenario::new(OutlierRegime::Low, 2_000), 10).unwrap();
    let high = gen_cost_two_stage(&x, &CostScenario::new(OutlierRegime::High, 2_000), 10).unwrap();
    let q3 = quantile(&low, 0.75).unwrap();
    for (a, b) in low.iter().zip(&high) {
        if *a <= q3 {
            assert_eq!(a, b);
        } else {
            assert!(b >= a);
        }
    }
}

#[test]
fn positive_cost_mean_matches_gamma_identity() {
    let n = 20_000;
    let x = gen_covariates(n, 11).unwrap();
    let scenario = CostScenario::new(OutlierRegime::Low, n);
    let y = gen_cost_two_stage(&x, &scenario, 12).unwrap();
    let pos: Vec<usize> = (0..n).filter(|&i| y[i] > 0.0).collect();
    let sample = pos.iter().map(|&i| y[i]).sum::<f64>() / pos.len() as f64;
    let plug_in = pos.iter().map(|&i| 10.0 * mu_k(x.row(i)).abs() * 1.5).sum::<f64>() / pos.len() as f64;
    let sd = (pos.iter().map(|&i| (y[i] - 15.0 * mu_k(x.row(i)).abs()).powi(2)).sum::<f64>() / pos.len() as f64).sqrt();
    assert!((sample - plug_in).abs() < 4.0 * sd / (pos.len() as f64).sqrt());
}

#[test]
fn tail_shape_keys_on_sample_size() {
    assert_eq!(CostScenario::new(OutlierRegime::Medium, 250).tail_shape(), Some(1.13));
    assert_eq!(CostScenario::new(OutlierRegime::Medium, 1000).tail_shape(), Some(0.71));
    assert_eq!(CostScenario::new(OutlierRegime::High, 250).tail_shape(), Some(38.0));
    assert_eq!(CostScenario::new(OutlierRegime::High, 2000).tail_shape(), Some(2.9));
    assert_eq!(CostScenario::new(OutlierRegime::Low, 250).tail_shape(), None);
}

#[test]
fn tweedie_zero_mass_and_moments() {
    let mut rng = seed::rng(13);
    let draws = 100_000;
    let y: Vec<f64> = (0..draws).map(|_| sample_tweedie(1.0, 1.5, 1.0, &mut rng).unwrap()).collect();
    assert!((zero_fraction(&y) - (-2.0f64).exp()).abs() < 0.01);
    for (mu, p, phi) in [(2.0, 1.3, 0.7), (5.0, 1.8, 2.0), (0.5, 1.5, 1.5)] {
        let y: Vec<f64> = (0..draws).map(|_| sample_tweedie(mu, p, phi, &mut rng).unwrap()).collect();
        let v = var(&y);
        assert!((mean(&y) - mu).abs() < 4.0 * (v / draws as f64).sqrt());
        let target: f64 = phi * mu.powf(p);
        assert!((v - target).abs() < 0.05 * target, "var {v} vs {target}");
    }
    assert!(sample_tweedie(1.0, 2.0, 1.0, &mut rng).is_err());
    assert!(sample_tweedie(1.0, 1.5, 0.0, &mut rng).is_err());
    assert_eq!(sample_tweedie(0.0, 1.5, 1.0, &mut rng).unwrap(), 0.0);
}

#[test]
fn tweedie_outcomes_are_deterministic_and_scaled() {
    let x = gen_covariates(500, 14).unwrap();
    let s = TweedieScenario::preset(OutlierRegime::Medium);
    let a = gen_tweedie_outcome(&x, &s, 1).unwrap();
    assert_eq!(a, gen_tweedie_outcome(&x, &s, 1).unwrap());
    assert!(a.iter().all(|&v| v >= 0.0));
    for (i, v) in a.iter().enumerate() {
        if s.mean.eval(x.row(i)) == 0.0 {
            assert_eq!(*v, 0.0);
        }
    }
}

#[test]
fn true_ate_is_reproducible_across_seeds() {
    let s = TweedieScenario::preset(OutlierRegime::Medium);
    let a = true_ate(&s, 1_000_000, 1).unwrap();
    let b = true_ate(&s, 1_000_000, 2).unwrap();
    assert!(((a - b) / a).abs() < 5e-3, "{a} vs {b}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn quantile_is_within_range_and_monotone(v in prop::collection::vec(-1e3f64..1e3, 1..40), p in 0.0f64..1.0, q in 0.0f64..1.0) {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let a = quantile(&v, p.min(q)).unwrap();
        let b = quantile(&v, p.max(q)).unwrap();
        prop_assert!(lo <= a && a <= b && b <= hi);
    }
}
