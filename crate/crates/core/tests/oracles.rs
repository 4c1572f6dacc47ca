use approx::assert_relative_eq;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use drm_el::estimators::{avar_g1_at, avar_quantile, avar_theta, estimate_g1};
use drm_el::{dual_log_el, fit_mele, BasisSpec, Generator, SolverOptions, TwoSampleData};

fn draw(g: Generator, n: usize, seed: u64) -> Vec<f64> {
    g.sample(&mut ChaCha8Rng::seed_from_u64(seed), n)
}

fn normal(mu: f64, sigma: f64) -> Generator {
    Generator::Normal { mu, sigma }
}

fn large_pair(mu1: f64, n0: usize, n1: usize) -> TwoSampleData {
    TwoSampleData::new(draw(normal(0.0, 1.0), n0, 11), draw(normal(mu1, 1.0), n1, 12)).unwrap()
}

/// Composite Simpson rule on [a, b] with `m` (even) panels.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, m: usize) -> f64 {
    let h = (b - a) / m as f64;
    let inner: f64 = (1..m)
        .map(|i| f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 })
        .sum();
    (f(a) + f(b) + inner) * h / 3.0
}

fn phi(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

#[test]
fn objective_is_concave_along_segments() {
    let data = TwoSampleData::new(draw(normal(0.0, 1.0), 60, 1), draw(normal(0.4, 1.3), 25, 2)).unwrap();
    let spec = BasisSpec::quadratic();
    let pts = [
        DVector::from_vec(vec![0.3, -1.0, 0.2]),
        DVector::from_vec(vec![-2.0, 0.5, -0.4]),
        DVector::from_vec(vec![1.0, 2.0, 0.0]),
    ];
    for a in &pts {
        for b in &pts {
            for t in [0.1, 0.5, 0.9] {
                let mid = a * t + b * (1.0 - t);
                let lhs = dual_log_el(&data, &spec, &mid).unwrap();
                let rhs = t * dual_log_el(&data, &spec, a).unwrap()
                    + (1.0 - t) * dual_log_el(&data, &spec, b).unwrap();
                assert!(lhs >= rhs - 1e-9);
            }
        }
    }
}

#[test]
fn newton_iterates_ascend() {
    let data = TwoSampleData::new(draw(normal(0.0, 1.0), 400, 3), draw(normal(1.5, 0.6), 40, 4)).unwrap();
    let fit = fit_mele(&data, &BasisSpec::quadratic(), &SolverOptions::default()).unwrap();
    assert!(fit.converged);
    assert!(fit.objective_trace.windows(2).all(|w| w[1] >= w[0]));
    assert_relative_eq!(*fit.objective_trace.last().unwrap(), fit.log_el_at_max);
}

#[test]
fn swapping_labels_negates_theta() {
    for spec in [BasisSpec::linear(), BasisSpec::quadratic()] {
        let data = TwoSampleData::new(draw(normal(0.0, 1.0), 150, 5), draw(normal(0.5, 1.2), 90, 6)).unwrap();
        let opts = SolverOptions::default();
        let a = fit_mele(&data, &spec, &opts).unwrap();
        let b = fit_mele(&data.swapped(), &spec, &opts).unwrap();
        for (x, y) in a.theta_hat.iter().zip(b.theta_hat.iter()) {
            assert!((x + y).abs() < 1e-7, "{x} vs {y}");
        }
    }
}

#[test]
fn large_sample_slope_within_three_standard_errors() {
    // log{N(0.5, 1) / N(0, 1)} = −0.125 + 0.5x
    let data = large_pair(0.5, 20_000, 2_000);
    let spec = BasisSpec::linear();
    let fit = fit_mele(&data, &spec, &SolverOptions::default()).unwrap();
    let cov = avar_theta(&fit, &data, &spec).unwrap();
    let n1 = data.n1() as f64;
    let se_alpha = (cov[(0, 0)] / n1).sqrt();
    let se_beta = (cov[(1, 1)] / n1).sqrt();
    assert!((fit.theta_hat[1] - 0.5).abs() < 3.0 * se_beta);
    assert!((fit.theta_hat[0] + 0.125).abs() < 3.0 * se_alpha);
}

#[test]
fn theta_covariance_matches_quadrature() {
    let data = large_pair(0.5, 50_000, 5_000);
    let spec = BasisSpec::linear();
    let fit = fit_mele(&data, &spec, &SolverOptions::default()).unwrap();
    let plug = avar_theta(&fit, &data, &spec).unwrap();

    let g1 = |x: f64| phi(x - 0.5);
    let m1 = simpson(|x| x * g1(x), -12.0, 13.0, 4000);
    let m2 = simpson(|x| x * x * g1(x), -12.0, 13.0, 4000);
    let var = m2 - m1 * m1;
    let exact = DMatrix::from_row_slice(2, 2, &[m1 * m1 / var, -m1 / var, -m1 / var, 1.0 / var]);
    assert!((plug - exact).amax() < 0.1);
}

#[test]
fn g1_variance_at_median_matches_quadrature() {
    let data = large_pair(0.0, 50_000, 5_000);
    let spec = BasisSpec::linear();
    let fit = fit_mele(&data, &spec, &SolverOptions::default()).unwrap();
    let v = avar_g1_at(&fit, &data, &spec, 0.0).unwrap();
    // b = E[X 1{X ≤ 0}] − E[X]·½ and Var(X) = 1 under N(0, 1)
    let b = simpson(|x| x * phi(x), -12.0, 0.0, 4000);
    assert!((v - b * b).abs() < 0.01, "{v} vs {}", b * b);
    assert_relative_eq!(b * b, 1.0 / (2.0 * std::f64::consts::PI), max_relative = 1e-10);
}

#[test]
fn median_variance_approaches_parametric_bound() {
    let data = large_pair(0.0, 200_000, 2_000);
    let spec = BasisSpec::quadratic();
    let fit = fit_mele(&data, &spec, &SolverOptions::default()).unwrap();
    let g1 = estimate_g1(&fit, &data).unwrap();
    let xi = drm_el::estimators::drm_quantile(&g1, 0.5).unwrap();
    let av = avar_quantile(&fit, &data, &spec, 0.5, phi(xi)).unwrap();
    assert!((av.value - 1.0).abs() < 0.1, "{}", av.value);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn fitted_masses_satisfy_constraints(
        seed in 0u64..1_000_000,
        n0 in 15usize..120,
        n1 in 8usize..60,
        shift in -1.0f64..1.0,
        quadratic in any::<bool>(),
    ) {
        let data = TwoSampleData::new(
            draw(normal(0.0, 1.0), n0, seed),
            draw(normal(shift, 1.0), n1, seed + 1),
        ).unwrap();
        let spec = if quadratic { BasisSpec::quadratic() } else { BasisSpec::linear() };
        let fit = fit_mele(&data, &spec, &SolverOptions::default()).unwrap();
        prop_assert!(fit.weights.iter().chain(&fit.tilted_weights).all(|&w| w > 0.0));
        prop_assert!((fit.weights.iter().sum::<f64>() - 1.0).abs() < 1e-8);
        prop_assert!((fit.tilted_weights.iter().sum::<f64>() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn translation_changes_only_the_intercept(
        seed in 0u64..1_000_000,
        c in -5.0f64..5.0,
    ) {
        let x0 = draw(normal(0.0, 1.0), 80, seed);
        let x1 = draw(normal(0.3, 1.0), 40, seed + 7);
        let spec = BasisSpec::linear();
        let opts = SolverOptions::default();
        let a = fit_mele(&TwoSampleData::new(x0.clone(), x1.clone()).unwrap(), &spec, &opts).unwrap();
        let moved = |v: &[f64]| v.iter().map(|x| x + c).collect::<Vec<_>>();
        let b = fit_mele(&TwoSampleData::new(moved(&x0), moved(&x1)).unwrap(), &spec, &opts).unwrap();
        prop_assert!((a.theta_hat[1] - b.theta_hat[1]).abs() < 1e-7);
        prop_assert!((a.theta_hat[0] - (b.theta_hat[0] + c * b.theta_hat[1])).abs() < 1e-7);
    }
}
