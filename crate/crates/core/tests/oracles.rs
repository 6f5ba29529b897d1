//! Reference solutions against closed forms: two uniform users (triangular
//! difference law) and two exponential users (Laplace difference law).

use tempfair_core::channel::{Environment, EnvironmentSpec, SyntheticKind};
use tempfair_core::learning::{StepSchedule, TlaMode};
use tempfair_core::oracle::{
    expected_utility_at, fixed_point_spread, long_run_reference, quantile_fixed_point, quantile_fixed_point_from,
    QuantileOptions,
};
use tempfair_core::scheduler::{DemandVector, ThresholdVector};

fn synthetic(kind: SyntheticKind, n: usize) -> Environment {
    EnvironmentSpec::Synthetic { sampler: kind, n }.build().unwrap()
}

fn opts() -> QuantileOptions {
    QuantileOptions::default()
}

/// Optimal utility for two uniforms at threshold gap `d` (user 2 favoured):
/// E[R1; R1 > R2 + d] + E[R2; R2 >= R1 - d].
fn uniform_pair_utility(d: f64) -> f64 {
    (1.0 / 3.0 - d / 2.0 + d.powi(3) / 6.0) + (0.5 - (1.0 - d).powi(3) / 6.0)
}

#[test]
fn uniform_pair_fixed_point_and_utility() {
    let env = synthetic(SyntheticKind::Uniform01, 2);
    let w = DemandVector::equality(vec![0.25, 0.75]).unwrap();
    let sol = quantile_fixed_point(&env, &w, &opts(), 21).unwrap();
    let gap = 1.0 - std::f64::consts::FRAC_1_SQRT_2;
    assert!(sol.converged);
    assert!((sol.lambda_differences[0] - gap).abs() < 0.005, "{:?}", sol.lambda_differences);
    assert_eq!(sol.lambda_star.0[1], 0.0, "gauge pins the last threshold");
    let u = uniform_pair_utility(gap);
    assert!((sol.u_star - u).abs() < sol.ci_halfwidth + 0.002, "{} vs {u}", sol.u_star);
    assert!(sol.fixed_point_holds(&w.w_lower, opts().batch, 3.0), "{:?}", sol.activation_freq);
}

#[test]
fn exponential_pair_gap_is_mean_ln2() {
    // R1 - R2 is Laplace(0, mean): P(R1 - R2 > d) = exp(-d / mean) / 2 = 1/4
    for mean in [1.0, 2.0] {
        let env = synthetic(SyntheticKind::Exponential { mean }, 2);
        let w = DemandVector::equality(vec![0.25, 0.75]).unwrap();
        let sol = quantile_fixed_point(&env, &w, &opts(), 22).unwrap();
        let target = mean * 2f64.ln();
        assert!((sol.lambda_differences[0] - target).abs() < 0.01 * mean, "mean {mean}: {:?}", sol.lambda_differences);
    }
}

#[test]
fn greedy_utility_of_n_uniforms() {
    // E max of n uniforms = n / (n + 1)
    for n in [2, 3, 5] {
        let env = synthetic(SyntheticKind::Uniform01, n);
        let est = expected_utility_at(&ThresholdVector::zeros(n), &env, 1_000_000, 23, 0).unwrap();
        let exact = n as f64 / (n as f64 + 1.0);
        assert!((est.mean - exact).abs() < est.ci_halfwidth.max(1e-3), "n={n}: {}", est.mean);
        let each = est.activation_freq.iter().all(|f| (f - 1.0 / n as f64).abs() < 0.003);
        assert!(each, "{:?}", est.activation_freq);
    }
}

#[test]
fn three_user_fixed_point_holds_and_methods_agree() {
    let env = synthetic(SyntheticKind::Uniform01, 3);
    let w = DemandVector::equality(vec![0.2, 0.3, 0.5]).unwrap();
    let q = quantile_fixed_point(&env, &w, &opts(), 24).unwrap();
    assert!(q.converged);
    assert!(q.fixed_point_holds(&w.w_lower, opts().batch, 3.0), "{:?}", q.activation_freq);
    let lr = long_run_reference(&env, &w, StepSchedule::default(), TlaMode::Equality, 2_000_000, 24).unwrap();
    for (a, b) in q.lambda_differences.iter().zip(&lr.lambda_differences) {
        assert!((a - b).abs() < 0.01, "{:?} vs {:?}", q.lambda_differences, lr.lambda_differences);
    }
    assert!((q.u_star - lr.u_star).abs() < 0.005);
}

#[test]
fn common_shift_of_the_start_is_irrelevant() {
    let env = synthetic(SyntheticKind::Uniform01, 3);
    let w = DemandVector::equality(vec![0.2, 0.3, 0.5]).unwrap();
    let a = quantile_fixed_point_from(&env, &w, &opts(), 25, ThresholdVector::zeros(3)).unwrap();
    let b = quantile_fixed_point_from(&env, &w, &opts(), 25, ThresholdVector(vec![7.0; 3])).unwrap();
    // with one user per slot only differences matter, so both starts are the same point
    assert_eq!(a.lambda_star, b.lambda_star);
    assert_eq!(a.u_star, b.u_star);
}

#[test]
fn fixed_point_is_unique_from_random_starts() {
    let env = synthetic(SyntheticKind::Uniform01, 3);
    let w = DemandVector::equality(vec![0.2, 0.3, 0.5]).unwrap();
    let (_, _, spread) = fixed_point_spread(&env, &w, &opts(), 26, 1.0).unwrap();
    assert!(spread < 0.01, "{spread}");
}

#[test]
fn symmetric_exponential_users_get_equal_thresholds() {
    let env = synthetic(SyntheticKind::Exponential { mean: 1.0 }, 4);
    let w = DemandVector::equality(vec![0.25; 4]).unwrap();
    let sol = quantile_fixed_point(&env, &w, &opts(), 27).unwrap();
    assert!(sol.lambda_star.0.iter().all(|l| l.abs() < 0.01), "{:?}", sol.lambda_star);
}
