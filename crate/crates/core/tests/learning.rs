//! Closed-loop learner behaviour on settings with known answers.

use tempfair_core::channel::{CellConfig, Environment, EnvironmentSpec, SyntheticKind};
use tempfair_core::learning::{run_tla, StepSchedule, TlaMode};
use tempfair_core::rng;
use tempfair_core::scheduler::DemandVector;

fn synthetic(kind: SyntheticKind, n: usize) -> Environment {
    EnvironmentSpec::Synthetic { sampler: kind, n }.build().unwrap()
}

#[test]
fn learner_finds_the_laplace_gap() {
    let env = synthetic(SyntheticKind::Exponential { mean: 1.0 }, 2);
    let w = DemandVector::equality(vec![0.25, 0.75]).unwrap();
    let seeds = 10;
    let mean_gap = (0..seeds)
        .map(|s| {
            let traj = run_tla(&env, &w, StepSchedule::default(), TlaMode::Equality, 200_000, &[], &mut rng::replication(31, s))
                .unwrap();
            traj.final_state.lambda_hat.differences()[0]
        })
        .sum::<f64>()
        / seeds as f64;
    assert!((mean_gap - 2f64.ln()).abs() < 0.02, "{mean_gap}");
}

#[test]
fn equality_shares_converge() {
    let env = synthetic(SyntheticKind::Uniform01, 3);
    let w = DemandVector::equality(vec![0.2, 0.3, 0.5]).unwrap();
    let traj = run_tla(&env, &w, StepSchedule::default(), TlaMode::Equality, 100_000, &[], &mut rng::replication(32, 0)).unwrap();
    assert!(traj.ledger.max_share_deviation(&w.w_lower) < 0.01);
    assert_eq!(traj.ledger.t(), 100_000);
}

#[test]
fn slack_lower_bounds_keep_thresholds_at_zero() {
    // greedy already gives each user about half the slots
    let env = synthetic(SyntheticKind::Uniform01, 2);
    let w = DemandVector::lower_bounds(vec![0.1, 0.1]).unwrap();
    let traj = run_tla(&env, &w, StepSchedule::default(), TlaMode::LowerBound, 50_000, &[], &mut rng::replication(33, 0)).unwrap();
    // a slot without activation bumps lambda by at most s_t * w before the next projection
    assert!(traj.final_state.lambda_hat.0.iter().all(|&l| (0.0..1e-3).contains(&l)), "{:?}", traj.final_state.lambda_hat);
    assert!((traj.ledger.avg_utility() - 2.0 / 3.0).abs() < 0.01);
}

#[test]
fn noma_lower_bounds_are_met() {
    let env = EnvironmentSpec::Channel { cell: CellConfig::default(), n_max: 2 }.build().unwrap();
    let w = DemandVector::lower_bounds(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
    let traj = run_tla(&env, &w, StepSchedule::default(), TlaMode::LowerBound, 100_000, &[], &mut rng::replication(34, 0)).unwrap();
    let shares = traj.ledger.shares();
    assert!(shares.iter().zip(&w.w_lower).all(|(a, w)| *a >= w - 0.01), "{shares:?}");
    assert!(traj.final_state.lambda_hat.0.iter().all(|&l| l >= 0.0));
    // pairs make the shares sum above one
    assert!(shares.iter().sum::<f64>() > 1.0);
}

#[test]
fn checkpoint_snapshots_match_the_final_state() {
    let env = synthetic(SyntheticKind::Uniform01, 2);
    let w = DemandVector::equality(vec![0.4, 0.6]).unwrap();
    let traj = run_tla(&env, &w, StepSchedule::default(), TlaMode::Equality, 1000, &[10, 100, 1000], &mut rng::replication(35, 0)).unwrap();
    assert_eq!(traj.points.iter().map(|p| p.t).collect::<Vec<_>>(), vec![10, 100, 1000]);
    let last = traj.points.last().unwrap();
    assert_eq!(last.lambda, traj.final_state.lambda_hat.0);
    assert_eq!(last.shares, traj.ledger.shares());
    assert_eq!(last.avg_utility, traj.ledger.avg_utility());
}
