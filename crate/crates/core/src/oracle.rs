//! Reference thresholds and utilities.
//!
//! Two independent routes to the optimal thresholds:
//!
//! * `quantile_fixed_point`: at the optimum, user `k` is activated exactly
//!   when its score margin `R~_k` is at least `-lambda_k`, with probability
//!   `w_k`. So `-lambda_k` is the `(1 - w_k)`-quantile of `R~_k`, which
//!   depends on the other thresholds. The thresholds are found by sweeping
//!   the coordinates with fresh Monte Carlo batches until they stop moving.
//! * `long_run_reference`: run the learner for a long horizon and average
//!   the tail of its iterates.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::Environment;
use crate::error::{config_err, Error, Result};
use crate::learning::{run_tla_observed, StepSchedule, TlaMode};
use crate::rng::{self, SimRng};
use crate::scheduler::{select_with_bonus, DemandMode, DemandVector, ThresholdVector, VirtualUserCatalog};
use crate::stats::{empirical_quantile, CompensatedSum};

/// Monte Carlo draws per parallel shard. Fixed so results do not depend on
/// the thread count.
pub const SHARD_SIZE: u64 = 1 << 16;

/// Smallest horizon accepted by [`long_run_reference`].
pub const MIN_REFERENCE_HORIZON: u64 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceMethod {
    QuantileFixedPoint,
    LongRunTla,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSolution {
    pub lambda_star: ThresholdVector,
    /// `lambda_{i+1} - lambda_i`; only differences are identified with one user per slot.
    pub lambda_differences: Vec<f64>,
    pub u_star: f64,
    pub method: ReferenceMethod,
    pub sample_budget: u64,
    /// 95% half-width on `u_star`.
    pub ci_halfwidth: f64,
    /// Monte Carlo activation frequency of each user at `lambda_star`.
    pub activation_freq: Vec<f64>,
    pub converged: bool,
    pub iterations: u32,
    pub setting_hash: String,
}

impl ReferenceSolution {
    pub fn with_setting_hash(mut self, hash: impl Into<String>) -> Self {
        self.setting_hash = hash.into();
        self
    }

    /// Whether every activation frequency lies within `z` standard errors of its demand.
    pub fn fixed_point_holds(&self, w: &[f64], batch: u64, z: f64) -> bool {
        self.activation_freq.iter().zip(w).all(|(&f, &w)| {
            let se = (w * (1.0 - w) / batch as f64).sqrt();
            (f - w).abs() <= z * se
        })
    }
}

/// Score margin of user `k`: best score among virtual users containing `k`
/// (without `k`'s own threshold) minus the best score among those that do
/// not. User `k` is selected iff the margin is at least `-lambda_k`, up to
/// ties.
pub fn r_tilde(r: &[f64], lambda: &ThresholdVector, catalog: &VirtualUserCatalog, k: usize) -> Result<f64> {
    if r.len() != catalog.len() || lambda.len() != catalog.n() || k >= catalog.n() {
        return Err(config_err("sample, thresholds and catalog disagree in size"));
    }
    let bonus = catalog.threshold_bonus(lambda);
    r_tilde_with_bonus(r, &bonus, lambda.0[k], catalog, k)
        .ok_or_else(|| Error::Domain(format!("every virtual user contains user {}; margin undefined", k + 1)))
}

#[inline]
fn r_tilde_with_bonus(r: &[f64], bonus: &[f64], lambda_k: f64, catalog: &VirtualUserCatalog, k: usize) -> Option<f64> {
    let mut with_k = f64::NEG_INFINITY;
    let mut without_k = f64::NEG_INFINITY;
    for j in 0..r.len() {
        let score = r[j] + bonus[j];
        if catalog.contains(j, k) {
            with_k = with_k.max(score - lambda_k);
        } else {
            without_k = without_k.max(score);
        }
    }
    (without_k > f64::NEG_INFINITY).then_some(with_k - without_k)
}

fn shard_sizes(batch: u64) -> Vec<u64> {
    let full = batch / SHARD_SIZE;
    let rest = batch % SHARD_SIZE;
    let mut v = vec![SHARD_SIZE; full as usize];
    if rest > 0 {
        v.push(rest);
    }
    v
}

/// Monte Carlo estimate of the expected utility of a frozen threshold rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityEstimate {
    pub mean: f64,
    pub ci_halfwidth: f64,
    pub activation_freq: Vec<f64>,
    pub samples: u64,
}

/// Expected per-slot utility of the threshold rule at `lambda`, from `batch`
/// fresh draws on the oracle stream `sweep` of `seed`.
pub fn expected_utility_at(
    lambda: &ThresholdVector,
    env: &Environment,
    batch: u64,
    seed: u64,
    sweep: u64,
) -> Result<UtilityEstimate> {
    if batch < 1000 {
        return Err(config_err("utility estimates need at least 1000 draws"));
    }
    let catalog = env.catalog();
    if lambda.len() != catalog.n() {
        return Err(config_err("threshold vector length differs from user count"));
    }
    let bonus = catalog.threshold_bonus(lambda);
    let shards: Vec<(CompensatedSum, CompensatedSum, Vec<u64>)> = shard_sizes(batch)
        .into_par_iter()
        .enumerate()
        .map(|(shard, size)| {
            let mut rng = rng::oracle_shard(seed, sweep, shard as u64);
            let mut r = vec![0.0; catalog.len()];
            let mut scratch = env.scratch();
            let (mut s, mut ss) = (CompensatedSum::new(), CompensatedSum::new());
            let mut counts = vec![0u64; catalog.n()];
            for _ in 0..size {
                env.sample_into(&mut rng, &mut scratch, &mut r);
                let j = select_with_bonus(&r, &bonus);
                s.add(r[j]);
                ss.add(r[j] * r[j]);
                for &i in catalog.members(j) {
                    counts[i] += 1;
                }
            }
            (s, ss, counts)
        })
        .collect();
    let (mut s, mut ss) = (CompensatedSum::new(), CompensatedSum::new());
    let mut counts = vec![0u64; catalog.n()];
    for (a, b, c) in &shards {
        s.add(a.value());
        ss.add(b.value());
        counts.iter_mut().zip(c).for_each(|(x, y)| *x += y);
    }
    let n = batch as f64;
    let mean = s.value() / n;
    let var = ((ss.value() - n * mean * mean) / (n - 1.0)).max(0.0);
    Ok(UtilityEstimate {
        mean,
        ci_halfwidth: 1.959_963_984_540_054 * (var / n).sqrt(),
        activation_freq: counts.iter().map(|&c| c as f64 / n).collect(),
        samples: batch,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuantileOptions {
    pub batch: u64,
    pub tol: f64,
    pub max_iters: u32,
}

impl Default for QuantileOptions {
    fn default() -> Self {
        Self { batch: 1_000_000, tol: 1e-3, max_iters: 200 }
    }
}

/// Coordinate-wise empirical-quantile iteration for the optimal thresholds
/// of equality demands.
///
/// With one user per slot only threshold differences matter, so the last
/// user's threshold is pinned to zero. Each coordinate update draws a fresh
/// batch. After convergence `U*` and the activation frequencies are
/// estimated from another fresh batch.
pub fn quantile_fixed_point(
    env: &Environment,
    demands: &DemandVector,
    opts: &QuantileOptions,
    seed: u64,
) -> Result<ReferenceSolution> {
    quantile_fixed_point_from(env, demands, opts, seed, ThresholdVector::zeros(env.n()))
}

pub fn quantile_fixed_point_from(
    env: &Environment,
    demands: &DemandVector,
    opts: &QuantileOptions,
    seed: u64,
    init: ThresholdVector,
) -> Result<ReferenceSolution> {
    let catalog = env.catalog();
    let n = catalog.n();
    if demands.mode != DemandMode::Equality {
        return Err(config_err("the quantile fixed point is defined for equality demands"));
    }
    if demands.n() != n || init.len() != n {
        return Err(config_err("demands and thresholds must have one entry per user"));
    }
    if opts.batch < 10_000 {
        return Err(config_err("quantile batches need at least 10^4 draws"));
    }
    if !(opts.tol > 0.0) || opts.max_iters == 0 {
        return Err(config_err("tolerance and iteration cap must be positive"));
    }
    let gauge = catalog.n_max() == 1;
    let free: Vec<usize> = if gauge { (0..n - 1).collect() } else { (0..n).collect() };
    let mut lambda = init;
    if gauge {
        let pin = lambda.0[n - 1];
        lambda.0.iter_mut().for_each(|v| *v -= pin);
    }
    if free.is_empty() {
        // a single user with one user per slot: nothing to solve
        return finish_quantile(env, opts, seed, lambda, 0, true, 0);
    }

    let mut budget = 0u64;
    let mut converged = false;
    let mut sweeps = 0u32;
    let mut margins = vec![0.0; opts.batch as usize];
    for sweep in 0..opts.max_iters {
        sweeps = sweep + 1;
        let mut max_delta = 0.0f64;
        for &k in &free {
            let stream = sweep as u64 * n as u64 + k as u64;
            fill_margins(env, &lambda, k, seed, stream, &mut margins)?;
            budget += opts.batch;
            let q = empirical_quantile(&mut margins, 1.0 - demands.w_lower[k]);
            let updated = -q;
            max_delta = max_delta.max((updated - lambda.0[k]).abs());
            lambda.0[k] = updated;
        }
        if max_delta < opts.tol {
            converged = true;
            break;
        }
    }
    finish_quantile(env, opts, seed, lambda, budget, converged, sweeps)
}

fn finish_quantile(
    env: &Environment,
    opts: &QuantileOptions,
    seed: u64,
    lambda: ThresholdVector,
    budget: u64,
    converged: bool,
    sweeps: u32,
) -> Result<ReferenceSolution> {
    // stream ids past every sweep/coordinate pair
    let eval_stream = (opts.max_iters as u64 + 1) * env.n() as u64;
    let est = expected_utility_at(&lambda, env, opts.batch, seed, eval_stream)?;
    Ok(ReferenceSolution {
        lambda_differences: lambda.differences(),
        lambda_star: lambda,
        u_star: est.mean,
        method: ReferenceMethod::QuantileFixedPoint,
        sample_budget: budget + est.samples,
        ci_halfwidth: est.ci_halfwidth,
        activation_freq: est.activation_freq,
        converged,
        iterations: sweeps,
        setting_hash: String::new(),
    })
}

fn fill_margins(
    env: &Environment,
    lambda: &ThresholdVector,
    k: usize,
    seed: u64,
    stream: u64,
    out: &mut [f64],
) -> Result<()> {
    let catalog = env.catalog();
    let bonus = catalog.threshold_bonus(lambda);
    let lambda_k = lambda.0[k];
    let undefined = out
        .par_chunks_mut(SHARD_SIZE as usize)
        .enumerate()
        .map(|(shard, chunk)| {
            let mut rng = rng::oracle_shard(seed, stream, shard as u64);
            let mut r = vec![0.0; catalog.len()];
            let mut scratch = env.scratch();
            for slot in chunk.iter_mut() {
                env.sample_into(&mut rng, &mut scratch, &mut r);
                match r_tilde_with_bonus(&r, &bonus, lambda_k, catalog, k) {
                    Some(m) => *slot = m,
                    None => return true,
                }
            }
            false
        })
        .reduce(|| false, |a, b| a || b);
    if undefined {
        return Err(Error::Domain(format!("every virtual user contains user {}; margin undefined", k + 1)));
    }
    Ok(())
}

/// Runs the quantile iteration from zero and from a random start and
/// returns the sup distance between the two results. A distance well above
/// the tolerance suggests more than one fixed point.
pub fn fixed_point_spread(
    env: &Environment,
    demands: &DemandVector,
    opts: &QuantileOptions,
    seed: u64,
    init_scale: f64,
) -> Result<(ReferenceSolution, ReferenceSolution, f64)> {
    let a = quantile_fixed_point(env, demands, opts, seed)?;
    let mut rng: SimRng = rng::stream(seed, rng::STREAM_ORACLE - 1);
    let init = ThresholdVector((0..env.n()).map(|_| init_scale * (2.0 * rng.random::<f64>() - 1.0)).collect());
    let b = quantile_fixed_point_from(env, demands, opts, seed.wrapping_add(1), init)?;
    // compare in a common gauge
    let da = &a.lambda_star.0;
    let db = &b.lambda_star.0;
    let (sa, sb) = if env.catalog().n_max() == 1 { (da[da.len() - 1], db[db.len() - 1]) } else { (0.0, 0.0) };
    let spread = da.iter().zip(db).map(|(x, y)| ((x - sa) - (y - sb)).abs()).fold(0.0, f64::max);
    Ok((a, b, spread))
}

/// Long learner run: thresholds are the average of the last `t_ref / 10`
/// iterates; `U*` is the mean utility of a fresh `t_ref / 10`-slot replay
/// with those thresholds frozen.
pub fn long_run_reference(
    env: &Environment,
    demands: &DemandVector,
    schedule: StepSchedule,
    mode: TlaMode,
    t_ref: u64,
    seed: u64,
) -> Result<ReferenceSolution> {
    if t_ref < MIN_REFERENCE_HORIZON {
        return Err(config_err(format!("reference horizon must be at least {MIN_REFERENCE_HORIZON}")));
    }
    let n = env.n();
    let window = t_ref / 10;
    let tail_start = t_ref - window + 1;
    let mut tail: Vec<CompensatedSum> = vec![CompensatedSum::new(); n];
    let mut rng = rng::stream(seed, rng::STREAM_REFERENCE);
    run_tla_observed(env, demands, schedule, mode, t_ref, &[], &mut rng, |slot| {
        if slot.t >= tail_start {
            tail.iter_mut().zip(&slot.lambda.0).for_each(|(s, &v)| s.add(v));
        }
        Ok(())
    })?;
    let lambda = ThresholdVector(tail.iter().map(|s| s.value() / window as f64).collect());
    let replay = frozen_replay(env, &lambda, window, &mut rng::stream(seed, rng::STREAM_REPLAY));
    Ok(ReferenceSolution {
        lambda_differences: lambda.differences(),
        lambda_star: lambda,
        u_star: replay.mean,
        method: ReferenceMethod::LongRunTla,
        sample_budget: t_ref + window,
        ci_halfwidth: replay.ci_halfwidth,
        activation_freq: replay.activation_freq,
        converged: true,
        iterations: 1,
        setting_hash: String::new(),
    })
}

/// Sequential replay of a frozen threshold rule for `slots` slots.
pub fn frozen_replay(env: &Environment, lambda: &ThresholdVector, slots: u64, rng: &mut SimRng) -> UtilityEstimate {
    let catalog = env.catalog();
    let bonus = catalog.threshold_bonus(lambda);
    let mut r = vec![0.0; catalog.len()];
    let mut scratch = env.scratch();
    let (mut s, mut ss) = (CompensatedSum::new(), CompensatedSum::new());
    let mut counts = vec![0u64; catalog.n()];
    for _ in 0..slots {
        env.sample_into(rng, &mut scratch, &mut r);
        let j = select_with_bonus(&r, &bonus);
        s.add(r[j]);
        ss.add(r[j] * r[j]);
        for &i in catalog.members(j) {
            counts[i] += 1;
        }
    }
    let n = slots as f64;
    let mean = s.value() / n;
    let var = ((ss.value() - n * mean * mean) / (n - 1.0)).max(0.0);
    UtilityEstimate {
        mean,
        ci_halfwidth: 1.959_963_984_540_054 * (var / n).sqrt(),
        activation_freq: counts.iter().map(|&c| c as f64 / n).collect(),
        samples: slots,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{EnvironmentSpec, SyntheticKind};
    use crate::scheduler::{enumerate_virtual_users, tbs_select};

    fn uniform(n: usize) -> Environment {
        EnvironmentSpec::Synthetic { sampler: SyntheticKind::Uniform01, n }.build().unwrap()
    }

    #[test]
    fn r_tilde_direct() {
        let c = enumerate_virtual_users(2, 1).unwrap();
        let m = r_tilde(&[0.7, 0.3], &ThresholdVector(vec![0.0, 0.1]), &c, 0).unwrap();
        assert!((m - 0.3).abs() < 1e-15);
    }

    #[test]
    fn r_tilde_undefined_for_single_user() {
        let c = enumerate_virtual_users(1, 1).unwrap();
        assert!(matches!(r_tilde(&[0.5], &ThresholdVector::zeros(1), &c, 0), Err(Error::Domain(_))));
    }

    #[test]
    fn r_tilde_matches_selection_event() {
        let mut rng = rng::stream(9, 0);
        for (n, n_max) in [(3, 1), (4, 2), (3, 2)] {
            let c = enumerate_virtual_users(n, n_max).unwrap();
            for _ in 0..10_000 {
                let r: Vec<f64> = (0..c.len()).map(|_| rng.random::<f64>() * 6.0).collect();
                let lambda = ThresholdVector((0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect());
                let j = tbs_select(&r, &lambda, &c);
                for k in 0..n {
                    let m = r_tilde(&r, &lambda, &c, k).unwrap();
                    assert_eq!(c.contains(j, k), m >= -lambda.0[k], "n={n} n_max={n_max} k={k}");
                }
            }
        }
    }

    #[test]
    fn greedy_utility_of_two_uniforms() {
        let est = expected_utility_at(&ThresholdVector::zeros(2), &uniform(2), 1_000_000, 1, 0).unwrap();
        assert!((est.mean - 2.0 / 3.0).abs() < est.ci_halfwidth.max(0.002));
    }

    #[test]
    fn forced_selection() {
        let est = expected_utility_at(&ThresholdVector(vec![1e3, 0.0]), &uniform(2), 100_000, 2, 0).unwrap();
        assert!((est.mean - 0.5).abs() < 2.0 * est.ci_halfwidth);
        assert_eq!(est.activation_freq, vec![1.0, 0.0]);
    }

    #[test]
    fn utility_estimate_independent_of_thread_count() {
        let env = uniform(3);
        let lam = ThresholdVector(vec![0.1, 0.0, -0.1]);
        let a = expected_utility_at(&lam, &env, 300_000, 5, 3).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let b = pool.install(|| expected_utility_at(&lam, &env, 300_000, 5, 3).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn symmetric_demands_give_equal_thresholds() {
        let d = DemandVector::equality(vec![0.5, 0.5]).unwrap();
        let sol = quantile_fixed_point(&uniform(2), &d, &QuantileOptions::default(), 3).unwrap();
        assert!(sol.converged);
        assert!(sol.lambda_differences[0].abs() < 0.005);
        assert!((sol.u_star - 2.0 / 3.0).abs() < 0.002);
    }

    #[test]
    fn non_equality_demands_rejected() {
        let d = DemandVector::lower_bounds(vec![0.5, 0.5]).unwrap();
        assert!(quantile_fixed_point(&uniform(2), &d, &QuantileOptions::default(), 3).is_err());
    }

    #[test]
    fn non_convergence_is_flagged() {
        let d = DemandVector::equality(vec![0.2, 0.3, 0.5]).unwrap();
        let opts = QuantileOptions { batch: 10_000, tol: 1e-12, max_iters: 3 };
        let sol = quantile_fixed_point(&uniform(3), &d, &opts, 1).unwrap();
        assert!(!sol.converged);
        assert_eq!(sol.iterations, 3);
    }

    #[test]
    fn short_reference_rejected() {
        let d = DemandVector::equality(vec![0.5, 0.5]).unwrap();
        assert!(long_run_reference(&uniform(2), &d, StepSchedule::default(), TlaMode::Equality, 1000, 1).is_err());
    }
}
