//! Epoch scheduler whose running utility approaches the fair optimum from
//! above.
//!
//! Epoch `k` first schedules greedily (zero thresholds) for `M^k` slots,
//! banking utility above the fair optimum, then schedules for
//! `M^{k(1 + alpha/4)}` slots with thresholds frozen at the learner's
//! estimate after `M^{k alpha}` slots. The TBS phases grow faster than the
//! greedy phases, so the temporal shares still converge to the demands.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::channel::Environment;
use crate::error::{config_err, Result};
use crate::learning::{numbered, tla_init, StepSchedule, TlaMode};
use crate::rng::SimRng;
use crate::scheduler::{select_with_bonus, DemandVector, ShareLedger, ThresholdVector};

/// Largest slot count handled exactly (phase lengths go through `f64`).
const MAX_EXACT_SLOTS: f64 = 9_007_199_254_740_992.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochSpec {
    pub k: u32,
    /// First slot of the epoch (1-based).
    pub start: u64,
    pub greedy_len: u64,
    pub tbs_len: u64,
    /// Learner sample count whose estimate the TBS phase uses.
    pub est_sample_count: u64,
}

impl EpochSpec {
    pub fn greedy_end(&self) -> u64 {
        self.start + self.greedy_len - 1
    }

    pub fn end(&self) -> u64 {
        self.greedy_end() + self.tbs_len
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochPlan {
    pub base: u64,
    pub alpha_star: f64,
    pub epochs: Vec<EpochSpec>,
}

impl EpochPlan {
    /// Total slots over all epochs.
    pub fn horizon(&self) -> u64 {
        self.epochs.last().map_or(0, EpochSpec::end)
    }
}

fn round_half_up(x: f64) -> f64 {
    (x + 0.5).floor()
}

/// Builds `k = 1..=epochs` with greedy length `M^k`, TBS length
/// `round(M^{k(1 + alpha/4)})` and estimate size `round(M^{k alpha})`,
/// rounding halves up.
pub fn build_epoch_plan(base: u64, alpha_star: f64, epochs: u32) -> Result<EpochPlan> {
    if base < 3 {
        return Err(config_err(format!("epoch base M must be at least 3 (got {base})")));
    }
    if !(alpha_star > 0.0 && alpha_star <= 0.5) {
        return Err(config_err(format!("alpha_star must lie in (0, 1/2] (got {alpha_star})")));
    }
    if epochs == 0 {
        return Err(config_err("at least one epoch is required"));
    }
    let m = base as f64;
    let mut out = Vec::with_capacity(epochs as usize);
    let mut next_start = 1u64;
    for k in 1..=epochs {
        let kf = k as f64;
        let greedy = base.checked_pow(k).map_or(f64::INFINITY, |g| g as f64);
        let tbs = round_half_up(m.powf(kf * (1.0 + alpha_star / 4.0)));
        let est = round_half_up(m.powf(kf * alpha_star)).max(1.0);
        let end = next_start as f64 - 1.0 + greedy + tbs;
        if !(end < MAX_EXACT_SLOTS) {
            return Err(config_err(format!(
                "slot counts overflow at epoch {k}; at most {} epochs fit for M={base}, alpha_star={alpha_star}",
                k - 1
            )));
        }
        let spec = EpochSpec {
            k,
            start: next_start,
            greedy_len: greedy as u64,
            tbs_len: tbs as u64,
            est_sample_count: est as u64,
        };
        debug_assert!(spec.est_sample_count <= spec.greedy_end());
        next_start = spec.end() + 1;
        out.push(spec);
    }
    Ok(EpochPlan { base, alpha_star, epochs: out })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Greedy,
    Tbs,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Greedy => "greedy",
            Self::Tbs => "tbs",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochPoint {
    pub t: u64,
    pub phase: Phase,
    pub epoch: u32,
    pub running_avg_utility: f64,
    pub shares: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct EpochTrace {
    pub points: Vec<EpochPoint>,
    /// Frozen threshold estimate used in each epoch's TBS phase.
    pub estimates: Vec<ThresholdVector>,
    pub ledger: ShareLedger,
    pub plan: EpochPlan,
}

impl EpochTrace {
    /// Points recorded after epoch `k` ended.
    pub fn points_after_epoch(&self, k: u32) -> impl Iterator<Item = &EpochPoint> {
        let end = self.plan.epochs.get(k as usize - 1).map_or(0, EpochSpec::end);
        self.points.iter().filter(move |p| p.t > end)
    }

    /// The point recorded at the last slot of epoch `k`.
    pub fn end_of_epoch(&self, k: u32) -> Option<&EpochPoint> {
        let end = self.plan.epochs.get(k as usize - 1)?.end();
        self.points.iter().find(|p| p.t == end)
    }
}

/// Runs the plan. A background learner updates on every slot's sample with
/// its own threshold decision, independent of what the epoch scheduler
/// activates. Points are recorded at every phase boundary and at the extra
/// `checkpoints`.
pub fn run_epoch_scheduler(
    env: &Environment,
    demands: &DemandVector,
    plan: &EpochPlan,
    schedule: StepSchedule,
    mode: TlaMode,
    checkpoints: &[u64],
    rng: &mut SimRng,
) -> Result<EpochTrace> {
    let catalog = env.catalog();
    if demands.n() != catalog.n() {
        return Err(config_err(format!("{} demands for {} users", demands.n(), catalog.n())));
    }
    let mut learner = tla_init(demands.clone(), schedule, mode, catalog.n_max())?;
    let mut ledger = ShareLedger::new(catalog.n());
    let m = catalog.len();
    let mut r = vec![0.0; m];
    let mut scratch = env.scratch();
    let zero = vec![0.0; m];
    let mut learner_bonus = vec![0.0; m];
    let mut frozen_bonus = vec![0.0; m];

    // learner snapshots keyed by sample count; counts are nondecreasing in k
    let wanted: Vec<u64> = plan.epochs.iter().map(|e| e.est_sample_count).collect();
    let mut snapshots: Vec<Option<ThresholdVector>> = vec![None; wanted.len()];
    let mut estimates = Vec::with_capacity(plan.epochs.len());

    let mut extra = checkpoints.iter().copied().peekable();
    let mut points = Vec::new();
    let mut t = 0u64;
    for spec in &plan.epochs {
        for (phase, len) in [(Phase::Greedy, spec.greedy_len), (Phase::Tbs, spec.tbs_len)] {
            if phase == Phase::Tbs {
                let lambda = snapshots[spec.k as usize - 1].clone().expect("estimate taken before the TBS phase");
                catalog.threshold_bonus_into(&lambda, &mut frozen_bonus);
                estimates.push(lambda);
            }
            let bonus = if phase == Phase::Greedy { &zero } else { &frozen_bonus };
            for _ in 0..len {
                t += 1;
                env.sample_into(rng, &mut scratch, &mut r);
                let selected = select_with_bonus(&r, bonus);
                ledger.record(selected, &r, catalog);

                catalog.threshold_bonus_into(&learner.lambda_hat, &mut learner_bonus);
                let own = select_with_bonus(&r, &learner_bonus);
                learner.step_selected(catalog, own);
                for (slot, &count) in snapshots.iter_mut().zip(&wanted) {
                    if count == learner.t {
                        *slot = Some(learner.lambda_hat.clone());
                    }
                }

                let mut record = false;
                while extra.peek().is_some_and(|&c| c <= t) {
                    record |= extra.next() == Some(t);
                }
                if record || t == spec.greedy_end() || t == spec.end() {
                    points.push(EpochPoint {
                        t,
                        phase,
                        epoch: spec.k,
                        running_avg_utility: ledger.avg_utility(),
                        shares: ledger.shares(),
                    });
                }
            }
        }
    }
    Ok(EpochTrace { points, estimates, ledger, plan: plan.clone() })
}

/// Trace CSV: `t, phase, epoch, running_avg_utility, share_1..share_n`.
pub fn write_epoch_trace_csv<W: Write>(points: &[EpochPoint], n: usize, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    let mut header = vec!["t".to_string(), "phase".into(), "epoch".into(), "running_avg_utility".into()];
    header.extend(numbered("share", n));
    w.write_record(&header)?;
    for p in points {
        let mut row = vec![p.t.to_string(), p.phase.as_str().into(), p.epoch.to_string(), p.running_avg_utility.to_string()];
        row.extend(p.shares.iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
