//! Online threshold learning.
//!
//! The learner starts from zero thresholds and after every slot moves each
//! user's threshold by `s_t (w_i - 1{user i activated})`. Its root is the
//! threshold vector at which every user is activated with probability `w_i`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::channel::Environment;
use crate::error::{config_err, Error, Result};
use crate::rng::SimRng;
use crate::scheduler::{
    check_feasibility, select_with_bonus, DemandVector, ShareLedger, ThresholdVector, VirtualUserCatalog,
};

/// Power-law step sizes `s_t = s0 * t^(-kappa)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StepSchedule {
    pub s0: f64,
    pub kappa: f64,
}

impl Default for StepSchedule {
    fn default() -> Self {
        Self { s0: 1.0, kappa: 0.7 }
    }
}

impl StepSchedule {
    pub fn new(s0: f64, kappa: f64) -> Result<Self> {
        let s = Self { s0, kappa };
        s.validate()?;
        Ok(s)
    }

    /// `kappa` must lie in (0.5, 1] so that the steps sum to infinity while
    /// their squares stay summable.
    pub fn validate(&self) -> Result<()> {
        if !(self.s0 > 0.0 && self.s0.is_finite()) {
            return Err(config_err(format!("step scale s0 must be positive (got {})", self.s0)));
        }
        if !(self.kappa > 0.5 && self.kappa <= 1.0) {
            return Err(config_err(format!("step exponent kappa must lie in (0.5, 1] (got {})", self.kappa)));
        }
        Ok(())
    }

    /// Step for slot `t >= 1`.
    #[inline]
    pub fn step(&self, t: u64) -> f64 {
        self.s0 * (t as f64).powf(-self.kappa)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TlaMode {
    /// Unprojected updates; shares are driven to `w`.
    Equality,
    /// Thresholds are projected onto the nonnegative orthant; shares are
    /// driven to at least `w`.
    LowerBound,
}

impl TlaMode {
    pub fn demands(self, w: Vec<f64>) -> Result<DemandVector> {
        match self {
            Self::Equality => DemandVector::equality(w),
            Self::LowerBound => DemandVector::lower_bounds(w),
        }
    }
}

/// Learner state after `t` slots.
#[derive(Debug, Clone, PartialEq)]
pub struct TlaState {
    pub lambda_hat: ThresholdVector,
    pub t: u64,
    pub schedule: StepSchedule,
    pub demands: DemandVector,
    pub mode: TlaMode,
}

/// Zero thresholds at `t = 0`. Fails on infeasible demands or an invalid schedule.
pub fn tla_init(demands: DemandVector, schedule: StepSchedule, mode: TlaMode, n_max: usize) -> Result<TlaState> {
    demands.validate()?;
    schedule.validate()?;
    let report = check_feasibility(&demands, n_max);
    if !report.ok {
        return Err(Error::Infeasible(report.to_string()));
    }
    Ok(TlaState {
        lambda_hat: ThresholdVector::zeros(demands.n()),
        t: 0,
        schedule,
        demands,
        mode,
    })
}

impl TlaState {
    pub fn n(&self) -> usize {
        self.lambda_hat.len()
    }

    /// Applies the outcome of slot `t + 1`.
    pub fn step(&mut self, activated: &[bool]) {
        assert_eq!(activated.len(), self.n());
        self.t += 1;
        let s = self.schedule.step(self.t);
        for (i, &on) in activated.iter().enumerate() {
            self.update(i, s, on);
        }
    }

    /// Same as [`TlaState::step`] with the activation set given by virtual user `selected`.
    #[inline]
    pub fn step_selected(&mut self, catalog: &VirtualUserCatalog, selected: usize) {
        self.t += 1;
        let s = self.schedule.step(self.t);
        for i in 0..self.n() {
            self.update(i, s, catalog.contains(selected, i));
        }
    }

    #[inline]
    fn update(&mut self, i: usize, s: f64, activated: bool) {
        let drift = self.demands.w_lower[i] - if activated { 1.0 } else { 0.0 };
        let v = &mut self.lambda_hat.0[i];
        *v += s * drift;
        if self.mode == TlaMode::LowerBound && *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Geometric checkpoint grid: `per_decade` points per decade from `start`
/// up to and including `horizon`, rounded to slots and deduplicated.
pub fn geometric_checkpoints(start: u64, per_decade: u32, horizon: u64) -> Vec<u64> {
    let start = start.max(1);
    let mut out = Vec::new();
    if start > horizon {
        return vec![horizon];
    }
    let ratio = 10f64.powf(1.0 / per_decade.max(1) as f64);
    let mut k = 0i32;
    loop {
        let t = (start as f64 * ratio.powi(k)).round() as u64;
        if t >= horizon {
            break;
        }
        if out.last() != Some(&t) {
            out.push(t);
        }
        k += 1;
    }
    out.push(horizon);
    out
}

/// Snapshot at a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub t: u64,
    pub lambda: Vec<f64>,
    pub shares: Vec<f64>,
    pub avg_utility: f64,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub points: Vec<TrajectoryPoint>,
    pub final_state: TlaState,
    pub ledger: ShareLedger,
}

/// One slot as seen by an observer of the closed loop.
pub struct SlotOutcome<'a> {
    pub t: u64,
    pub selected: usize,
    pub utility: f64,
    pub ledger: &'a ShareLedger,
    pub lambda: &'a ThresholdVector,
}

/// Closed loop for `horizon` slots: draw a sample, select with the current
/// thresholds, record, update.
pub fn run_tla(
    env: &Environment,
    demands: &DemandVector,
    schedule: StepSchedule,
    mode: TlaMode,
    horizon: u64,
    checkpoints: &[u64],
    rng: &mut SimRng,
) -> Result<Trajectory> {
    run_tla_observed(env, demands, schedule, mode, horizon, checkpoints, rng, |_| Ok(()))
}

#[allow(clippy::too_many_arguments)]
pub fn run_tla_observed(
    env: &Environment,
    demands: &DemandVector,
    schedule: StepSchedule,
    mode: TlaMode,
    horizon: u64,
    checkpoints: &[u64],
    rng: &mut SimRng,
    mut observer: impl FnMut(&SlotOutcome) -> Result<()>,
) -> Result<Trajectory> {
    let catalog = env.catalog();
    if demands.n() != catalog.n() {
        return Err(config_err(format!("{} demands for {} users", demands.n(), catalog.n())));
    }
    if horizon == 0 {
        return Err(config_err("horizon must be at least 1"));
    }
    validate_checkpoints(checkpoints, horizon)?;
    let mut state = tla_init(demands.clone(), schedule, mode, catalog.n_max())?;
    let mut ledger = ShareLedger::new(catalog.n());
    let mut r = vec![0.0; catalog.len()];
    let mut bonus = vec![0.0; catalog.len()];
    let mut scratch = env.scratch();
    let mut points = Vec::with_capacity(checkpoints.len());
    let mut next = checkpoints.iter().peekable();

    for t in 1..=horizon {
        env.sample_into(rng, &mut scratch, &mut r);
        catalog.threshold_bonus_into(&state.lambda_hat, &mut bonus);
        let selected = select_with_bonus(&r, &bonus);
        ledger.record(selected, &r, catalog);
        state.step_selected(catalog, selected);
        observer(&SlotOutcome { t, selected, utility: r[selected], ledger: &ledger, lambda: &state.lambda_hat })?;
        if next.peek() == Some(&&t) {
            next.next();
            points.push(TrajectoryPoint {
                t,
                lambda: state.lambda_hat.0.clone(),
                shares: ledger.shares(),
                avg_utility: ledger.avg_utility(),
            });
        }
    }
    Ok(Trajectory { points, final_state: state, ledger })
}

pub(crate) fn validate_checkpoints(checkpoints: &[u64], horizon: u64) -> Result<()> {
    if checkpoints.windows(2).any(|w| w[0] >= w[1]) {
        return Err(config_err("checkpoints must be strictly increasing"));
    }
    if checkpoints.first().is_some_and(|&t| t == 0) || checkpoints.last().is_some_and(|&t| t > horizon) {
        return Err(config_err("checkpoints must lie in [1, horizon]"));
    }
    Ok(())
}

fn csv_writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out)
}

pub(crate) fn numbered(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (1..=n).map(move |i| format!("{prefix}_{i}"))
}

/// Trajectory CSV: `t, lambda_1..lambda_n, share_1..share_n, avg_utility`.
pub fn write_trajectory_csv<W: Write>(points: &[TrajectoryPoint], n: usize, out: W) -> Result<()> {
    let mut w = csv_writer(out);
    let mut header = vec!["t".to_string()];
    header.extend(numbered("lambda", n));
    header.extend(numbered("share", n));
    header.push("avg_utility".into());
    w.write_record(&header)?;
    for p in points {
        let mut row = vec![p.t.to_string()];
        row.extend(p.lambda.iter().map(f64::to_string));
        row.extend(p.shares.iter().map(f64::to_string));
        row.push(p.avg_utility.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Per-slot trace: `t, selected_j, utility, share_1..share_n`. Virtual users
/// are numbered from 1 in canonical order.
pub struct SlotTraceWriter<W: Write> {
    inner: csv::Writer<W>,
    row: Vec<String>,
}

impl<W: Write> SlotTraceWriter<W> {
    pub fn new(out: W, n: usize) -> Result<Self> {
        let mut inner = csv_writer(out);
        let mut header = vec!["t".to_string(), "selected_j".into(), "utility".into()];
        header.extend(numbered("share", n));
        inner.write_record(&header)?;
        Ok(Self { inner, row: Vec::with_capacity(n + 3) })
    }

    pub fn write(&mut self, slot: &SlotOutcome) -> Result<()> {
        self.row.clear();
        self.row.push(slot.t.to_string());
        self.row.push((slot.selected + 1).to_string());
        self.row.push(slot.utility.to_string());
        self.row.extend(slot.ledger.shares().iter().map(f64::to_string));
        self.inner.write_record(&self.row)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.inner.flush()?;
        Ok(())
    }
}
