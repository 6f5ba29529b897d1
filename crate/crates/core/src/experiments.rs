//! Rate-of-convergence measurements over independent replications.
//!
//! For each checkpoint `t`:
//!
//! * `x_t = sqrt(t) * E ||lambda* - lambda_hat_t||_inf`
//! * `y_t = sqrt(t) * E (U* - U_hat_t)`, with no positive part, so a
//!   negative `y_t` means the running utility sits above `U*`.
//!
//! A flat `x_t` means the threshold error decays like `t^{-1/2}`.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{Environment, EnvironmentSpec};
use crate::error::{config_err, Error, Result};
use crate::learning::{run_tla, validate_checkpoints};
use crate::oracle::ReferenceSolution;
use crate::rng;
use crate::setting::Setting;
use crate::stats::{mean_var, ols_slope_with_error};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RocOptions {
    /// Re-place users for every replication instead of fixing the placement.
    pub redraw_positions: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocSeries {
    pub checkpoints: Vec<u64>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub stderr_x: Vec<f64>,
    pub stderr_y: Vec<f64>,
    pub reps: usize,
    pub setting: String,
    pub setting_hash: String,
    pub reference_hash: String,
}

impl RocSeries {
    /// `E ||lambda* - lambda_hat_t||_inf` recovered from `x_t`.
    pub fn mean_error(&self) -> Vec<f64> {
        self.checkpoints.iter().zip(&self.x).map(|(&t, x)| x / (t as f64).sqrt()).collect()
    }

    /// Value of `x` at the checkpoint closest to `t` (in log scale).
    pub fn x_near(&self, t: u64) -> Option<f64> {
        let lt = (t as f64).ln();
        self.checkpoints
            .iter()
            .zip(&self.x)
            .min_by(|a, b| ((*a.0 as f64).ln() - lt).abs().total_cmp(&((*b.0 as f64).ln() - lt).abs()))
            .map(|(_, &x)| x)
    }
}

fn setting_label(spec: &EnvironmentSpec) -> &'static str {
    match spec {
        EnvironmentSpec::Channel { n_max: 1, .. } => "oma",
        EnvironmentSpec::Channel { .. } => "noma",
        EnvironmentSpec::Synthetic { .. } => "synthetic",
    }
}

/// Runs `reps` independent learner replications to `horizon` and averages
/// the threshold error and utility gap against `reference` at every
/// checkpoint. Replication `i` draws from stream `i` of `seed`; the
/// reduction runs sequentially in replication order.
pub fn roc_experiment(
    setting: &Setting,
    reference: &ReferenceSolution,
    reps: usize,
    horizon: u64,
    checkpoints: &[u64],
    seed: u64,
    opts: RocOptions,
) -> Result<RocSeries> {
    let setting_hash = setting.hash();
    if reference.setting_hash != setting_hash {
        return Err(Error::ReferenceMismatch { reference: reference.setting_hash.clone(), setting: setting_hash });
    }
    if reps == 0 {
        return Err(config_err("at least one replication is required"));
    }
    if checkpoints.is_empty() {
        return Err(config_err("at least one checkpoint is required"));
    }
    validate_checkpoints(checkpoints, horizon)?;
    let shared = setting.build()?;

    let per_rep: Vec<(Vec<f64>, Vec<f64>)> = (0..reps)
        .into_par_iter()
        .map(|rep| -> Result<_> {
            let env = if opts.redraw_positions { redraw(&setting.env, rep)? } else { shared.clone() };
            let mut rng = rng::replication(seed, rep as u64);
            let traj = run_tla(&env, &setting.demands, setting.schedule, setting.mode, horizon, checkpoints, &mut rng)?;
            let err = traj
                .points
                .iter()
                .map(|p| p.lambda.iter().zip(&reference.lambda_star.0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
                .collect();
            let gap = traj.points.iter().map(|p| reference.u_star - p.avg_utility).collect();
            Ok((err, gap))
        })
        .collect::<Result<_>>()?;

    let mut series = RocSeries {
        checkpoints: checkpoints.to_vec(),
        x: Vec::with_capacity(checkpoints.len()),
        y: Vec::with_capacity(checkpoints.len()),
        stderr_x: Vec::with_capacity(checkpoints.len()),
        stderr_y: Vec::with_capacity(checkpoints.len()),
        reps,
        setting: setting_label(&setting.env).into(),
        setting_hash: setting.hash(),
        reference_hash: reference_hash(reference),
    };
    let mut errs = vec![0.0; reps];
    let mut gaps = vec![0.0; reps];
    for (c, &t) in checkpoints.iter().enumerate() {
        for (rep, (e, g)) in per_rep.iter().enumerate() {
            errs[rep] = e[c];
            gaps[rep] = g[c];
        }
        let scale = (t as f64).sqrt();
        let (me, ve) = mean_var(&errs);
        let (mg, vg) = mean_var(&gaps);
        series.x.push(scale * me);
        series.y.push(scale * mg);
        series.stderr_x.push(scale * (ve / reps as f64).sqrt());
        series.stderr_y.push(scale * (vg / reps as f64).sqrt());
    }
    Ok(series)
}

fn redraw(spec: &EnvironmentSpec, rep: usize) -> Result<Environment> {
    match spec {
        EnvironmentSpec::Channel { cell, n_max } => {
            let mut cell = cell.clone();
            cell.rng_seed = cell.rng_seed.wrapping_add(rep as u64 + 1);
            EnvironmentSpec::Channel { cell, n_max: *n_max }.build()
        }
        other => other.build(),
    }
}

/// Hash identifying a reference solution.
pub fn reference_hash(reference: &ReferenceSolution) -> String {
    crate::setting::hash_json(reference)
}

/// Checkpoints at or after this slot enter the sign profile of `y_t`.
pub const Y_SIGN_FROM: u64 = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocSummary {
    /// Log-log slope of the mean threshold error over the last decade.
    pub error_slope: Option<f64>,
    pub error_slope_stderr: Option<f64>,
    pub slope_window: (u64, u64),
    pub slope_points: usize,
    /// `x` at the horizon over `x` at a quarter of the horizon.
    pub flatness_ratio: Option<f64>,
    pub y_negative: usize,
    pub y_nonnegative: usize,
    pub y_verdict: String,
    pub x_verdict: String,
    pub warnings: Vec<String>,
}

impl RocSummary {
    pub fn converges_from_above(&self) -> bool {
        self.y_nonnegative == 0 && self.y_negative > 0
    }
}

/// Slope fit, flatness ratio and sign profile of a series.
pub fn summarize(series: &RocSeries) -> Result<RocSummary> {
    let n = series.checkpoints.len();
    if n == 0 || series.x.len() != n || series.y.len() != n {
        return Err(config_err("series is empty or misaligned"));
    }
    let horizon = *series.checkpoints.last().expect("nonempty");
    let from = (horizon / 10).max(1);
    let (lx, ly): (Vec<f64>, Vec<f64>) = series
        .checkpoints
        .iter()
        .zip(series.mean_error())
        .filter(|(&t, e)| t >= from && *e > 0.0)
        .map(|(&t, e)| ((t as f64).ln(), e.ln()))
        .unzip();
    let mut warnings = Vec::new();
    let (error_slope, error_slope_stderr) = if lx.len() >= 5 {
        let (s, e) = ols_slope_with_error(&lx, &ly);
        (Some(s), Some(e))
    } else {
        warnings.push(format!("only {} checkpoints in the last decade; slope omitted", lx.len()));
        (None, None)
    };
    let flatness_ratio = match (series.x.last(), series.x_near(horizon / 4)) {
        (Some(&last), Some(quarter)) if horizon >= 4 && quarter > 0.0 => Some(last / quarter),
        _ => None,
    };
    let (mut y_negative, mut y_nonnegative) = (0, 0);
    for (&t, &y) in series.checkpoints.iter().zip(&series.y) {
        if t >= Y_SIGN_FROM {
            if y < 0.0 {
                y_negative += 1;
            } else {
                y_nonnegative += 1;
            }
        }
    }
    let y_verdict = if y_negative + y_nonnegative == 0 {
        "no checkpoints past 1000".to_string()
    } else if y_nonnegative == 0 {
        "converges from above".to_string()
    } else if y_negative == 0 {
        "converges from below".to_string()
    } else {
        "mixed sign".to_string()
    };
    let x_verdict = match flatness_ratio {
        Some(r) if (0.5..=2.0).contains(&r) => "flat".to_string(),
        Some(_) => "not flat".to_string(),
        None => "undetermined".to_string(),
    };
    Ok(RocSummary {
        error_slope,
        error_slope_stderr,
        slope_window: (from, horizon),
        slope_points: lx.len(),
        flatness_ratio,
        y_negative,
        y_nonnegative,
        y_verdict,
        x_verdict,
        warnings,
    })
}

/// RoC CSV: `t, x_t, y_t, stderr_x, stderr_y`.
pub fn write_roc_csv<W: Write>(series: &RocSeries, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(["t", "x_t", "y_t", "stderr_x", "stderr_y"])?;
    for i in 0..series.checkpoints.len() {
        w.write_record([
            series.checkpoints[i].to_string(),
            series.x[i].to_string(),
            series.y[i].to_string(),
            series.stderr_x[i].to_string(),
            series.stderr_y[i].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::SyntheticKind;
    use crate::learning::{geometric_checkpoints, StepSchedule, TlaMode};
    use crate::oracle::{quantile_fixed_point, QuantileOptions};

    fn series_from(checkpoints: Vec<u64>, x: Vec<f64>, y: Vec<f64>) -> RocSeries {
        let n = x.len();
        RocSeries {
            checkpoints,
            x,
            y,
            stderr_x: vec![0.0; n],
            stderr_y: vec![0.0; n],
            reps: 1,
            setting: "synthetic".into(),
            setting_hash: String::new(),
            reference_hash: String::new(),
        }
    }

    #[test]
    fn constant_x_has_half_slope() {
        let cps = geometric_checkpoints(10, 50, 100_000);
        let n = cps.len();
        let s = summarize(&series_from(cps, vec![3.0; n], vec![-1.0; n])).unwrap();
        assert!((s.error_slope.unwrap() + 0.5).abs() < 1e-9);
        assert!((s.flatness_ratio.unwrap() - 1.0).abs() < 1e-12);
        assert!(s.converges_from_above());
        assert_eq!(s.y_verdict, "converges from above");
    }

    #[test]
    fn sparse_last_decade_omits_slope() {
        let s = summarize(&series_from(vec![10, 100, 1000, 5000], vec![1.0; 4], vec![0.5; 4])).unwrap();
        assert!(s.error_slope.is_none());
        assert_eq!(s.warnings.len(), 1);
        assert_eq!(s.y_verdict, "converges from below");
    }

    fn uniform_setting() -> Setting {
        Setting::new(
            EnvironmentSpec::Synthetic { sampler: SyntheticKind::Uniform01, n: 2 },
            vec![0.25, 0.75],
            TlaMode::Equality,
            StepSchedule::default(),
        )
        .unwrap()
    }

    #[test]
    fn mismatched_reference_refused() {
        let setting = uniform_setting();
        let env = setting.build().unwrap();
        let opts = QuantileOptions { batch: 20_000, ..Default::default() };
        let reference = quantile_fixed_point(&env, &setting.demands, &opts, 1).unwrap().with_setting_hash("nope");
        let err = roc_experiment(&setting, &reference, 2, 100, &[10, 100], 1, RocOptions::default()).unwrap_err();
        assert!(matches!(err, Error::ReferenceMismatch { .. }));
    }

    #[test]
    fn series_is_deterministic_and_thread_independent() {
        let setting = uniform_setting();
        let env = setting.build().unwrap();
        let opts = QuantileOptions { batch: 20_000, ..Default::default() };
        let reference = quantile_fixed_point(&env, &setting.demands, &opts, 1).unwrap().with_setting_hash(setting.hash());
        let cps = geometric_checkpoints(10, 10, 5000);
        let a = roc_experiment(&setting, &reference, 4, 5000, &cps, 9, RocOptions::default()).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let b = pool.install(|| roc_experiment(&setting, &reference, 4, 5000, &cps, 9, RocOptions::default()).unwrap());
        assert_eq!(a, b);
        assert!(a.x.iter().all(|&x| x >= 0.0));
        let one = roc_experiment(&setting, &reference, 1, 5000, &cps, 9, RocOptions::default()).unwrap();
        assert_eq!(one, roc_experiment(&setting, &reference, 1, 5000, &cps, 9, RocOptions::default()).unwrap());
    }

    #[test]
    fn roc_csv_header() {
        let mut buf = Vec::new();
        write_roc_csv(&series_from(vec![10], vec![1.5], vec![-0.25]), &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "t,x_t,y_t,stderr_x,stderr_y\n10,1.5,-0.25,0,0\n");
    }
}
