//! Subcommand bodies. Each writes its artifacts under `output_dir` and
//! returns the written paths plus a one-line summary for stdout.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tempfair_core::epoch::{run_epoch_scheduler, write_epoch_trace_csv, EpochPlan};
use tempfair_core::experiments::{reference_hash, roc_experiment, summarize, write_roc_csv, RocSummary};
use tempfair_core::learning::{run_tla, run_tla_observed, write_trajectory_csv, SlotTraceWriter};
use tempfair_core::oracle::{long_run_reference, quantile_fixed_point, ReferenceSolution};
use tempfair_core::rng;
use tempfair_core::setting::hash_json;

use crate::config::{OracleMethod, RunConfig};
use crate::output::{write_csv, write_json};
use crate::{CliError, VERSION};

#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub message: String,
}

#[derive(Serialize)]
struct FinalState {
    setting_hash: String,
    horizon: u64,
    lambda_hat: Vec<f64>,
    lambda_differences: Vec<f64>,
    shares: Vec<f64>,
    activations: Vec<u64>,
    avg_utility: f64,
    max_share_deviation: f64,
}

/// Runs the learner to `horizon` from replication stream 0 of the seed.
pub fn cmd_learn(cfg: &RunConfig, trace: bool) -> Result<Outcome, CliError> {
    let setting = cfg.setting()?;
    let env = setting.build()?;
    let n = env.n();
    let checkpoints = cfg.checkpoints.grid(cfg.horizon);
    let mut rng = rng::replication(cfg.seed, 0);
    let dir = &cfg.output_dir;
    let mut files = Vec::new();

    let traj = if trace {
        let path = dir.join("slots.csv");
        let mut result = None;
        files.push(write_csv(&path, cfg, |out| {
            let mut writer = SlotTraceWriter::new(out, n)?;
            let traj = run_tla_observed(
                &env,
                &setting.demands,
                setting.schedule,
                setting.mode,
                cfg.horizon,
                &checkpoints,
                &mut rng,
                |slot| writer.write(slot),
            )?;
            writer.finish()?;
            result = Some(traj);
            Ok(())
        })?);
        result.expect("trace body ran")
    } else {
        run_tla(&env, &setting.demands, setting.schedule, setting.mode, cfg.horizon, &checkpoints, &mut rng)?
    };

    files.push(write_csv(&dir.join("trajectory.csv"), cfg, |out| Ok(write_trajectory_csv(&traj.points, n, out)?))?);
    let w = &setting.demands.w_lower;
    let state = FinalState {
        setting_hash: setting.hash(),
        horizon: cfg.horizon,
        lambda_differences: traj.final_state.lambda_hat.differences(),
        lambda_hat: traj.final_state.lambda_hat.0.clone(),
        shares: traj.ledger.shares(),
        activations: traj.ledger.activations().to_vec(),
        avg_utility: traj.ledger.avg_utility(),
        max_share_deviation: traj.ledger.max_share_deviation(w),
    };
    files.push(write_json(&dir.join("final_state.json"), cfg, &state)?);
    let message = format!(
        "learn: {} slots, avg utility {:.6}, max share deviation {:.3e}",
        cfg.horizon, state.avg_utility, state.max_share_deviation
    );
    Ok(Outcome { files, message })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CachedReference {
    key: String,
    reference: ReferenceSolution,
}

/// Cache key: everything the chosen method's result depends on.
pub fn reference_key(cfg: &RunConfig, method: OracleMethod) -> Result<String, CliError> {
    let setting = cfg.setting()?;
    let params = match method {
        OracleMethod::Quantile => serde_json::to_value(cfg.oracle.quantile_options())?,
        OracleMethod::Longrun => serde_json::json!({ "t_ref": cfg.oracle.t_ref }),
    };
    Ok(hash_json(&serde_json::json!({
        "version": VERSION,
        "setting": setting,
        "method": method,
        "params": params,
        "seed": cfg.seed,
    })))
}

/// Reference for the config's setting, from the cache when present.
/// Returns the solution and whether it was a cache hit.
pub fn obtain_reference(cfg: &RunConfig, method: OracleMethod) -> Result<(ReferenceSolution, bool), CliError> {
    let setting = cfg.setting()?;
    let key = reference_key(cfg, method)?;
    let path = cfg.cache_dir().join(format!("{key}.json"));
    if let Ok(text) = fs::read_to_string(&path) {
        if let Ok(cached) = serde_json::from_str::<CachedReference>(&text) {
            if cached.key == key && cached.reference.setting_hash == setting.hash() {
                return Ok((cached.reference, true));
            }
        }
    }

    let env = setting.build()?;
    let reference = match method {
        OracleMethod::Quantile => {
            let opts = cfg.oracle.quantile_options();
            let sol = quantile_fixed_point(&env, &setting.demands, &opts, cfg.seed)?;
            if !sol.converged {
                return Err(CliError::NonConvergence(format!(
                    "quantile iteration still moving by more than {} after {} sweeps",
                    opts.tol, sol.iterations
                )));
            }
            sol
        }
        OracleMethod::Longrun => long_run_reference(
            &env,
            &setting.demands,
            setting.schedule,
            setting.mode,
            cfg.oracle.t_ref,
            cfg.seed,
        )?,
    }
    .with_setting_hash(setting.hash());

    fs::create_dir_all(cfg.cache_dir())?;
    let cached = CachedReference { key, reference };
    fs::write(&path, serde_json::to_string_pretty(&cached)? + "\n")?;
    Ok((cached.reference, false))
}

#[derive(Serialize)]
struct ReferenceArtifact<'a> {
    method: OracleMethod,
    cache_key: String,
    reference_hash: String,
    reference: &'a ReferenceSolution,
}

pub fn cmd_oracle(cfg: &RunConfig, method: OracleMethod) -> Result<Outcome, CliError> {
    let (reference, hit) = obtain_reference(cfg, method)?;
    let artifact = ReferenceArtifact {
        method,
        cache_key: reference_key(cfg, method)?,
        reference_hash: reference_hash(&reference),
        reference: &reference,
    };
    let path = write_json(&cfg.output_dir.join("reference.json"), cfg, &artifact)?;
    let message = format!(
        "oracle ({}): lambda differences {:?}, U* = {:.6} +/- {:.2e}{}",
        method_name(method),
        reference.lambda_differences,
        reference.u_star,
        reference.ci_halfwidth,
        if hit { " [cached]" } else { "" }
    );
    Ok(Outcome { files: vec![path], message })
}

#[derive(Serialize)]
struct Agreement<'a> {
    quantile: &'a ReferenceSolution,
    longrun: &'a ReferenceSolution,
    max_abs_difference: f64,
    tolerance: f64,
    pass: bool,
}

/// Computes both references and compares their threshold differences.
/// Disagreement beyond `oracle.agreement_tol` is an oracle failure.
pub fn cmd_oracle_agreement(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let (quantile, _) = obtain_reference(cfg, OracleMethod::Quantile)?;
    let (longrun, _) = obtain_reference(cfg, OracleMethod::Longrun)?;
    let gap = quantile
        .lambda_differences
        .iter()
        .zip(&longrun.lambda_differences)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let tolerance = cfg.oracle.agreement_tol;
    let pass = gap <= tolerance;
    let path = write_json(
        &cfg.output_dir.join("agreement.json"),
        cfg,
        &Agreement { quantile: &quantile, longrun: &longrun, max_abs_difference: gap, tolerance, pass },
    )?;
    let message = format!("oracle agreement: max |difference gap| = {gap:.3e} (tolerance {tolerance}): {}", verdict(pass));
    if !pass {
        return Err(CliError::Disagreement(message));
    }
    Ok(Outcome { files: vec![path], message })
}

/// Reads a reference from a `reference.json` artifact, a cache entry or a
/// bare serialized solution.
pub fn load_reference(path: &Path) -> Result<ReferenceSolution, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut value: serde_json::Value = serde_json::from_str(&text)?;
    if let Some(inner) = value.get_mut("reference") {
        value = inner.take();
    }
    serde_json::from_value(value).map_err(|e| CliError::Config(format!("{}: not a reference solution: {e}", path.display())))
}

#[derive(Serialize)]
struct RocArtifact<'a> {
    setting: &'a str,
    setting_hash: &'a str,
    reference_hash: &'a str,
    config_hash: String,
    reps: usize,
    horizon: u64,
    u_star: f64,
    summary: &'a RocSummary,
}

pub fn cmd_roc(cfg: &RunConfig, reference: Option<&Path>) -> Result<Outcome, CliError> {
    let setting = cfg.setting()?;
    let reference = match reference {
        Some(path) => load_reference(path)?,
        None => obtain_reference(cfg, cfg.oracle.method)?.0,
    };
    let horizon = cfg.roc.horizon;
    let checkpoints = cfg.checkpoints.grid(horizon);
    let series = roc_experiment(&setting, &reference, cfg.reps, horizon, &checkpoints, cfg.seed, cfg.roc.options())?;
    let summary = summarize(&series)?;
    let dir = &cfg.output_dir;
    let mut files = vec![write_csv(&dir.join("roc.csv"), cfg, |out| Ok(write_roc_csv(&series, out)?))?];
    files.push(write_json(
        &dir.join("roc_summary.json"),
        cfg,
        &RocArtifact {
            setting: &series.setting,
            setting_hash: &series.setting_hash,
            reference_hash: &series.reference_hash,
            config_hash: cfg.hash(),
            reps: series.reps,
            horizon,
            u_star: reference.u_star,
            summary: &summary,
        },
    )?);
    let slope = summary.error_slope.map_or("n/a".to_string(), |s| format!("{s:.3}"));
    let ratio = summary.flatness_ratio.map_or("n/a".to_string(), |r| format!("{r:.3}"));
    let message = format!(
        "roc ({}, {} reps): error slope {slope}, flatness ratio {ratio}, y_t {}",
        series.setting, series.reps, summary.y_verdict
    );
    Ok(Outcome { files, message })
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochSummary {
    pub plan: EpochPlan,
    pub u_star: f64,
    pub u_star_ci: f64,
    /// `U*` minus its CI half-width.
    pub threshold: f64,
    pub points_after_epoch_1: usize,
    pub violations_after_epoch_1: usize,
    pub first_violation: Option<(u64, f64)>,
    /// Empirical burn-in: every later recorded point is above the threshold.
    pub last_violation: Option<(u64, f64)>,
    /// Smallest `running_avg - threshold` after epoch 1.
    pub min_margin: Option<f64>,
    pub above_after_epoch_1: bool,
    pub deviation_end_of_epoch_2: Option<f64>,
    pub deviation_end: f64,
    pub estimate_differences: Vec<Vec<f64>>,
}

/// Epoch-scheduler run for replication `rep` of the seed, with the summary
/// judged against `reference`.
pub fn epoch_run(
    cfg: &RunConfig,
    reference: &ReferenceSolution,
    rep: u64,
) -> Result<(tempfair_core::epoch::EpochTrace, EpochSummary), CliError> {
    let setting = cfg.setting()?;
    let env = setting.build()?;
    let plan = cfg.epoch.plan()?;
    let checkpoints = cfg.checkpoints.grid(plan.horizon());
    let trace = run_epoch_scheduler(
        &env,
        &setting.demands,
        &plan,
        setting.schedule,
        setting.mode,
        &checkpoints,
        &mut rng::replication(cfg.seed, rep),
    )?;
    let threshold = reference.u_star - reference.ci_halfwidth;
    let after: Vec<_> = trace.points_after_epoch(1).collect();
    let below: Vec<_> = after.iter().filter(|p| p.running_avg_utility < threshold).collect();
    let w = &setting.demands.w_lower;
    let deviation = |shares: &[f64]| shares.iter().zip(w).map(|(a, w)| (a - w).abs()).fold(0.0, f64::max);
    let summary = EpochSummary {
        u_star: reference.u_star,
        u_star_ci: reference.ci_halfwidth,
        threshold,
        points_after_epoch_1: after.len(),
        violations_after_epoch_1: below.len(),
        first_violation: below.first().map(|p| (p.t, p.running_avg_utility)),
        last_violation: below.last().map(|p| (p.t, p.running_avg_utility)),
        min_margin: after.iter().map(|p| p.running_avg_utility - threshold).reduce(f64::min),
        above_after_epoch_1: below.is_empty(),
        deviation_end_of_epoch_2: trace.end_of_epoch(2).map(|p| deviation(&p.shares)),
        deviation_end: trace.ledger.max_share_deviation(w),
        estimate_differences: trace.estimates.iter().map(|l| l.differences()).collect(),
        plan,
    };
    Ok((trace, summary))
}

pub fn cmd_epoch(cfg: &RunConfig) -> Result<Outcome, CliError> {
    // reject a bad plan before spending time on the reference
    cfg.epoch.plan()?;
    let (reference, _) = obtain_reference(cfg, cfg.oracle.method)?;
    let (trace, summary) = epoch_run(cfg, &reference, 0)?;
    let n = trace.ledger.activations().len();
    let dir = &cfg.output_dir;
    let files = vec![
        write_csv(&dir.join("epoch_trace.csv"), cfg, |out| Ok(write_epoch_trace_csv(&trace.points, n, out)?))?,
        write_json(&dir.join("epoch_summary.json"), cfg, &summary)?,
    ];
    let message = format!(
        "epoch (M={}, alpha*={}, K={}): {} of {} points after epoch 1 below U* - CI; share deviation {:.3e} -> {:.3e}",
        cfg.epoch.base,
        cfg.epoch.alpha_star,
        cfg.epoch.epochs,
        summary.violations_after_epoch_1,
        summary.points_after_epoch_1,
        summary.deviation_end_of_epoch_2.unwrap_or(f64::NAN),
        summary.deviation_end
    );
    Ok(Outcome { files, message })
}

pub(crate) fn method_name(method: OracleMethod) -> &'static str {
    match method {
        OracleMethod::Longrun => "longrun",
        OracleMethod::Quantile => "quantile",
    }
}

pub(crate) fn verdict(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}
