//! Run configuration: TOML on disk, every field defaulted, unknown keys rejected.
//!
//! Output JSON files embed the resolved config under `"config"`; such a file
//! is accepted wherever a config file is, so runs can be replayed from their
//! own artifacts.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tempfair_core::channel::{CellConfig, EnvironmentSpec, SyntheticKind};
use tempfair_core::epoch::{build_epoch_plan, EpochPlan};
use tempfair_core::experiments::RocOptions;
use tempfair_core::learning::{geometric_checkpoints, StepSchedule, TlaMode};
use tempfair_core::oracle::QuantileOptions;
use tempfair_core::setting::Setting;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SettingKind {
    Oma,
    Noma,
    Synthetic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum OracleMethod {
    Longrun,
    Quantile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub setting: SettingKind,
    pub seed: u64,
    /// Slots for `learn`.
    pub horizon: u64,
    /// Replications for `roc`.
    pub reps: usize,
    /// Defaults to `equality` for OMA and synthetic, `lower_bound` for NOMA.
    pub mode: Option<TlaMode>,
    /// Locations are not part of a run's identity and are left out of
    /// embedded configs and hashes.
    #[serde(skip_serializing)]
    pub output_dir: PathBuf,
    /// Defaults to `<output_dir>/cache`.
    #[serde(skip_serializing)]
    pub reference_cache: Option<PathBuf>,
    pub cell: CellConfig,
    pub demands: DemandsConfig,
    pub schedule: StepSchedule,
    pub checkpoints: CheckpointConfig,
    pub synthetic: SyntheticConfig,
    pub oracle: OracleConfig,
    pub roc: RocConfig,
    pub epoch: EpochConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            setting: SettingKind::Oma,
            seed: 1,
            horizon: 5_000_000,
            reps: 100,
            mode: None,
            output_dir: PathBuf::from("out"),
            reference_cache: None,
            cell: CellConfig::default(),
            demands: DemandsConfig::default(),
            schedule: StepSchedule::default(),
            checkpoints: CheckpointConfig::default(),
            synthetic: SyntheticConfig::default(),
            oracle: OracleConfig::default(),
            roc: RocConfig::default(),
            epoch: EpochConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DemandsConfig {
    /// Defaults to `[0.1, 0.2, 0.3, 0.4]` for channel settings and
    /// `[0.25, 0.75]` for the synthetic one.
    pub w: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CheckpointConfig {
    pub start: u64,
    pub per_decade: u32,
}

impl Default for CheckpointConfig {
    fn default() -> Self {
        Self { start: 10, per_decade: 50 }
    }
}

impl CheckpointConfig {
    pub fn grid(&self, horizon: u64) -> Vec<u64> {
        geometric_checkpoints(self.start, self.per_decade, horizon)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub n: usize,
    /// `uniform01` or `exponential`.
    pub kind: SyntheticName,
    /// Mean of the exponential sampler.
    pub mean: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticName {
    Uniform01,
    Exponential,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self { n: 2, kind: SyntheticName::Uniform01, mean: 1.0 }
    }
}

impl SyntheticConfig {
    fn kind(&self) -> Result<SyntheticKind, CliError> {
        let kind = match self.kind {
            SyntheticName::Uniform01 => SyntheticKind::Uniform01,
            SyntheticName::Exponential => SyntheticKind::Exponential { mean: self.mean },
        };
        kind.validate()?;
        Ok(kind)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    pub method: OracleMethod,
    pub t_ref: u64,
    pub batch: u64,
    pub tol: f64,
    pub max_iters: u32,
    /// Largest accepted gap between the two methods' threshold differences.
    pub agreement_tol: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        let q = QuantileOptions::default();
        Self {
            method: OracleMethod::Longrun,
            t_ref: 5_000_000,
            batch: q.batch,
            tol: q.tol,
            max_iters: q.max_iters,
            agreement_tol: 0.01,
        }
    }
}

impl OracleConfig {
    pub fn quantile_options(&self) -> QuantileOptions {
        QuantileOptions { batch: self.batch, tol: self.tol, max_iters: self.max_iters }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RocConfig {
    pub horizon: u64,
    pub redraw_positions: bool,
}

impl Default for RocConfig {
    fn default() -> Self {
        Self { horizon: 200_000, redraw_positions: false }
    }
}

impl RocConfig {
    pub fn options(&self) -> RocOptions {
        RocOptions { redraw_positions: self.redraw_positions }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpochConfig {
    pub base: u64,
    pub alpha_star: f64,
    pub epochs: u32,
}

impl Default for EpochConfig {
    fn default() -> Self {
        Self { base: 3, alpha_star: 0.5, epochs: 12 }
    }
}

impl EpochConfig {
    pub fn plan(&self) -> Result<EpochPlan, CliError> {
        Ok(build_epoch_plan(self.base, self.alpha_star, self.epochs)?)
    }
}

/// Wrapper used to pull the config back out of an output JSON file.
#[derive(Deserialize)]
struct Embedded {
    config: RunConfig,
}

impl RunConfig {
    /// Reads a TOML config, or a JSON output file with an embedded config.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let text = embedded_csv_config(text).unwrap_or(text);
        if text.trim_start().starts_with('{') {
            let value: serde_json::Value =
                serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
            let cfg = if value.get("config").is_some() {
                serde_json::from_value::<Embedded>(value).map(|e| e.config)
            } else {
                serde_json::from_value::<RunConfig>(value)
            };
            return cfg.map_err(|e| CliError::Config(e.to_string()));
        }
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Fills setting-dependent defaults and checks every invariant.
    pub fn resolve(mut self) -> Result<Self, CliError> {
        if self.demands.w.is_none() {
            self.demands.w = Some(match self.setting {
                SettingKind::Synthetic => vec![0.25, 0.75],
                _ => vec![0.1, 0.2, 0.3, 0.4],
            });
        }
        if self.mode.is_none() {
            self.mode = Some(match self.setting {
                SettingKind::Noma => TlaMode::LowerBound,
                _ => TlaMode::Equality,
            });
        }
        if self.reference_cache.is_none() {
            self.reference_cache = Some(self.output_dir.join("cache"));
        }
        if self.horizon == 0 || self.roc.horizon == 0 {
            return Err(CliError::Config("horizons must be at least 1".into()));
        }
        if self.reps == 0 {
            return Err(CliError::Config("reps must be at least 1".into()));
        }
        if self.checkpoints.start == 0 || self.checkpoints.per_decade == 0 {
            return Err(CliError::Config("checkpoints.start and checkpoints.per_decade must be positive".into()));
        }
        self.setting()?;
        Ok(self)
    }

    pub fn mode(&self) -> TlaMode {
        self.mode.unwrap_or(TlaMode::Equality)
    }

    pub fn env_spec(&self) -> Result<EnvironmentSpec, CliError> {
        Ok(match self.setting {
            SettingKind::Oma => EnvironmentSpec::Channel { cell: self.cell.clone(), n_max: 1 },
            SettingKind::Noma => EnvironmentSpec::Channel { cell: self.cell.clone(), n_max: 2 },
            SettingKind::Synthetic => EnvironmentSpec::Synthetic { sampler: self.synthetic.kind()?, n: self.synthetic.n },
        })
    }

    /// The validated setting, including the feasibility precheck.
    pub fn setting(&self) -> Result<Setting, CliError> {
        let w = self.demands.w.clone().ok_or_else(|| CliError::Config("demands.w unresolved".into()))?;
        Ok(Setting::new(self.env_spec()?, w, self.mode(), self.schedule)?)
    }

    /// Identity of the run: hash of the embedded form.
    pub fn hash(&self) -> String {
        tempfair_core::setting::hash_json(self)
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.reference_cache.clone().unwrap_or_else(|| self.output_dir.join("cache"))
    }
}

/// The JSON config from the `# config ` comment line of an output CSV.
fn embedded_csv_config(text: &str) -> Option<&str> {
    text.lines()
        .take_while(|l| l.starts_with('#'))
        .find_map(|l| l.strip_prefix(crate::output::CSV_CONFIG_PREFIX))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_resolve_per_setting() {
        let oma = RunConfig::default().resolve().unwrap();
        assert_eq!(oma.demands.w.as_deref(), Some(&[0.1, 0.2, 0.3, 0.4][..]));
        assert_eq!(oma.mode, Some(TlaMode::Equality));

        let noma = RunConfig { setting: SettingKind::Noma, ..Default::default() }.resolve().unwrap();
        assert_eq!(noma.mode, Some(TlaMode::LowerBound));

        let syn = RunConfig { setting: SettingKind::Synthetic, ..Default::default() }.resolve().unwrap();
        assert_eq!(syn.demands.w.as_deref(), Some(&[0.25, 0.75][..]));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::parse("seed = 3\nsede = 4\n").is_err());
        assert!(RunConfig::parse("[cell]\nradius = 4\n").is_err());
        let cfg = RunConfig::parse("seed = 3\n[cell]\nedge_snr_db = 5.0\n").unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.cell.edge_snr_db, 5.0);
    }

    #[test]
    fn invalid_values_fail_at_parse_time() {
        let bad = RunConfig::parse("[schedule]\nkappa = 0.4\n").unwrap();
        assert!(matches!(bad.resolve(), Err(CliError::Config(_))));
        let infeasible = RunConfig::parse("[demands]\nw = [0.5, 0.5, 0.3, 0.4]\n").unwrap();
        assert!(matches!(infeasible.resolve(), Err(CliError::Infeasible(_))));
    }

    #[test]
    fn embedded_json_round_trips() {
        let cfg = RunConfig { seed: 9, setting: SettingKind::Synthetic, ..Default::default() }.resolve().unwrap();
        let doc = serde_json::json!({ "version": "x", "config": cfg, "payload": 1 });
        let back = RunConfig::parse(&doc.to_string()).unwrap().resolve().unwrap();
        assert_eq!(back, cfg);
        let csv = format!("# tempfair 0.1.0\n# config {}\nt,x\n1,2\n", serde_json::to_string(&cfg).unwrap());
        assert_eq!(RunConfig::parse(&csv).unwrap().resolve().unwrap(), cfg);
    }
}
