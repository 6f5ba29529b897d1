//! A complete description of one scheduling setting and its identity hash.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel::{Environment, EnvironmentSpec};
use crate::error::{config_err, Error, Result};
use crate::learning::{StepSchedule, TlaMode};
use crate::scheduler::{check_feasibility, DemandVector};

/// Everything that determines the law of a learning run except the seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Setting {
    pub env: EnvironmentSpec,
    pub demands: DemandVector,
    pub mode: TlaMode,
    pub schedule: StepSchedule,
}

impl Setting {
    pub fn new(env: EnvironmentSpec, w: Vec<f64>, mode: TlaMode, schedule: StepSchedule) -> Result<Self> {
        let s = Self { env, demands: mode.demands(w)?, mode, schedule };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        self.demands.validate()?;
        self.schedule.validate()?;
        if self.demands.n() != self.env.n() {
            return Err(config_err(format!(
                "{} demands given for {} users",
                self.demands.n(),
                self.env.n()
            )));
        }
        let report = check_feasibility(&self.demands, self.env.n_max());
        if !report.ok {
            return Err(Error::Infeasible(report.to_string()));
        }
        Ok(())
    }

    pub fn build(&self) -> Result<Environment> {
        self.env.build()
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        hash_json(self)
    }
}

/// Hex SHA-256 of the compact JSON form of `value`.
pub fn hash_json<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("settings serialize to JSON");
    Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{CellConfig, SyntheticKind};

    #[test]
    fn hash_tracks_content() {
        let a = Setting::new(
            EnvironmentSpec::Synthetic { sampler: SyntheticKind::Uniform01, n: 2 },
            vec![0.25, 0.75],
            TlaMode::Equality,
            StepSchedule::default(),
        )
        .unwrap();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
        b.demands.w_lower[0] = 0.3;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn length_mismatch_rejected() {
        let err = Setting::new(
            EnvironmentSpec::Channel { cell: CellConfig::default(), n_max: 1 },
            vec![0.5, 0.5],
            TlaMode::Equality,
            StepSchedule::default(),
        );
        assert!(err.is_err());
    }
}
