//! Run configuration: one JSON file that pins everything a run needs.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use mimic_core::dataset::DemoPlan;
use mimic_core::grid::TaskId;
use mimic_core::policy::PolicyMode;
use mimic_core::predict::{PredictorKind, TrainConfig};
use mimic_core::render::RenderConfig;

pub const CONFIG_VERSION: u32 = 1;

/// Predictor flavor per role.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictorRoles {
    pub expert: PredictorKind,
    pub actions: PredictorKind,
}

impl Default for PredictorRoles {
    fn default() -> Self {
        Self {
            expert: PredictorKind::Analytic,
            actions: PredictorKind::Analytic,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub task: TaskId,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_mode")]
    pub mode: PolicyMode,
    #[serde(default)]
    pub predictors: PredictorRoles,
    #[serde(default)]
    pub render: RenderConfig,
    /// Demonstration plan; defaults to the task's built-in plan.
    #[serde(default)]
    pub plan: Option<DemoPlan>,
    #[serde(default)]
    pub train: TrainConfig,
}

fn default_mode() -> PolicyMode {
    PolicyMode::SequenceFed
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .with_context(|| format!("cannot parse config {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            bail!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                self.version
            );
        }
        self.render
            .validate()
            .context("invalid render configuration")?;
        if let Some(plan) = &self.plan {
            if plan.task != self.task {
                bail!(
                    "plan is for task {} but the config selects {}",
                    plan.task,
                    self.task
                );
            }
            plan.validate().context("invalid demo plan")?;
        }
        self.train.validate().context("invalid train config")?;
        Ok(())
    }

    /// The configured plan, or the task default.
    pub fn plan(&self) -> DemoPlan {
        self.plan
            .clone()
            .unwrap_or_else(|| DemoPlan::default_for(self.task))
    }

    /// A train config with the run seed folded in when the train section
    /// leaves it unset.
    pub fn train_for(&self, seed_offset: u64) -> TrainConfig {
        let mut tc = self.train.clone();
        if tc.seed == 0 {
            tc.seed = self.seed.wrapping_add(seed_offset);
        } else {
            tc.seed = tc.seed.wrapping_add(seed_offset);
        }
        tc
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg: RunConfig =
            serde_json::from_str(r#"{"version":1,"task":"movetopos"}"#).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.mode, PolicyMode::SequenceFed);
        assert_eq!(cfg.train.max_epochs, 500);
        assert_eq!(cfg.plan().task, TaskId::MoveToPos);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let err = serde_json::from_str::<RunConfig>(
            r#"{"version":1,"task":"movetopos","bogus":3}"#,
        );
        assert!(err.is_err());
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let cfg: RunConfig =
            serde_json::from_str(r#"{"version":9,"task":"pushpull"}"#).unwrap();
        assert!(cfg.validate().is_err());
    }
}
