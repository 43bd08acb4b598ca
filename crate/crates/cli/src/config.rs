use std::path::Path;

use anyhow::{Context, Result};
use geoskill::scene_sim::{GenConfig, PerturbationKind, PerturbationSetting};
use geoskill::servo::ServoConfig;
use geoskill::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

/// Optional perturbation applied after generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbSection {
    pub kind: PerturbationKind,
    /// Defaults to the kind's standard magnitude.
    #[serde(default)]
    pub magnitude: Option<f64>,
}

impl PerturbSection {
    pub fn setting(&self) -> PerturbationSetting {
        PerturbationSetting::new(self.kind, self.magnitude.unwrap_or(self.kind.default_magnitude()))
    }
}

/// Settings for every command. Each command reads the sections it needs; the
/// whole effective config is echoed into its outputs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub gen: GenConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub perturb: Option<PerturbSection>,
    pub train: TrainConfig,
    pub servo: ServoConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        self.gen.validate()?;
        self.train.validate()?;
        self.servo.validate()?;
        if let Some(p) = &self.perturb {
            anyhow::ensure!(p.setting().magnitude >= 0.0, "perturbation magnitude must be >= 0");
        }
        Ok(())
    }
}
