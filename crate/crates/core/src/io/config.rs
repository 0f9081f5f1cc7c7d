//! Pipeline configuration as TOML. Every tunable constant in the pipeline
//! lives here with its default, so a full config can be emitted, edited,
//! and fed back. Partial files work: missing keys take defaults, unknown
//! keys are rejected.

use crate::control::ControlConfig;
use crate::error::{Error, Result};
use crate::train::{LossWeights, OptimConfig};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Render background color, also composited behind every fit target.
    pub background: Vector3<f64>,
    pub control: ControlConfig,
    pub optim: OptimConfig,
    pub stage1: LossWeights,
    pub stage2: LossWeights,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            background: Vector3::new(0.0, 0.0, 0.0),
            control: ControlConfig::default(),
            optim: OptimConfig::default(),
            stage1: LossWeights::stage1(),
            stage2: LossWeights::stage2(),
        }
    }
}

impl PipelineConfig {
    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config {
            message: e.to_string(),
        })
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config {
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_toml_str(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml_string()?).map_err(|e| Error::io(path.display().to_string(), e))
    }

    /// Checks every section; the Gaussian-count-dependent split cap is
    /// checked against zero here and against the live count by the fit.
    pub fn validate(&self) -> Result<()> {
        if !self.background.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("background color must be finite"));
        }
        self.control.validate(0)?;
        self.optim.validate()?;
        self.stage1.validate()?;
        self.stage2.validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_identically() {
        let config = PipelineConfig::default();
        let text = config.to_toml_string().unwrap();
        let parsed = PipelineConfig::from_toml_str(&text).unwrap();
        assert_eq!(config, parsed);
        config.validate().unwrap();
    }

    #[test]
    fn partial_files_override_single_keys() {
        let parsed = PipelineConfig::from_toml_str(
            "[optim]\nseed = 9\n\n[control]\ntau_split = 0.5\n\n[stage2]\nperceptual = 0.25\n",
        )
        .unwrap();
        assert_eq!(parsed.optim.seed, 9);
        assert_eq!(parsed.control.tau_split, 0.5);
        assert_eq!(parsed.stage2.perceptual, 0.25);
        assert_eq!(parsed.optim.stage2_iters, OptimConfig::default().stage2_iters);
        assert_eq!(parsed.stage1, LossWeights::stage1());
        assert_eq!(parsed.background, Vector3::new(0.0, 0.0, 0.0));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(PipelineConfig::from_toml_str("[optim]\nsede = 9\n").is_err());
        assert!(PipelineConfig::from_toml_str("nonsense = true\n").is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pipeline.toml");
        let mut config = PipelineConfig {
            background: Vector3::new(0.1, 0.2, 0.3),
            ..PipelineConfig::default()
        };
        config.optim.stage2_iters = 123;
        config.save(&path).unwrap();
        assert_eq!(PipelineConfig::load(&path).unwrap(), config);
    }

    #[test]
    fn validation_rejects_bad_sections() {
        let mut config = PipelineConfig::default();
        config.stage1.mesh = -1.0;
        assert!(config.validate().is_err());

        let mut config = PipelineConfig::default();
        config.background.x = f64::NAN;
        assert!(config.validate().is_err());
    }
}
