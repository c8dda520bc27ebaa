use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::model::ModelConfig;
use crate::nn::AdamWConfig;
use crate::scenario::Scenario;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BatchPolicy {
    /// Maximum utterances per batch.
    pub utterances: usize,
    /// Maximum summed duration of a batch in seconds.
    pub max_duration_s: f64,
    /// Batches per optimizer step.
    pub grad_accumulation: usize,
}

impl Default for BatchPolicy {
    fn default() -> Self {
        Self {
            utterances: 8,
            max_duration_s: 64.0,
            grad_accumulation: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub scenario: Scenario,
    pub seed: u64,
    pub stage1_lr: f64,
    pub stage2_lr: f64,
    pub patience: usize,
    /// Upper bound on epochs per stage.
    pub max_epochs: usize,
    pub optimizer: AdamWConfig,
    pub batch: BatchPolicy,
    pub loss: LossConfig,
    pub model: ModelConfig,
    /// Manifest with train and dev entries.
    pub train_manifest: Option<PathBuf>,
    pub checkpoint_root: PathBuf,
    /// SE-Base checkpoint used as the SISE-P preprocessor.
    pub se_base_checkpoint: Option<PathBuf>,
    /// Enhance SISE-P inputs once up front instead of per batch.
    pub cache_enhanced: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            scenario: Scenario::SiseM,
            seed: 0,
            stage1_lr: 5e-4,
            stage2_lr: 5e-5,
            patience: 5,
            max_epochs: 100,
            optimizer: AdamWConfig::default(),
            batch: BatchPolicy::default(),
            loss: LossConfig::default(),
            model: ModelConfig::default(),
            train_manifest: None,
            checkpoint_root: PathBuf::from("runs"),
            se_base_checkpoint: None,
            cache_enhanced: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.stage1_lr > 0.0 && self.stage2_lr > 0.0) {
            return Err(Error::InvalidInput("learning rates must be positive".into()));
        }
        if self.stage2_lr >= self.stage1_lr {
            return Err(Error::InvalidInput(
                "stage-2 learning rate must be below the stage-1 rate".into(),
            ));
        }
        if self.patience == 0 {
            return Err(Error::InvalidInput("patience must be at least 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::InvalidInput("max_epochs must be at least 1".into()));
        }
        if self.batch.utterances == 0 || self.batch.grad_accumulation == 0 || !(self.batch.max_duration_s > 0.0) {
            return Err(Error::InvalidInput("batch policy values must be positive".into()));
        }
        self.loss.validate()?;
        self.model.validate()
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Serde(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&s)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serde(e.to_string()))
    }

    /// SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_string(self).expect("config serializes");
        crate::nn::hex(&Sha256::digest(json.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = TrainConfig::default();
        c.validate().unwrap();
        assert_eq!(c.stage1_lr, 5e-4);
        assert_eq!(c.stage2_lr, 5e-5);
        assert_eq!(c.patience, 5);
        let back = TrainConfig::from_toml_str(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn partial_toml_uses_defaults() {
        let c = TrainConfig::from_toml_str("scenario = \"si-o\"\nseed = 4\n[model]\nsi_hidden = 32\n").unwrap();
        assert_eq!(c.scenario, Scenario::SiO);
        assert_eq!(c.model.si_hidden, 32);
        assert_eq!(c.model.se_hidden, 256);
    }

    #[test]
    fn invalid_rates() {
        let c = TrainConfig { stage2_lr: 1e-3, ..Default::default() };
        assert!(c.validate().is_err());
        let c = TrainConfig { patience: 0, ..Default::default() };
        assert!(c.validate().is_err());
        assert!(TrainConfig::from_toml_str("scenario = \"bogus\"").is_err());
    }
}
