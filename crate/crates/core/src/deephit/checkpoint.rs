use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DeepHit, DeepHitConfig, MlpConfig};
use crate::cohort::ScalerStats;
use crate::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to score raw look-back feature vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub feature_names: Vec<String>,
    pub scaler: ScalerStats,
    pub mlp_config: MlpConfig,
    pub deephit_config: DeepHitConfig,
    pub model: DeepHit,
}

impl Checkpoint {
    pub fn new(
        feature_names: Vec<String>,
        scaler: ScalerStats,
        mlp_config: MlpConfig,
        deephit_config: DeepHitConfig,
        model: DeepHit,
    ) -> Self {
        Checkpoint {
            schema_version: CHECKPOINT_VERSION,
            feature_names,
            scaler,
            mlp_config,
            deephit_config,
            model,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Checkpoint> {
        let ckpt: Checkpoint = serde_json::from_str(text)?;
        if ckpt.schema_version != CHECKPOINT_VERSION {
            return Err(Error::Schema(format!(
                "checkpoint schema_version {} (expected {CHECKPOINT_VERSION})",
                ckpt.schema_version
            )));
        }
        let n = ckpt.feature_names.len();
        if ckpt.model.n_features() != n || ckpt.scaler.mean.len() != n {
            return Err(Error::Schema("checkpoint feature count is inconsistent".into()));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    /// Loads a checkpoint and checks its feature order against `expected`.
    pub fn load(path: impl AsRef<Path>, expected: Option<&[String]>) -> Result<Checkpoint> {
        let ckpt = Checkpoint::from_json(&fs::read_to_string(path)?)?;
        if let Some(expected) = expected {
            ckpt.check_features(expected)?;
        }
        Ok(ckpt)
    }

    pub fn check_features(&self, expected: &[String]) -> Result<()> {
        if self.feature_names != expected {
            return Err(Error::Schema(format!(
                "checkpoint feature order {:?} does not match data {:?}",
                self.feature_names, expected
            )));
        }
        Ok(())
    }

    /// Risk score of an unscaled feature vector.
    pub fn score_raw(&self, x: &[f64]) -> Result<f64> {
        self.model.score(&self.scaler.transform(x)?)
    }
}
