use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Adam, EpochRecord, LrSchedule, TrainConfig, Trainer};
use crate::cloze::AnswerVocab;
use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};

pub const CHECKPOINT_FORMAT: &str = "qasum-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Hex SHA-256 of the JSON serialization of the model and training
/// configuration.
pub fn config_hash(model: &ModelConfig, train: &TrainConfig) -> String {
    let bytes = serde_json::to_vec(&(model, train)).expect("configs always serialize");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Everything needed to resume training or run inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config_hash: String,
    pub train_config: TrainConfig,
    pub model: Model,
    pub optimizer: Adam,
    pub schedule: LrSchedule,
    pub baseline: Option<f64>,
    pub step: u64,
    pub pretrain_step: u64,
    pub epoch: usize,
    pub history: Vec<EpochRecord>,
    pub vocab: Vocabulary,
    pub answers: AnswerVocab,
}

impl Checkpoint {
    pub fn from_trainer(trainer: &Trainer, vocab: &Vocabulary, answers: &AnswerVocab) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            config_hash: config_hash(&trainer.model.config, &trainer.config),
            train_config: trainer.config.clone(),
            model: trainer.model.clone(),
            optimizer: trainer.optimizer.clone(),
            schedule: trainer.schedule.clone(),
            baseline: trainer.baseline,
            step: trainer.step,
            pretrain_step: trainer.pretrain_step,
            epoch: trainer.epoch,
            history: trainer.history.clone(),
            vocab: vocab.clone(),
            answers: answers.clone(),
        }
    }

    pub fn into_trainer(self) -> Trainer {
        Trainer {
            config: self.train_config,
            model: self.model,
            optimizer: self.optimizer,
            schedule: self.schedule,
            baseline: self.baseline,
            step: self.step,
            pretrain_step: self.pretrain_step,
            epoch: self.epoch,
            history: self.history,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    /// Reads a checkpoint and checks its format, version and internal
    /// config hash.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Self = serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "{}: unsupported checkpoint {} v{}",
                path.display(),
                ck.format,
                ck.version
            )));
        }
        let found = config_hash(&ck.model.config, &ck.train_config);
        if found != ck.config_hash {
            return Err(Error::ConfigHash {
                expected: ck.config_hash,
                found,
            });
        }
        Ok(ck)
    }

    /// Loads and additionally requires the stored configuration to match
    /// the caller's.
    pub fn load_matching(path: &Path, model: &ModelConfig, train: &TrainConfig) -> Result<Self> {
        let ck = Self::load(path)?;
        let expected = config_hash(model, train);
        if ck.config_hash != expected {
            return Err(Error::ConfigHash {
                expected,
                found: ck.config_hash,
            });
        }
        Ok(ck)
    }
}
