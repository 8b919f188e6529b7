use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use qasum::corpus::DEFAULT_MAX_INPUT_LEN;
use qasum::metrics::RougeOptions;
use qasum::model::ModelConfig;
use qasum::trainer::TrainConfig;

use crate::CliError;

/// Environment variable overriding the configured seed.
pub const SEED_ENV: &str = "QASUM_SEED";

/// A run configuration. Relative paths are resolved against the directory
/// of the configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub train: PathBuf,
    pub valid: PathBuf,
    #[serde(default)]
    pub test: Option<PathBuf>,
    /// Pre-trained vectors, one `token v1 .. vd` per line.
    #[serde(default)]
    pub embeddings: Option<PathBuf>,
    pub checkpoint_dir: PathBuf,
    #[serde(default)]
    pub report: Option<PathBuf>,
    #[serde(default = "default_vocab_cap")]
    pub vocab_cap: usize,
    #[serde(default = "default_max_input_len")]
    pub max_input_len: usize,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub training: TrainConfig,
    #[serde(default)]
    pub rouge: RougeOptions,
}

fn default_vocab_cap() -> usize {
    150_000
}

fn default_max_input_len() -> usize {
    DEFAULT_MAX_INPUT_LEN
}

impl RunConfig {
    /// Reads, parses and validates a configuration file.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.train);
        resolve(&mut cfg.valid);
        resolve(&mut cfg.checkpoint_dir);
        for p in [&mut cfg.test, &mut cfg.embeddings, &mut cfg.report].into_iter().flatten() {
            resolve(p);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.model.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        self.training.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        if self.vocab_cap == 0 || self.max_input_len == 0 {
            return Err(CliError::Usage("vocab_cap and max_input_len must be positive".into()));
        }
        Ok(())
    }

    /// Applies the seed override: flag, then environment, then the file.
    pub fn apply_seed(&mut self, flag: Option<u64>) -> Result<(), CliError> {
        if let Some(seed) = resolve_seed(flag, std::env::var(SEED_ENV).ok().as_deref())? {
            self.training.seed = seed;
        }
        Ok(())
    }

    pub fn pretrained_path(&self) -> PathBuf {
        self.checkpoint_dir.join("pretrained.json")
    }

    pub fn best_path(&self) -> PathBuf {
        self.checkpoint_dir.join("best.json")
    }
}

/// The seed that overrides the configuration, if any.
pub fn resolve_seed(flag: Option<u64>, env: Option<&str>) -> Result<Option<u64>, CliError> {
    if flag.is_some() {
        return Ok(flag);
    }
    match env {
        Some(v) if !v.trim().is_empty() => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Usage(format!("{SEED_ENV}={v} is not an unsigned integer"))),
        _ => Ok(None),
    }
}
