//! One TOML file drives every command: [model], [train], [synth], [prep].
//! Checked-in configs carry the canonical numeric defaults; flags only
//! toggle ablations or override the seed.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::TokenizeMode;
use crate::model::ModelConfig;
use crate::pipeline::PipelineError;
use crate::synth::SynthConfig;
use crate::training::TrainConfig;

/// Tokenization and filtering shared by prep and train's data loading.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrepConfig {
    pub mode: TokenizeMode,
    pub min_freq: u64,
    pub min_len: usize,
    pub max_len: usize,
    /// Window for top-k overlap and top-k rank correlation.
    pub top_k: usize,
}

impl Default for PrepConfig {
    fn default() -> Self {
        PrepConfig {
            mode: TokenizeMode::Char,
            min_freq: 1,
            min_len: 4,
            max_len: 32,
            top_k: 250,
        }
    }
}

impl PrepConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.min_len == 0 {
            return Err(PipelineError::Usage("prep.min_len must be at least 1".into()));
        }
        if self.max_len < self.min_len {
            return Err(PipelineError::Usage(format!(
                "prep.max_len ({}) must be >= prep.min_len ({})",
                self.max_len, self.min_len
            )));
        }
        if self.min_freq == 0 {
            return Err(PipelineError::Usage("prep.min_freq must be at least 1".into()));
        }
        if self.top_k < 3 {
            return Err(PipelineError::Usage("prep.top_k must be at least 3".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub synth: SynthConfig,
    pub prep: PrepConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Config {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        let cfg: RunConfig = toml::from_str(&text).map_err(|e| PipelineError::Config {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        Ok(cfg)
    }

    /// Everything except vocab_size, which train resolves from the data.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let mut model = self.model.clone();
        if model.vocab_size == 0 {
            model.vocab_size = crate::corpus::N_SPECIALS + 1;
        }
        model.validate().map_err(crate::model::ModelError::from)?;
        self.train.validate()?;
        self.synth.validate()?;
        self.prep.validate()?;
        Ok(())
    }
}
