//! Strictly parsed TOML run configuration for `train-toy` and `gen-data`.
//!
//! Unknown keys are rejected so hyperparameter typos fail loudly. Every
//! defaulted value is echoed into the run manifest after resolution.

use serde::{Deserialize, Serialize};

use coco_core::summarize::SummarizerConfig;
use coco_core::trainer::{SyntheticDGConfig, TrainSchedule};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub hidden_dim: usize,
    pub feature_dim: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 32,
            feature_dim: 64,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// When set, overrides every block seed deterministically
    /// (data, model + 1, schedule + 2, summarizer + 3).
    pub seed: Option<u64>,
    pub data: SyntheticDGConfig,
    pub model: ModelConfig,
    pub schedule: TrainSchedule,
    pub summarizer: SummarizerConfig,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, coco_core::Error> {
        let mut cfg: RunConfig = toml::from_str(text)
            .map_err(|e| coco_core::Error::Format(format!("run config: {e}")))?;
        if let Some(seed) = cfg.seed {
            cfg.data.seed = seed;
            cfg.model.seed = seed.wrapping_add(1);
            cfg.schedule.seed = seed.wrapping_add(2);
            cfg.summarizer.seed = seed.wrapping_add(3);
        }
        cfg.data.validate()?;
        cfg.schedule.validate()?;
        cfg.summarizer.validate()?;
        Ok(cfg)
    }
}
