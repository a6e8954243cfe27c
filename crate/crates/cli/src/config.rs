//! Run configuration: one TOML file describing a whole pipeline, with every
//! section optional and command-line flags overriding individual values.

use anyhow::{Context, Result};
use prefixforge_model::ModelConfig;
use prefixforge_train::{GrpoConfig, ObjectiveForm, PretrainConfig, RewardMode};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Numeric precision the pipeline runs at. Checkpoints record the dtype
/// they were written with and load at either precision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

impl std::str::FromStr for Precision {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "f32" => Ok(Self::F32),
            "f64" => Ok(Self::F64),
            other => Err(format!("unknown precision {other:?}; use f32 or f64")),
        }
    }
}

/// Model shape. `max_width` defaults to the run width.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub max_width: Option<usize>,
    pub axis_dim: usize,
    pub shared_layers: usize,
    pub row_layers: usize,
    pub col_layers: usize,
    pub heads: usize,
    pub ffn_mult: usize,
    pub rope_base: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            max_width: None,
            axis_dim: 32,
            shared_layers: 4,
            row_layers: 1,
            col_layers: 2,
            heads: 4,
            ffn_mult: 4,
            rope_base: 10_000.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainSection {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub holdout: usize,
    pub legal_samples: usize,
}

impl Default for PretrainSection {
    fn default() -> Self {
        Self {
            epochs: 5,
            lr: 1e-4,
            batch_size: 64,
            holdout: 1000,
            legal_samples: 1000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneSection {
    pub group_size: usize,
    pub iterations: usize,
    pub gamma: f64,
    pub beta: f64,
    pub temperature: f64,
    pub lr: f64,
    pub retrieval_ratio: f64,
    pub objective: ObjectiveForm,
    pub reward_mode: RewardMode,
    pub max_batch: usize,
}

impl Default for FinetuneSection {
    fn default() -> Self {
        Self {
            group_size: 64,
            iterations: 200,
            gamma: 0.99,
            beta: 0.001,
            temperature: 0.8,
            lr: 1e-4,
            retrieval_ratio: 0.10,
            objective: ObjectiveForm::Prob,
            reward_mode: RewardMode::Proxy,
            max_batch: 256,
        }
    }
}

/// Component toggles for ablation studies. Any subset is runnable.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateSection {
    /// Embed coordinates without the rotary value rotation.
    pub rope_off: bool,
    /// Fine-tune from a random initialization instead of a checkpoint.
    pub skip_pretrain: bool,
    /// Drop the KL anchor (beta = 0).
    pub kl_off: bool,
    /// Drop best-design retrieval (ratio = 0).
    pub retrieval_off: bool,
}

/// The full pipeline configuration. Defaults describe the desk-scale run:
/// 16-bit adders, a 64-wide model, 5 pre-training epochs, 200 GRPO
/// iterations of 64 samples under the proxy reward.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub width: usize,
    pub precision: Precision,
    pub seed: u64,
    pub model: ModelSection,
    pub pretrain: PretrainSection,
    pub finetune: FinetuneSection,
    pub ablate: AblateSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            width: 16,
            precision: Precision::F32,
            seed: 1,
            model: ModelSection::default(),
            pretrain: PretrainSection::default(),
            finetune: FinetuneSection::default(),
            ablate: AblateSection::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Model configuration with the rope ablation applied.
    pub fn model_config(&self) -> ModelConfig {
        let mut config = ModelConfig::new(
            self.model.max_width.unwrap_or(self.width()),
            self.model.axis_dim,
        );
        config.shared_layers = self.model.shared_layers;
        config.row_layers = self.model.row_layers;
        config.col_layers = self.model.col_layers;
        config.heads = self.model.heads;
        config.ffn_mult = self.model.ffn_mult;
        config.rope_base = self.model.rope_base;
        config.rope = !self.ablate.rope_off;
        config
    }

    pub fn pretrain_config(&self) -> PretrainConfig {
        let mut config = PretrainConfig::new(self.seed());
        config.epochs = self.pretrain.epochs;
        config.lr = self.pretrain.lr;
        config.batch_size = self.pretrain.batch_size;
        config.holdout = self.pretrain.holdout;
        config.legal_samples = self.pretrain.legal_samples;
        config
    }

    /// GRPO configuration with the kl/retrieval ablations applied.
    pub fn grpo_config(&self) -> GrpoConfig {
        let mut config = GrpoConfig::new(self.width(), self.seed());
        config.group_size = self.finetune.group_size;
        config.iterations = self.finetune.iterations;
        config.gamma = self.finetune.gamma;
        config.beta = if self.ablate.kl_off { 0.0 } else { self.finetune.beta };
        config.temperature = self.finetune.temperature;
        config.lr = self.finetune.lr;
        config.retrieval_ratio = if self.ablate.retrieval_off {
            0.0
        } else {
            self.finetune.retrieval_ratio
        };
        config.objective = self.finetune.objective;
        config.reward_mode = self.finetune.reward_mode;
        config.max_batch = self.finetune.max_batch;
        config
    }
}
