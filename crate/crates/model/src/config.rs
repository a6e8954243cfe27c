//! Architecture hyperparameters.

use prefixforge_core::{MAX_WIDTH, MIN_WIDTH};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("bad model configuration: {0}")]
    BadConfig(String),
    #[error("tensor {name} has shape {got:?}, expected {want:?}")]
    ShapeMismatch {
        name: String,
        got: Vec<usize>,
        want: Vec<usize>,
    },
    #[error("layer selector out of range: {0}")]
    LayerRange(String),
    #[error("checkpoint i/o failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad checkpoint: {0}")]
    Format(String),
}

/// Shape of the policy network. `axis_dim` is the per-axis embedding size, so
/// tokens and all decoder layers run at `2 * axis_dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Largest adder width the model can express; also the vocabulary of each
    /// output head.
    pub max_width: usize,
    /// Embedding size per coordinate axis.
    pub axis_dim: usize,
    /// Decoder layers shared by both heads.
    #[serde(default = "default_shared_layers")]
    pub shared_layers: usize,
    /// Extra decoder layers on the row path.
    #[serde(default = "default_row_layers")]
    pub row_layers: usize,
    /// Decoder layers after the junction on the column path.
    #[serde(default = "default_col_layers")]
    pub col_layers: usize,
    /// Attention heads per layer.
    #[serde(default = "default_heads")]
    pub heads: usize,
    /// Feed-forward width as a multiple of the model dimension.
    #[serde(default = "default_ffn_mult")]
    pub ffn_mult: usize,
    /// Rotary base for the coordinate-value rotation.
    #[serde(default = "default_rope_base")]
    pub rope_base: f64,
    /// Disable to ablate the rotary encoding (embeddings only).
    #[serde(default = "default_rope")]
    pub rope: bool,
}

fn default_shared_layers() -> usize {
    4
}
fn default_row_layers() -> usize {
    1
}
fn default_col_layers() -> usize {
    2
}
fn default_heads() -> usize {
    4
}
fn default_ffn_mult() -> usize {
    4
}
fn default_rope_base() -> f64 {
    10_000.0
}
fn default_rope() -> bool {
    true
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::new(16, 64)
    }
}

impl ModelConfig {
    /// Desk-sized default stack (4 shared + 1 row + 2 column layers, 4 heads)
    /// at the given width and embedding size.
    pub fn new(max_width: usize, axis_dim: usize) -> Self {
        Self {
            max_width,
            axis_dim,
            shared_layers: default_shared_layers(),
            row_layers: default_row_layers(),
            col_layers: default_col_layers(),
            heads: default_heads(),
            ffn_mult: default_ffn_mult(),
            rope_base: default_rope_base(),
            rope: default_rope(),
        }
    }

    /// Width of every token and decoder layer.
    pub fn model_dim(&self) -> usize {
        2 * self.axis_dim
    }

    /// Feed-forward hidden width.
    pub fn ffn_dim(&self) -> usize {
        self.ffn_mult * self.model_dim()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::BadConfig(msg));
        if !(MIN_WIDTH..=MAX_WIDTH).contains(&self.max_width) {
            return bad(format!(
                "max_width {} outside {MIN_WIDTH}..={MAX_WIDTH}",
                self.max_width
            ));
        }
        if self.axis_dim < 2 || self.axis_dim % 2 != 0 {
            return bad(format!("axis_dim {} must be even and >= 2", self.axis_dim));
        }
        if self.heads == 0 || self.model_dim() % self.heads != 0 {
            return bad(format!(
                "heads {} must divide model dim {}",
                self.heads,
                self.model_dim()
            ));
        }
        if self.shared_layers == 0 {
            return bad("shared_layers must be at least 1".into());
        }
        if self.col_layers == 0 {
            return bad("col_layers must be at least 1".into());
        }
        if self.ffn_mult == 0 {
            return bad("ffn_mult must be at least 1".into());
        }
        if !(self.rope_base.is_finite() && self.rope_base > 1.0) {
            return bad(format!("rope_base {} must be finite and > 1", self.rope_base));
        }
        Ok(())
    }
}
