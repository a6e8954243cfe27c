//! Autoregressive policy over coordinate sequences.
//!
//! Tokens are coordinates: each is embedded by looking up its row and column
//! values in two learned tables, rotating each half by the *value* (not the
//! sequence position), and concatenating. A stack of shared decoder layers
//! feeds two heads: a row head (one more decoder layer plus a projection) and
//! a column head that re-reads both the shared trunk and the row trunk
//! through a normed junction before two further decoder layers. The factored
//! output (row distribution, column distribution) matches the two-step
//! structure of the legality mask.
//!
//! Everything is generic over the scalar type: `f32` for speed, `f64` when
//! gradients are checked against finite differences.

pub mod attention;
pub mod checkpoint;
pub mod config;
pub mod forward;
pub mod math;
pub mod params;
pub mod rollout;
pub mod scalar;

pub use attention::{dump_attention, AttentionDump, LayerSelector, StackSel};
pub use checkpoint::{load_checkpoint, params_checksum, save_checkpoint, CheckpointHeader};
pub use config::{ModelConfig, ModelError};
pub use forward::{CacheMode, ForwardPass, PackedBatch, PolicyModel};
pub use params::Params;
pub use rollout::{rollout_masked, unmasked_legal_rate, LegalRateReport, RolloutConfig, RolloutError};
pub use scalar::Real;
