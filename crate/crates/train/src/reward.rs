//! Design scoring: the area-delay reward in proxy or synthesis-backed form.

use prefixforge_core::{
    sequence_to_graph, synthesize_external, CoordinateSequence, SequenceError, SynthHook,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RewardError {
    #[error("design is not a valid prefix graph: {0}")]
    InvalidDesign(#[from] SequenceError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardMode {
    /// `-size * depth` straight from the graph metrics.
    Proxy,
    /// `-area * delay` from the external synthesis hook, falling back to
    /// proxy values (flagged on the record) when the hook fails.
    External,
}

impl std::str::FromStr for RewardMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "proxy" => Ok(RewardMode::Proxy),
            "external" => Ok(RewardMode::External),
            other => Err(format!("unknown reward mode {other:?} (proxy|external)")),
        }
    }
}

/// How a record entered the design database.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Sampled,
    Retrieved,
    Seeded,
}

/// A scored design. `area`/`delay` are the graph metrics in proxy mode and
/// the synthesis tool's numbers in external mode; `reward` is always their
/// negated product.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DesignRecord {
    pub sequence: CoordinateSequence,
    pub size: usize,
    pub depth: usize,
    pub area: f64,
    pub delay: f64,
    pub reward: f64,
    pub iteration: usize,
    pub source: Source,
    /// Set when external scoring fell back to proxy values.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub proxy_fallback: bool,
}

impl DesignRecord {
    pub fn adp(&self) -> f64 {
        self.area * self.delay
    }
}

/// Scores one complete sequence. External mode needs a hook; a missing or
/// failing hook degrades to proxy scoring with `proxy_fallback` set, so a
/// long fine-tuning run survives a flaky tool.
pub fn score_design(
    seq: &CoordinateSequence,
    iteration: usize,
    source: Source,
    mode: RewardMode,
    hook: Option<&SynthHook>,
) -> Result<DesignRecord, RewardError> {
    let graph = sequence_to_graph(seq)?;
    let size = graph.size();
    let depth = graph.depth().expect("graph replayed from a valid sequence");
    let (area, delay, proxy_fallback) = match mode {
        RewardMode::Proxy => (size as f64, depth as f64, false),
        RewardMode::External => {
            let outcome = match hook {
                Some(hook) => synthesize_external(&graph, hook).map_err(|e| e.to_string()),
                None => Err("no synthesis hook configured".to_string()),
            };
            match outcome {
                Ok(result) => (result.area, result.delay, false),
                Err(reason) => {
                    log::warn!("external scoring fell back to proxy: {reason}");
                    (size as f64, depth as f64, true)
                }
            }
        }
    };
    Ok(DesignRecord {
        sequence: seq.clone(),
        size,
        depth,
        area,
        delay,
        reward: -(area * delay),
        iteration,
        source,
        proxy_fallback,
    })
}
