//! Attention inspection: extract post-softmax attention matrices for a
//! sequence, filtered by a stack/layer selector.

use crate::config::ModelError;
use crate::forward::{CacheMode, PackedBatch, PolicyModel};
use crate::scalar::Real;
use prefixforge_core::CoordinateSequence;
use serde::{Deserialize, Serialize};
use std::str::FromStr;

/// One of the three decoder stacks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StackSel {
    Shared,
    Row,
    Col,
}

impl StackSel {
    const ALL: [StackSel; 3] = [StackSel::Shared, StackSel::Row, StackSel::Col];

    fn name(self) -> &'static str {
        match self {
            StackSel::Shared => "shared",
            StackSel::Row => "row",
            StackSel::Col => "col",
        }
    }
}

impl FromStr for StackSel {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "shared" => Ok(StackSel::Shared),
            "row" => Ok(StackSel::Row),
            "col" => Ok(StackSel::Col),
            other => Err(ModelError::LayerRange(format!(
                "unknown stack {other:?} (expected shared, row, or col)"
            ))),
        }
    }
}

/// Which layers to dump. Parsed from a comma-separated list of items, each
/// `all`, a stack name (every layer of that stack), `stack:index`, or
/// `stack:*`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSelector {
    items: Vec<(StackSel, Option<usize>)>,
}

impl LayerSelector {
    pub fn all() -> Self {
        Self {
            items: StackSel::ALL.iter().map(|&s| (s, None)).collect(),
        }
    }

    pub fn matches(&self, stack: StackSel, layer: usize) -> bool {
        self.items
            .iter()
            .any(|&(s, l)| s == stack && l.map_or(true, |want| want == layer))
    }

    /// Largest layer index requested per stack, for range validation.
    fn check_range(&self, stack_len: impl Fn(StackSel) -> usize) -> Result<(), ModelError> {
        for &(stack, layer) in &self.items {
            if let Some(l) = layer {
                let len = stack_len(stack);
                if l >= len {
                    return Err(ModelError::LayerRange(format!(
                        "{}:{l} (stack has {len} layers)",
                        stack.name()
                    )));
                }
            }
        }
        Ok(())
    }
}

impl FromStr for LayerSelector {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut items = Vec::new();
        for raw in s.split(',') {
            let item = raw.trim();
            if item == "all" {
                items.extend(StackSel::ALL.iter().map(|&s| (s, None)));
                continue;
            }
            let (stack, layer) = match item.split_once(':') {
                None => (item.parse::<StackSel>()?, None),
                Some((stack, "*")) => (stack.parse::<StackSel>()?, None),
                Some((stack, idx)) => {
                    let layer = idx.parse::<usize>().map_err(|_| {
                        ModelError::LayerRange(format!("bad layer index {idx:?} in {item:?}"))
                    })?;
                    (stack.parse::<StackSel>()?, Some(layer))
                }
            };
            items.push((stack, layer));
        }
        if items.is_empty() {
            return Err(ModelError::LayerRange("empty selector".into()));
        }
        Ok(Self { items })
    }
}

/// One head's post-softmax attention over the input sequence: a square
/// row-stochastic matrix with zeros above the diagonal.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttentionEntry {
    pub stack: StackSel,
    pub layer: usize,
    pub head: usize,
    pub probs: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttentionDump {
    pub width: usize,
    /// The input coordinates, index-aligned with matrix rows and columns.
    pub coords: Vec<(u8, u8)>,
    pub entries: Vec<AttentionEntry>,
}

/// Runs `seq` through the model and collects the selected attention maps.
pub fn dump_attention<F: Real>(
    model: &PolicyModel<F>,
    seq: &CoordinateSequence,
    selector: &LayerSelector,
) -> Result<AttentionDump, ModelError> {
    let cfg = model.config();
    selector.check_range(|stack| match stack {
        StackSel::Shared => cfg.shared_layers,
        StackSel::Row => cfg.row_layers,
        StackSel::Col => cfg.col_layers,
    })?;
    if seq.width() > cfg.max_width {
        return Err(ModelError::BadConfig(format!(
            "sequence width {} exceeds model maximum {}",
            seq.width(),
            cfg.max_width
        )));
    }

    let batch = PackedBatch::full([seq]);
    let pass = model.forward(&batch, CacheMode::Training);
    let cache = pass.cache.as_ref().expect("training mode keeps the cache");

    let mut entries = Vec::new();
    for (stack, caches) in [
        (StackSel::Shared, cache.shared_layers()),
        (StackSel::Row, cache.row_layers()),
        (StackSel::Col, cache.col_layers()),
    ] {
        for (layer, lc) in caches.iter().enumerate() {
            if !selector.matches(stack, layer) {
                continue;
            }
            // Single-sequence batch: probs are indexed by head alone.
            for (head, probs) in lc.attention().iter().enumerate() {
                entries.push(AttentionEntry {
                    stack,
                    layer,
                    head,
                    probs: probs
                        .rows()
                        .into_iter()
                        .map(|r| r.iter().map(|&v| v.to_f64()).collect())
                        .collect(),
                });
            }
        }
    }
    Ok(AttentionDump {
        width: seq.width(),
        coords: seq
            .coords()
            .iter()
            .map(|c| (c.row() as u8, c.col() as u8))
            .collect(),
        entries,
    })
}
