//! Checkpoint files: one JSON header line, then a raw value blob.
//!
//! Values are always stored as little-endian f64 in the canonical flatten
//! order, so an f32 model round-trips losslessly and a checkpoint can be
//! reloaded at either precision. The header carries the configuration, a
//! tensor table, caller metadata, and an FNV-1a hash of the blob.

use crate::config::{ModelConfig, ModelError};
use crate::forward::PolicyModel;
use crate::params::Params;
use crate::scalar::Real;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const CHECKPOINT_FORMAT: &str = "prefixforge-model";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset of the tensor's first value in the blob.
    pub offset: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub version: u32,
    /// Precision of the model that wrote the file. Informational: the blob
    /// is f64 either way, and a checkpoint loads at any precision.
    pub dtype: String,
    pub config: ModelConfig,
    #[serde(default)]
    pub metadata: serde_json::Value,
    pub tensors: Vec<TensorInfo>,
    /// 64-bit FNV-1a hash of the blob, as 16 hex digits.
    pub checksum: String,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Hash of a model's serialized parameter values. Two models agree on this
/// exactly when a saved checkpoint of one would bit-match the other, which
/// is how a frozen reference model is pinned during fine-tuning.
pub fn params_checksum<F: Real>(params: &Params<F>) -> String {
    let mut blob = Vec::new();
    for (_, tensor) in params.flatten() {
        for &v in tensor.as_slice() {
            blob.extend_from_slice(&v.to_f64().to_le_bytes());
        }
    }
    format!("{:016x}", fnv1a(&blob))
}

pub fn save_checkpoint<F: Real>(
    path: impl AsRef<Path>,
    config: &ModelConfig,
    params: &Params<F>,
    metadata: serde_json::Value,
) -> Result<(), ModelError> {
    params.check_shapes(config)?;
    let flat = params.flatten();
    let mut tensors = Vec::with_capacity(flat.len());
    let mut blob: Vec<u8> = Vec::new();
    for (name, tensor) in &flat {
        tensors.push(TensorInfo {
            name: name.clone(),
            shape: tensor.shape(),
            offset: blob.len(),
        });
        for &v in tensor.as_slice() {
            blob.extend_from_slice(&v.to_f64().to_le_bytes());
        }
    }
    let header = CheckpointHeader {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        dtype: F::DTYPE.into(),
        config: config.clone(),
        metadata,
        tensors,
        checksum: format!("{:016x}", fnv1a(&blob)),
    };
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut out, &header)
        .map_err(|e| ModelError::Format(format!("header serialization failed: {e}")))?;
    out.write_all(b"\n")?;
    out.write_all(&blob)?;
    out.flush()?;
    Ok(())
}

pub fn load_checkpoint<F: Real>(
    path: impl AsRef<Path>,
) -> Result<(PolicyModel<F>, CheckpointHeader), ModelError> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut header_line = Vec::new();
    reader.read_until(b'\n', &mut header_line)?;
    if header_line.pop() != Some(b'\n') {
        return Err(ModelError::Format("missing header line".into()));
    }
    let header: CheckpointHeader = serde_json::from_slice(&header_line)
        .map_err(|e| ModelError::Format(format!("bad header: {e}")))?;
    if header.format != CHECKPOINT_FORMAT {
        return Err(ModelError::Format(format!(
            "format {:?} is not {CHECKPOINT_FORMAT:?}",
            header.format
        )));
    }
    if header.version != CHECKPOINT_VERSION {
        return Err(ModelError::Format(format!(
            "version {} is not supported (expected {CHECKPOINT_VERSION})",
            header.version
        )));
    }
    header.config.validate()?;

    let mut blob = Vec::new();
    reader.read_to_end(&mut blob)?;
    let checksum = format!("{:016x}", fnv1a(&blob));
    if checksum != header.checksum {
        return Err(ModelError::Format(format!(
            "checksum {checksum} does not match header {}",
            header.checksum
        )));
    }

    let mut params = Params::<F>::zeros(&header.config);
    let flat = params.flatten_mut();
    if flat.len() != header.tensors.len() {
        return Err(ModelError::Format(format!(
            "tensor table has {} entries, config implies {}",
            header.tensors.len(),
            flat.len()
        )));
    }
    let mut cursor = 0usize;
    for ((name, values), info) in flat.into_iter().zip(&header.tensors) {
        if info.name != name {
            return Err(ModelError::Format(format!(
                "tensor {:?} appears where {name:?} belongs",
                info.name
            )));
        }
        let elems: usize = info.shape.iter().product();
        if elems != values.len() || info.offset != cursor {
            return Err(ModelError::Format(format!(
                "tensor {name:?} shape or offset disagrees with the config layout"
            )));
        }
        let end = cursor + 8 * elems;
        if end > blob.len() {
            return Err(ModelError::Format("blob shorter than tensor table".into()));
        }
        for (v, chunk) in values.iter_mut().zip(blob[cursor..end].chunks_exact(8)) {
            let raw = f64::from_le_bytes(chunk.try_into().expect("chunk of 8"));
            *v = F::from_f64(raw);
        }
        cursor = end;
    }
    if cursor != blob.len() {
        return Err(ModelError::Format(format!(
            "blob has {} trailing bytes",
            blob.len() - cursor
        )));
    }
    let model = PolicyModel::from_parts(header.config.clone(), params)?;
    Ok((model, header))
}
