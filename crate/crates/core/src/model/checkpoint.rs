//! Checkpoint container.
//!
//! ```text
//! TCANCKPT\n
//! <header byte length, decimal>\n
//! <JSON header: version, config, config hash, training meta, parameter manifest>
//! <payload: every parameter as little-endian f64, in manifest order>
//! ```

use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{Tcan, TcanConfig, TcanParams};
use crate::tensor::Tensor;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8] = b"TCANCKPT\n";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint format error in {field}: {detail}")]
    Format { field: String, detail: String },
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint was written for config {file_hash}, requested config is {requested_hash}")]
    Incompatible { file_hash: String, requested_hash: String },
    #[error("checkpoint I/O: {0}")]
    Io(#[from] io::Error),
}

fn format_err(field: &str, detail: impl Into<String>) -> CheckpointError {
    CheckpointError::Format {
        field: field.to_string(),
        detail: detail.into(),
    }
}

/// Short stable digest of a model configuration.
pub fn config_hash(config: &TcanConfig) -> String {
    let json = serde_json::to_vec(config).expect("config serializes");
    let digest = Sha256::digest(&json);
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epoch: usize,
    pub seed: u64,
    pub final_lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TcanConfig,
    pub params: TcanParams,
    pub meta: TrainingMeta,
}

impl Checkpoint {
    pub fn into_model(self) -> super::Result<Tcan> {
        Tcan::from_params(self.config, self.params)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format_version: u32,
    config: TcanConfig,
    config_hash: String,
    meta: TrainingMeta,
    params: Vec<ManifestEntry>,
    payload_bytes: usize,
}

pub fn encode_checkpoint(model: &Tcan, meta: &TrainingMeta) -> Vec<u8> {
    let mut offset = 0;
    let params = model
        .params()
        .names()
        .iter()
        .zip(model.params().tensors())
        .map(|(name, t)| {
            let e = ManifestEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                offset,
                len: t.numel(),
            };
            offset += t.numel() * 8;
            e
        })
        .collect();
    let header = Header {
        format_version: CHECKPOINT_VERSION,
        config: model.config().clone(),
        config_hash: config_hash(model.config()),
        meta: *meta,
        params,
        payload_bytes: offset,
    };
    let json = serde_json::to_vec_pretty(&header).expect("header serializes");
    let mut out = Vec::with_capacity(MAGIC.len() + 16 + json.len() + offset);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(format!("{}\n", json.len()).as_bytes());
    out.extend_from_slice(&json);
    for t in model.params().tensors() {
        for v in t.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    let rest = bytes
        .strip_prefix(MAGIC)
        .ok_or_else(|| format_err("magic", "missing TCANCKPT signature"))?;
    let nl = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| format_err("header_length", "missing line terminator"))?;
    let header_len: usize = std::str::from_utf8(&rest[..nl])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| format_err("header_length", "not a decimal integer"))?;
    let rest = &rest[nl + 1..];
    if rest.len() < header_len {
        return Err(format_err(
            "header",
            format!("declares {header_len} bytes, only {} present", rest.len()),
        ));
    }
    let header_json = &rest[..header_len];
    let payload = &rest[header_len..];

    // Check the version before the full schema so future formats get a clear error.
    let probe: serde_json::Value =
        serde_json::from_slice(header_json).map_err(|e| format_err("header", e.to_string()))?;
    let version = probe
        .get("format_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| format_err("format_version", "missing"))? as u32;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::Version {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let header: Header =
        serde_json::from_value(probe).map_err(|e| format_err("header", e.to_string()))?;
    if config_hash(&header.config) != header.config_hash {
        return Err(format_err("config_hash", "does not match the embedded config"));
    }
    if payload.len() != header.payload_bytes {
        return Err(format_err(
            "payload_bytes",
            format!("header declares {}, file holds {}", header.payload_bytes, payload.len()),
        ));
    }

    let mut names = Vec::with_capacity(header.params.len());
    let mut tensors = Vec::with_capacity(header.params.len());
    let mut expected_offset = 0;
    for e in header.params {
        let field = format!("params.{}", e.name);
        if e.offset != expected_offset {
            return Err(format_err(&field, format!("offset {} expected {expected_offset}", e.offset)));
        }
        if e.shape.iter().product::<usize>() != e.len {
            return Err(format_err(&field, format!("shape {:?} does not hold {} values", e.shape, e.len)));
        }
        let end = e.offset + e.len * 8;
        if end > payload.len() {
            return Err(format_err(&field, "extends past the payload"));
        }
        let values: Vec<f64> = payload[e.offset..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let t = Tensor::new(e.shape, values).map_err(|err| format_err(&field, err.to_string()))?;
        tensors.push(t.with_grad());
        names.push(e.name);
        expected_offset = end;
    }
    if expected_offset != payload.len() {
        return Err(format_err("payload_bytes", "trailing bytes after the last parameter"));
    }
    let params = TcanParams::new(names, tensors);
    // Validate names and shapes against the config's layout.
    let model = Tcan::from_params(header.config.clone(), params)
        .map_err(|e| format_err("params", e.to_string()))?;
    Ok(Checkpoint {
        config: header.config,
        params: model.params,
        meta: header.meta,
    })
}

/// Writes atomically: the file appears only once fully written.
pub fn save_checkpoint(path: &Path, model: &Tcan, meta: &TrainingMeta) -> Result<(), CheckpointError> {
    let bytes = encode_checkpoint(model, meta);
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, &bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    decode_checkpoint(&fs::read(path)?)
}

/// Loads and rejects checkpoints written for a different configuration.
pub fn load_checkpoint_for(path: &Path, config: &TcanConfig) -> Result<Checkpoint, CheckpointError> {
    let ck = load_checkpoint(path)?;
    let (file_hash, requested_hash) = (config_hash(&ck.config), config_hash(config));
    if file_hash != requested_hash {
        return Err(CheckpointError::Incompatible { file_hash, requested_hash });
    }
    Ok(ck)
}
