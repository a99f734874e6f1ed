//! Checkpoints are a JSON manifest `<name>.json` next to a raw payload
//! `<name>.params` of little-endian f64 values.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{FederationConfig, RoundRecord, UimConfig};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ParameterVector};

pub const CHECKPOINT_FORMAT: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub format: u32,
    pub model: ModelConfig,
    pub federation: FederationConfig,
    pub uim: Option<UimConfig>,
    /// Rounds completed.
    pub round: usize,
    pub seed: u64,
    pub param_count: usize,
    pub crc32: u32,
    pub trace: Vec<RoundRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub federation: FederationConfig,
    pub uim: Option<UimConfig>,
    pub round: usize,
    pub seed: u64,
    pub params: ParameterVector,
    pub trace: Vec<RoundRecord>,
}

fn paths(dir: &Path, name: &str) -> (PathBuf, PathBuf) {
    (dir.join(format!("{name}.json")), dir.join(format!("{name}.params")))
}

fn encode_params(params: &ParameterVector) -> Vec<u8> {
    params.0.iter().flat_map(|v| v.to_le_bytes()).collect()
}

/// Writes both files and returns the manifest path.
pub fn save_checkpoint(dir: &Path, name: &str, ckpt: &Checkpoint) -> Result<PathBuf> {
    if ckpt.params.len() != ckpt.model.param_count() {
        return Err(Error::ShapeMismatch {
            expected: ckpt.model.param_count(),
            actual: ckpt.params.len(),
        });
    }
    let payload = encode_params(&ckpt.params);
    let manifest = CheckpointManifest {
        format: CHECKPOINT_FORMAT,
        model: ckpt.model,
        federation: ckpt.federation.clone(),
        uim: ckpt.uim.clone(),
        round: ckpt.round,
        seed: ckpt.seed,
        param_count: ckpt.params.len(),
        crc32: crc32fast::hash(&payload),
        trace: ckpt.trace.clone(),
    };
    let (json_path, params_path) = paths(dir, name);
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    fs::write(&params_path, &payload).map_err(|e| Error::io(&params_path, e))?;
    let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::MalformedFile(e.to_string()))?;
    text.push('\n');
    fs::write(&json_path, text).map_err(|e| Error::io(&json_path, e))?;
    Ok(json_path)
}

/// Loads a checkpoint given its manifest path, with or without the `.json`
/// extension. The payload is read from the sibling `.params` file.
pub fn load_checkpoint(manifest: &Path) -> Result<Checkpoint> {
    let json_path = if manifest.extension().is_some_and(|e| e == "json") {
        manifest.to_path_buf()
    } else {
        manifest.with_extension("json")
    };
    let params_path = json_path.with_extension("params");
    let text = fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
    let m: CheckpointManifest = serde_json::from_str(&text)
        .map_err(|e| Error::MalformedFile(format!("{}: {e}", json_path.display())))?;
    if m.format != CHECKPOINT_FORMAT {
        return Err(Error::MalformedFile(format!("unsupported checkpoint format {}", m.format)));
    }
    if m.param_count != m.model.param_count() {
        return Err(Error::ConfigMismatch(format!(
            "manifest declares {} parameters, model needs {}",
            m.param_count,
            m.model.param_count()
        )));
    }
    let payload = fs::read(&params_path).map_err(|e| Error::io(&params_path, e))?;
    if payload.len() != m.param_count * 8 {
        return Err(Error::MalformedFile(format!(
            "{}: expected {} bytes, found {}",
            params_path.display(),
            m.param_count * 8,
            payload.len()
        )));
    }
    let actual = crc32fast::hash(&payload);
    if actual != m.crc32 {
        return Err(Error::ChecksumMismatch {
            expected: m.crc32,
            actual,
        });
    }
    let params = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Ok(Checkpoint {
        model: m.model,
        federation: m.federation,
        uim: m.uim,
        round: m.round,
        seed: m.seed,
        params: ParameterVector(params),
        trace: m.trace,
    })
}
