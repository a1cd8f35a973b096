//! Checkpoints: a JSON manifest next to a raw little-endian `f32` payload.
//!
//! `save_checkpoint("dir/best.json", ..)` writes `dir/best.json` and
//! `dir/best.bin`. The manifest lists every parameter in registration order
//! with its shape and offset into the payload.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::firecastnet::{FireCastNet, FireCastNetConfig};
use super::params::{ParamSpec, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_FORMAT: &str = "firecast-checkpoint/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    #[serde(flatten)]
    pub spec: ParamSpec,
    /// Offset into the payload, in `f32` elements.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub model: FireCastNetConfig,
    pub seed: Option<u64>,
    /// Zero-based epoch the parameters were taken after, if trained.
    pub epoch: Option<usize>,
    /// Payload file name, relative to the manifest.
    pub payload: String,
    pub payload_len: usize,
    pub params: Vec<ParamEntry>,
    /// Free-form provenance: validation score, run configuration, mesh path.
    #[serde(default)]
    pub meta: serde_json::Value,
}

fn payload_path(manifest_path: &Path) -> PathBuf {
    manifest_path.with_extension("bin")
}

/// Writes the manifest and payload; returns the manifest written.
pub fn save_checkpoint(
    path: &Path,
    config: &FireCastNetConfig,
    store: &ParamStore<f32>,
    epoch: Option<usize>,
    meta: serde_json::Value,
) -> Result<CheckpointManifest> {
    FireCastNet::for_store(config, store)?;
    let bin = payload_path(path);
    let payload_name = bin
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::InvalidArgument(format!("bad checkpoint path {}", path.display())))?
        .to_string();
    let mut offset = 0;
    let params = store
        .specs()
        .iter()
        .map(|spec| {
            let entry = ParamEntry {
                spec: spec.clone(),
                offset,
            };
            offset += spec.shape.iter().product::<usize>();
            entry
        })
        .collect();
    let manifest = CheckpointManifest {
        format: CHECKPOINT_FORMAT.to_string(),
        model: config.clone(),
        seed: store.seed,
        epoch,
        payload: payload_name,
        payload_len: offset,
        params,
        meta,
    };
    fs::write(&bin, store.to_le_bytes())?;
    let mut json = serde_json::to_vec_pretty(&manifest)?;
    json.push(b'\n');
    fs::write(path, json)?;
    Ok(manifest)
}

/// Reads a checkpoint, checking the manifest against the model registry.
pub fn load_checkpoint(path: &Path) -> Result<(CheckpointManifest, FireCastNet, ParamStore<f32>)> {
    let manifest: CheckpointManifest = serde_json::from_slice(&fs::read(path)?)?;
    if manifest.format != CHECKPOINT_FORMAT {
        return Err(Error::Format(format!(
            "{}: unsupported checkpoint format '{}'",
            path.display(),
            manifest.format
        )));
    }
    let mut store = ParamStore::<f32>::new();
    let net = FireCastNet::register(&manifest.model, &mut store)?;
    let listed: Vec<&ParamSpec> = manifest.params.iter().map(|p| &p.spec).collect();
    if listed.len() != store.len() || listed.iter().zip(store.specs()).any(|(a, b)| *a != b) {
        return Err(Error::Schema(format!(
            "{}: parameter registry does not match the model configuration",
            path.display()
        )));
    }
    let bin = path.with_file_name(&manifest.payload);
    let bytes = fs::read(&bin)?;
    if bytes.len() != manifest.payload_len * 4 {
        return Err(Error::Format(format!(
            "{}: expected {} bytes, found {}",
            bin.display(),
            manifest.payload_len * 4,
            bytes.len()
        )));
    }
    let values: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    for (i, entry) in manifest.params.iter().enumerate() {
        let n: usize = entry.spec.shape.iter().product();
        let slice = values
            .get(entry.offset..entry.offset + n)
            .ok_or_else(|| Error::Format(format!("parameter '{}' out of payload range", entry.spec.name)))?;
        store.set(
            super::params::ParamId(i),
            Tensor::new(entry.spec.shape.clone(), slice.to_vec())?,
        )?;
    }
    store.seed = manifest.seed;
    Ok((manifest, net, store))
}
