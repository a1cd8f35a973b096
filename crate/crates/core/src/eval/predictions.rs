//! Prediction files: `pred_<date>.f32` holds a row-major little-endian
//! `f32` probability grid and `pred_<date>.json` its [`PredictionMeta`].
//! An optional `pred_<date>.pgm` is an 8-bit grayscale rendering.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridSpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionMeta {
    /// Target date, ISO-8601.
    pub time: String,
    pub horizon: usize,
    pub model_id: String,
    /// Date of the last input period.
    pub window_end: String,
    pub grid: GridSpec,
    #[serde(default)]
    pub run_config: serde_json::Value,
}

fn stem(time: &str) -> String {
    format!("pred_{time}")
}

/// Writes the grid and sidecar, plus a PGM map when `export_map`; returns
/// the grid path.
pub fn write_prediction(dir: &Path, meta: &PredictionMeta, probs: &[f32], export_map: bool) -> Result<PathBuf> {
    if probs.len() != meta.grid.cells() {
        return Err(Error::Shape(format!(
            "prediction has {} values for a {}x{} grid",
            probs.len(),
            meta.grid.height,
            meta.grid.width
        )));
    }
    fs::create_dir_all(dir)?;
    let base = dir.join(stem(&meta.time));
    let grid_path = base.with_extension("f32");
    let bytes: Vec<u8> = probs.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(&grid_path, bytes)?;
    let mut json = serde_json::to_vec_pretty(meta)?;
    json.push(b'\n');
    fs::write(base.with_extension("json"), json)?;
    if export_map {
        fs::write(base.with_extension("pgm"), pgm_bytes(&meta.grid, probs))?;
    }
    Ok(grid_path)
}

/// Binary (`P5`) portable graymap of values clamped to `[0, 1]`.
pub fn pgm_bytes(grid: &GridSpec, values: &[f32]) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", grid.width, grid.height).into_bytes();
    out.extend(values.iter().map(|&v| {
        let v = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
        (v * 255.0).round() as u8
    }));
    out
}

/// Reads every sidecar in `dir` with its grid, sorted by target time.
pub fn read_predictions(dir: &Path) -> Result<Vec<(PredictionMeta, Vec<f32>)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let is_sidecar = path.extension().is_some_and(|e| e == "json")
            && path
                .file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("pred_"));
        if !is_sidecar {
            continue;
        }
        let meta: PredictionMeta = serde_json::from_slice(&fs::read(&path)?)
            .map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
        let grid_path = path.with_extension("f32");
        let bytes = fs::read(&grid_path)?;
        if bytes.len() != meta.grid.cells() * 4 {
            return Err(Error::Format(format!(
                "{}: expected {} bytes, found {}",
                grid_path.display(),
                meta.grid.cells() * 4,
                bytes.len()
            )));
        }
        let values = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        out.push((meta, values));
    }
    if out.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no prediction sidecars in {}",
            dir.display()
        )));
    }
    out.sort_by(|a, b| a.0.time.cmp(&b.0.time));
    Ok(out)
}
