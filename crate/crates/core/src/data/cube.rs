//! The `SFDC0001` datacube container.
//!
//! Layout: the 8-byte magic, a little-endian `u32` header length, a JSON
//! [`CubeHeader`], then one contiguous little-endian `f32` payload per
//! variable in header order: `[T, H, W]` row-major, or `[H, W]` for static
//! variables. Missing values are stored as NaN.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridSpec;

pub const CUBE_MAGIC: &[u8; 8] = b"SFDC0001";

/// Dynamic input variables in channel order.
pub const DYNAMIC_VARIABLES: [&str; 10] = [
    "mslp", "tp", "vpd", "sst", "t2m_mean", "ssrd", "swvl1", "lst_day", "ndvi", "pop_dens",
];
/// The static land-sea mask, the last input variable.
pub const LAND_SEA_MASK: &str = "lsm";
/// Burned area in hectares, the prediction target.
pub const TARGET_VARIABLE: &str = "gwis_ba";
/// Positional channels appended after the 11 input variables.
pub const POSITIONAL_CHANNELS: [&str; 3] = ["cos_lat", "sin_lon", "cos_lon"];

/// The 11 input variables in channel order.
pub fn input_variables() -> Vec<&'static str> {
    let mut v = DYNAMIC_VARIABLES.to_vec();
    v.push(LAND_SEA_MASK);
    v
}

/// Every variable a cube must hold.
pub fn required_variables() -> Vec<&'static str> {
    let mut v = input_variables();
    v.push(TARGET_VARIABLE);
    v
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariableInfo {
    pub name: String,
    #[serde(rename = "static")]
    pub is_static: bool,
    /// Training-split statistics, once computed.
    pub mean: Option<f64>,
    pub std: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CubeHeader {
    /// `[T, H, W]`.
    pub dims: [usize; 3],
    pub grid: GridSpec,
    /// ISO-8601 dates of each 8-day period.
    pub times: Vec<String>,
    pub variables: Vec<VariableInfo>,
    pub endianness: String,
    pub dtype: String,
    /// Provenance, such as the generating configuration.
    #[serde(default)]
    pub meta: serde_json::Value,
}

/// An in-memory datacube.
#[derive(Clone, Debug, PartialEq)]
pub struct Datacube {
    pub grid: GridSpec,
    pub times: Vec<NaiveDate>,
    pub variables: Vec<VariableInfo>,
    /// One buffer per variable, in `variables` order.
    pub values: Vec<Vec<f32>>,
    pub meta: serde_json::Value,
}

impl Datacube {
    pub fn time_len(&self) -> usize {
        self.times.len()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v.name == name)
    }

    /// Values of a variable; errors when absent.
    pub fn var(&self, name: &str) -> Result<&[f32]> {
        self.index_of(name)
            .map(|i| self.values[i].as_slice())
            .ok_or_else(|| Error::Schema(format!("variable '{name}' is missing")))
    }

    /// One time slice `[H, W]` of a dynamic variable, or the static field.
    pub fn slice(&self, name: &str, t: usize) -> Result<&[f32]> {
        let i = self
            .index_of(name)
            .ok_or_else(|| Error::Schema(format!("variable '{name}' is missing")))?;
        let cells = self.grid.cells();
        if self.variables[i].is_static {
            Ok(&self.values[i])
        } else if t < self.times.len() {
            Ok(&self.values[i][t * cells..(t + 1) * cells])
        } else {
            Err(Error::IndexOutOfRange {
                index: t,
                size: self.times.len(),
            })
        }
    }

    /// Land cells: `lsm > 0.5`.
    pub fn land_mask(&self) -> Result<Vec<bool>> {
        Ok(self.var(LAND_SEA_MASK)?.iter().map(|&v| v > 0.5).collect())
    }

    /// Checks the variable schema, payload sizes and target sign.
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        let mut seen = HashSet::new();
        for v in &self.variables {
            if !seen.insert(v.name.as_str()) {
                return Err(Error::Schema(format!("variable '{}' appears twice", v.name)));
            }
            if !required_variables().contains(&v.name.as_str()) {
                return Err(Error::Schema(format!("unknown variable '{}'", v.name)));
            }
        }
        for name in required_variables() {
            if !seen.contains(name) {
                return Err(Error::Schema(format!("required variable '{name}' is missing")));
            }
        }
        for (name, want) in [(LAND_SEA_MASK, true), (TARGET_VARIABLE, false)] {
            let info = &self.variables[self.index_of(name).expect("checked above")];
            if info.is_static != want {
                return Err(Error::Schema(format!(
                    "variable '{name}' must be {}",
                    if want { "static" } else { "dynamic" }
                )));
            }
        }
        if self.values.len() != self.variables.len() {
            return Err(Error::Schema("one payload per variable is required".into()));
        }
        let cells = self.grid.cells();
        for (info, vals) in self.variables.iter().zip(&self.values) {
            let want = if info.is_static { cells } else { cells * self.times.len() };
            if vals.len() != want {
                return Err(Error::Shape(format!(
                    "variable '{}' holds {} values, expected {want}",
                    info.name,
                    vals.len()
                )));
            }
        }
        if let Some(v) = self.var(TARGET_VARIABLE)?.iter().find(|v| **v < 0.0 || v.is_nan()) {
            return Err(Error::Schema(format!(
                "target '{TARGET_VARIABLE}' must be non-negative, found {v}"
            )));
        }
        if self.times.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Schema("times must be strictly increasing".into()));
        }
        Ok(())
    }

    pub fn header(&self) -> CubeHeader {
        CubeHeader {
            dims: [self.times.len(), self.grid.height, self.grid.width],
            grid: self.grid,
            times: self.times.iter().map(|d| d.format("%Y-%m-%d").to_string()).collect(),
            variables: self.variables.clone(),
            endianness: "LE".into(),
            dtype: "f32".into(),
            meta: self.meta.clone(),
        }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        self.validate()?;
        let header = serde_json::to_vec(&self.header())?;
        w.write_all(CUBE_MAGIC)?;
        w.write_all(&(header.len() as u32).to_le_bytes())?;
        w.write_all(&header)?;
        for vals in &self.values {
            let mut buf = Vec::with_capacity(vals.len() * 4);
            for v in vals {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let header = read_header(&mut r)?;
        let [t, h, w] = header.dims;
        if header.grid.height != h || header.grid.width != w || header.times.len() != t {
            return Err(Error::Format("header dims disagree with grid or times".into()));
        }
        let times = header
            .times
            .iter()
            .map(|s| {
                NaiveDate::parse_from_str(s, "%Y-%m-%d")
                    .map_err(|e| Error::Format(format!("bad time '{s}': {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut values = Vec::with_capacity(header.variables.len());
        for info in &header.variables {
            let n = if info.is_static { h * w } else { t * h * w };
            let mut buf = vec![0u8; n * 4];
            r.read_exact(&mut buf).map_err(|e| {
                Error::Format(format!("payload of '{}' is truncated: {e}", info.name))
            })?;
            values.push(
                buf.chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect(),
            );
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::Format("trailing bytes after the last payload".into()));
        }
        let cube = Self {
            grid: header.grid,
            times,
            variables: header.variables,
            values,
            meta: header.meta,
        };
        cube.validate()?;
        Ok(cube)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

fn read_header<R: Read>(r: &mut R) -> Result<CubeHeader> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Format("file too short for a cube header".into()))?;
    if &magic != CUBE_MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected SFDC0001",
            String::from_utf8_lossy(&magic)
        )));
    }
    let mut len = [0u8; 4];
    r.read_exact(&mut len)
        .map_err(|_| Error::Format("truncated header length".into()))?;
    let mut json = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut json)
        .map_err(|_| Error::Format("truncated JSON header".into()))?;
    let header: CubeHeader = serde_json::from_slice(&json)?;
    if header.endianness != "LE" || header.dtype != "f32" {
        return Err(Error::Format(format!(
            "unsupported payload {} {}",
            header.endianness, header.dtype
        )));
    }
    Ok(header)
}

/// Reads only the JSON header of a cube file.
pub fn read_cube_header(path: &Path) -> Result<CubeHeader> {
    read_header(&mut BufReader::new(File::open(path)?))
}
