//! Boolean region masks and their `SFRM0001` container.
//!
//! Layout: the 8-byte magic, a little-endian `u32` header length, a JSON
//! header `{name, dims: [H, W], grid?}`, then `H` rows of `ceil(W / 8)` bytes
//! with cells packed most-significant bit first.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridSpec;

pub const REGION_MAGIC: &[u8; 8] = b"SFRM0001";

#[derive(Clone, Debug, PartialEq)]
pub struct RegionMask {
    pub name: String,
    pub grid: GridSpec,
    /// Row-major `[H, W]`.
    pub mask: Vec<bool>,
}

#[derive(Serialize, Deserialize)]
struct RegionHeader {
    name: String,
    dims: [usize; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    grid: Option<GridSpec>,
}

impl RegionMask {
    pub fn new(name: impl Into<String>, grid: GridSpec, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != grid.cells() {
            return Err(Error::Shape(format!(
                "region mask has {} cells, grid has {}",
                mask.len(),
                grid.cells()
            )));
        }
        Ok(Self {
            name: name.into(),
            grid,
            mask,
        })
    }

    /// Cells whose centres fall inside a lat-lon rectangle. Longitudes may
    /// wrap: `lon_min > lon_max` selects the band across the antimeridian.
    pub fn rectangle(
        name: impl Into<String>,
        grid: GridSpec,
        lat: (f64, f64),
        lon: (f64, f64),
    ) -> Self {
        let mask = (0..grid.cells())
            .map(|c| {
                let (la, lo) = grid.cell_latlon(c);
                let in_lon = if lon.0 <= lon.1 {
                    lo >= lon.0 && lo <= lon.1
                } else {
                    lo >= lon.0 || lo <= lon.1
                };
                la >= lat.0 && la <= lat.1 && in_lon
            })
            .collect();
        Self {
            name: name.into(),
            grid,
            mask,
        }
    }

    /// A mask covering every cell.
    pub fn full(name: impl Into<String>, grid: GridSpec) -> Self {
        Self {
            name: name.into(),
            grid,
            mask: vec![true; grid.cells()],
        }
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    /// Whether the point lies in the footprint of a selected cell.
    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        self.grid.cell_at(lat, lon).is_some_and(|c| self.mask[c])
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let header = serde_json::to_vec(&RegionHeader {
            name: self.name.clone(),
            dims: [self.grid.height, self.grid.width],
            grid: Some(self.grid),
        })?;
        w.write_all(REGION_MAGIC)?;
        w.write_all(&(header.len() as u32).to_le_bytes())?;
        w.write_all(&header)?;
        let row_bytes = self.grid.width.div_ceil(8);
        let mut buf = vec![0u8; row_bytes * self.grid.height];
        for (i, &m) in self.mask.iter().enumerate() {
            if m {
                let (r, c) = (i / self.grid.width, i % self.grid.width);
                buf[r * row_bytes + c / 8] |= 0x80 >> (c % 8);
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }

    /// Reads a mask; files without an embedded grid get a global grid of
    /// the declared dims.
    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)
            .map_err(|e| Error::Format(format!("region file too short: {e}")))?;
        if &magic != REGION_MAGIC {
            return Err(Error::Format("not an SFRM0001 region file".into()));
        }
        let mut len = [0u8; 4];
        r.read_exact(&mut len)?;
        let mut header = vec![0u8; u32::from_le_bytes(len) as usize];
        r.read_exact(&mut header)
            .map_err(|e| Error::Format(format!("truncated region header: {e}")))?;
        let header: RegionHeader = serde_json::from_slice(&header)?;
        let [h, w] = header.dims;
        let grid = header.grid.unwrap_or_else(|| GridSpec::global(h, w));
        if grid.height != h || grid.width != w {
            return Err(Error::Format(format!(
                "region dims {h}x{w} disagree with its grid {}x{}",
                grid.height, grid.width
            )));
        }
        let row_bytes = w.div_ceil(8);
        let mut buf = vec![0u8; row_bytes * h];
        r.read_exact(&mut buf)
            .map_err(|e| Error::Format(format!("truncated region payload: {e}")))?;
        let mask = (0..h * w)
            .map(|i| {
                let (row, c) = (i / w, i % w);
                buf[row * row_bytes + c / 8] & (0x80 >> (c % 8)) != 0
            })
            .collect();
        Ok(Self {
            name: header.name,
            grid,
            mask,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}
