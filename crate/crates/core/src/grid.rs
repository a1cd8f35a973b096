//! Regular latitude-longitude grids.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geomesh::{latlon_to_xyz, Vec3};

/// A regular lat-lon grid of cell centres, row-major with rows along latitude.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub height: usize,
    pub width: usize,
    pub lat_start: f64,
    pub lat_step: f64,
    pub lon_start: f64,
    pub lon_step: f64,
}

impl GridSpec {
    /// Global north-up grid: row 0 is the northernmost band and cell centres
    /// sit half a step inside the poles and the antimeridian.
    pub fn global(height: usize, width: usize) -> Self {
        let lat_step = -180.0 / height as f64;
        let lon_step = 360.0 / width as f64;
        Self {
            height,
            width,
            lat_start: 90.0 + lat_step / 2.0,
            lat_step,
            lon_start: -180.0 + lon_step / 2.0,
            lon_step,
        }
    }

    pub fn cells(&self) -> usize {
        self.height * self.width
    }

    pub fn validate(&self) -> Result<()> {
        if self.cells() == 0 {
            return Err(Error::InvalidArgument(format!(
                "degenerate grid {}x{}",
                self.height, self.width
            )));
        }
        if !(self.lat_step.is_finite() && self.lon_step.is_finite())
            || self.lat_step == 0.0
            || self.lon_step <= 0.0
        {
            return Err(Error::InvalidArgument(
                "grid steps must be finite, with nonzero latitude and positive longitude step".into(),
            ));
        }
        let last = self.lat(self.height - 1);
        if self.lat_start.abs() > 90.0 || last.abs() > 90.0 {
            return Err(Error::InvalidArgument("grid latitudes leave [-90, 90]".into()));
        }
        Ok(())
    }

    pub fn lat(&self, row: usize) -> f64 {
        self.lat_start + row as f64 * self.lat_step
    }

    /// Longitude of a column, wrapped into [-180, 180).
    pub fn lon(&self, col: usize) -> f64 {
        wrap_lon(self.lon_start + col as f64 * self.lon_step)
    }

    pub fn cell_latlon(&self, cell: usize) -> (f64, f64) {
        (self.lat(cell / self.width), self.lon(cell % self.width))
    }

    pub fn cell_xyz(&self, cell: usize) -> Vec3 {
        let (lat, lon) = self.cell_latlon(cell);
        latlon_to_xyz(lat, lon)
    }

    /// The cell whose footprint contains the point, if any.
    pub fn cell_at(&self, lat: f64, lon: f64) -> Option<usize> {
        let row = bin((lat - self.lat_start) / self.lat_step + 0.5, self.height)?;
        let mut dlon = (lon - self.lon_start + self.lon_step / 2.0).rem_euclid(360.0);
        if 360.0 - dlon < 1e-9 {
            dlon = 0.0;
        }
        let col = bin(dlon / self.lon_step, self.width)?;
        Some(row * self.width + col)
    }

    /// Grid with `factor`-times fewer cells per axis, keeping the footprint.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || self.height % factor != 0 || self.width % factor != 0 {
            return Err(Error::Shape(format!(
                "grid {}x{} is not divisible by {factor}",
                self.height, self.width
            )));
        }
        let f = factor as f64;
        Ok(Self {
            height: self.height / factor,
            width: self.width / factor,
            lat_start: self.lat_start + self.lat_step * (f - 1.0) / 2.0,
            lat_step: self.lat_step * f,
            lon_start: self.lon_start + self.lon_step * (f - 1.0) / 2.0,
            lon_step: self.lon_step * f,
        })
    }
}

/// Index of the unit bin holding `t`, accepting points on the outer edges.
fn bin(t: f64, n: usize) -> Option<usize> {
    const EDGE: f64 = 1e-9;
    if !t.is_finite() || t < -EDGE || t > n as f64 + EDGE {
        return None;
    }
    Some((t.max(0.0).floor() as usize).min(n - 1))
}

pub fn wrap_lon(lon: f64) -> f64 {
    (lon + 180.0).rem_euclid(360.0) - 180.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_scale_bounds() {
        let g = GridSpec::global(720, 1440);
        assert!((g.lat(0) - 89.875).abs() < 1e-12);
        assert!((g.lat(719) + 89.875).abs() < 1e-12);
        assert!((g.lon(0) + 179.875).abs() < 1e-12);
        assert!((g.lon(1439) - 179.875).abs() < 1e-12);
    }

    #[test]
    fn cell_lookup_round_trips() {
        let g = GridSpec::global(16, 32);
        for cell in 0..g.cells() {
            let (lat, lon) = g.cell_latlon(cell);
            assert_eq!(g.cell_at(lat, lon), Some(cell));
            assert_eq!(g.cell_at(lat + 0.3 * g.lat_step, lon - 0.4 * g.lon_step), Some(cell));
        }
        assert_eq!(g.cell_at(90.0, 180.0), Some(0));
    }

    #[test]
    fn coarsened_cells_are_block_centres() {
        let g = GridSpec::global(64, 128);
        let c = g.coarsen(4).unwrap();
        assert_eq!((c.height, c.width), (16, 32));
        let mean_lat = (0..4).map(|r| g.lat(r)).sum::<f64>() / 4.0;
        assert!((c.lat(0) - mean_lat).abs() < 1e-12);
        assert!(g.coarsen(3).is_err());
    }
}
