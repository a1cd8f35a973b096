//! Seeded synthetic datacubes.
//!
//! Each variable is a seasonal cycle with spatial structure plus
//! anomalies. Two latent anomaly fields drive fire: a persistent
//! vapour-pressure-deficit anomaly (AR(1), visible through `vpd`, `t2m_mean`
//! and `lst_day`) and a fuel load built from precipitation anomalies 8 to
//! 24 periods back (visible in full only through a long `tp` history, and
//! partly through `ndvi` and `swvl1`). Fire occurs where a score combining
//! the cell's seasonal propensity, both anomalies and independent noise
//! exceeds that period's land quantile for the configured prevalence, so
//! every period burns the same share of land.

use std::f64::consts::PI;

use chrono::{Days, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::cube::{required_variables, Datacube, VariableInfo, LAND_SEA_MASK};
use crate::error::{Error, Result};
use crate::geomesh::Vec3;
use crate::grid::GridSpec;

/// 8-day periods per synthetic year (a 368-day model year).
pub const PERIODS_PER_YEAR: usize = 46;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    /// Inclusive year range.
    pub years: (i32, i32),
    pub height: usize,
    pub width: usize,
    /// Fraction of land cells burning per period.
    pub prevalence: f64,
    /// Share of the sphere that is land.
    pub land_fraction: f64,
    /// Share of land cells with a strong seasonal fire regime.
    pub hotspot_fraction: f64,
    /// Lag-one autocorrelation of the vpd anomaly.
    pub vpd_persistence: f64,
    /// Weights of the fire score terms.
    pub season_weight: f64,
    pub vpd_weight: f64,
    pub fuel_weight: f64,
    pub noise_weight: f64,
}

impl SynthConfig {
    pub fn new(seed: u64, years: (i32, i32), height: usize, width: usize) -> Self {
        Self {
            seed,
            years,
            height,
            width,
            prevalence: 0.02,
            land_fraction: 0.35,
            hotspot_fraction: 0.05,
            vpd_persistence: 0.85,
            season_weight: 12.0,
            vpd_weight: 1.0,
            fuel_weight: 1.0,
            noise_weight: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.years.0 > self.years.1 {
            return Err(Error::Config(format!(
                "year range {}:{} is reversed",
                self.years.0, self.years.1
            )));
        }
        if self.height == 0 || self.width == 0 {
            return Err(Error::Config("grid dims must be positive".into()));
        }
        if !(0.0 < self.prevalence && self.prevalence < 0.5) {
            return Err(Error::Config("prevalence must lie in (0, 0.5)".into()));
        }
        if !(0.0 < self.land_fraction && self.land_fraction < 1.0) {
            return Err(Error::Config("land fraction must lie in (0, 1)".into()));
        }
        if !(0.0 < self.hotspot_fraction && self.hotspot_fraction <= 1.0) {
            return Err(Error::Config("hotspot fraction must lie in (0, 1]".into()));
        }
        if !(0.0..1.0).contains(&self.vpd_persistence) {
            return Err(Error::Config("vpd persistence must lie in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn time_len(&self) -> usize {
        (self.years.1 - self.years.0 + 1) as usize * PERIODS_PER_YEAR
    }
}

/// Date of period `k` of `year`: January 1 plus `8k` days.
pub fn period_date(year: i32, k: usize) -> NaiveDate {
    NaiveDate::from_ymd_opt(year, 1, 1).expect("valid year") + Days::new(8 * k as u64)
}

/// A smooth random field on the sphere: a sum of plane waves in 3D
/// restricted to the unit sphere, so it is continuous across the
/// antimeridian and the poles.
struct SmoothField {
    waves: Vec<(Vec3, f64, f64, f64)>,
}

impl SmoothField {
    fn new(rng: &mut ChaCha8Rng, waves: usize, max_freq: f64) -> Self {
        let norm = (2.0 / waves as f64).sqrt();
        let waves = (0..waves)
            .map(|_| {
                let v: Vec3 = [
                    rng.sample(StandardNormal),
                    rng.sample(StandardNormal),
                    rng.sample(StandardNormal),
                ];
                let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt().max(1e-12);
                let freq = rng.random_range(1.0..max_freq);
                let phase = rng.random_range(0.0..2.0 * PI);
                ([v[0] / n, v[1] / n, v[2] / n], freq, phase, norm)
            })
            .collect();
        Self { waves }
    }

    fn at(&self, p: Vec3) -> f64 {
        self.waves
            .iter()
            .map(|(d, f, ph, a)| a * (f * (d[0] * p[0] + d[1] * p[1] + d[2] * p[2]) + ph).cos())
            .sum()
    }

    fn sample(&self, points: &[Vec3]) -> Vec<f64> {
        points.iter().map(|&p| self.at(p)).collect()
    }
}

fn quantile(values: &mut [f64], q: f64) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let i = ((values.len() as f64 - 1.0) * q).round() as usize;
    values[i.min(values.len() - 1)]
}

/// Generates a cube; identical configs give identical bytes.
pub fn synth_cube(config: &SynthConfig) -> Result<Datacube> {
    config.validate()?;
    let grid = GridSpec::global(config.height, config.width);
    let cells = grid.cells();
    let t_len = config.time_len();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let points: Vec<Vec3> = (0..cells).map(|c| grid.cell_xyz(c)).collect();
    let lats: Vec<f64> = (0..cells).map(|c| grid.cell_latlon(c).0.to_radians()).collect();

    let land_score = SmoothField::new(&mut rng, 10, 3.5).sample(&points);
    let threshold = quantile(&mut land_score.clone(), 1.0 - config.land_fraction);
    let land: Vec<bool> = land_score.iter().map(|&v| v > threshold).collect();

    let prone_field = SmoothField::new(&mut rng, 8, 3.0).sample(&points);
    let mut land_prone: Vec<f64> = (0..cells).filter(|&c| land[c]).map(|c| prone_field[c]).collect();
    let hot = if land_prone.is_empty() {
        0.0
    } else {
        quantile(&mut land_prone, 1.0 - config.hotspot_fraction)
    };
    let prone: Vec<f64> = prone_field
        .iter()
        .zip(&lats)
        .map(|(&f, &lat)| lat.cos().sqrt() / (1.0 + (-10.0 * (f - hot)).exp()))
        .collect();
    let phase_shift = SmoothField::new(&mut rng, 6, 2.5).sample(&points);
    // Peak of the dry season as a fraction of the year.
    let peak: Vec<f64> = lats
        .iter()
        .zip(&phase_shift)
        .map(|(&lat, &s)| if lat >= 0.0 { 0.55 } else { 0.05 } + 0.06 * s)
        .collect();
    let pop_base = SmoothField::new(&mut rng, 8, 4.0).sample(&points);
    let mslp_base = SmoothField::new(&mut rng, 6, 2.5).sample(&points);

    let anomaly = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        let field = SmoothField::new(rng, 6, 4.0);
        points
            .iter()
            .map(|&p| field.at(p) + 0.3 * rng.sample::<f64, _>(StandardNormal))
            .map(|v| v / (1.0f64 + 0.09).sqrt())
            .collect()
    };

    let rho = config.vpd_persistence;
    let innov = (1.0 - rho * rho).sqrt();
    let mut vpd_anom: Vec<Vec<f64>> = Vec::with_capacity(t_len);
    let mut tp_anom: Vec<Vec<f64>> = Vec::with_capacity(t_len);
    let mut prev_v = anomaly(&mut rng);
    let mut prev_p = anomaly(&mut rng);
    for _ in 0..t_len {
        let nv = anomaly(&mut rng);
        let np = anomaly(&mut rng);
        let v: Vec<f64> = prev_v.iter().zip(&nv).map(|(a, b)| rho * a + innov * b).collect();
        let p: Vec<f64> = prev_p
            .iter()
            .zip(&np)
            .map(|(a, b)| 0.5 * a + 0.75f64.sqrt() * b)
            .collect();
        vpd_anom.push(v.clone());
        tp_anom.push(p.clone());
        prev_v = v;
        prev_p = p;
    }
    // Fuel: low precipitation 8..24 periods back means dry, abundant fuel.
    let fuel: Vec<Vec<f64>> = (0..t_len)
        .map(|t| {
            let lags: Vec<usize> = (8..24).filter(|&l| l <= t).map(|l| t - l).collect();
            // Sixteen AR(1) terms with coefficient 0.5 sum to variance 16 * 3.
            let scale = 1.0 / 48.0f64.sqrt();
            (0..cells)
                .map(|c| -lags.iter().map(|&s| tp_anom[s][c]).sum::<f64>() * scale)
                .collect()
        })
        .collect();

    let dry = |c: usize, t: usize| -> f64 {
        let frac = (t % PERIODS_PER_YEAR) as f64 / PERIODS_PER_YEAR as f64;
        (2.0 * PI * (frac - peak[c])).cos()
    };

    let mut score = vec![0.0f64; t_len * cells];
    for t in 0..t_len {
        for c in 0..cells {
            let season = (0.5 + 0.5 * dry(c, t)).powi(4) * prone[c];
            score[t * cells + c] = config.season_weight * season
                + config.vpd_weight * vpd_anom[t][c]
                + config.fuel_weight * fuel[t][c]
                + config.noise_weight * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let fire_threshold: Vec<f64> = (0..t_len)
        .map(|t| {
            let mut s: Vec<f64> = (0..cells)
                .filter(|&c| land[c])
                .map(|c| score[t * cells + c])
                .collect();
            quantile(&mut s, 1.0 - config.prevalence)
        })
        .collect();

    let mut values: Vec<Vec<f32>> = Vec::new();
    let mut infos = Vec::new();
    let nan = f32::NAN;
    for name in required_variables() {
        let is_static = name == LAND_SEA_MASK;
        let n = if is_static { cells } else { t_len * cells };
        let mut v = vec![0.0f32; n];
        if is_static {
            for (d, &l) in v.iter_mut().zip(&land) {
                *d = if l { 1.0 } else { 0.0 };
            }
        } else {
            for t in 0..t_len {
                let year_idx = (t / PERIODS_PER_YEAR) as f64;
                let frac = (t % PERIODS_PER_YEAR) as f64 / PERIODS_PER_YEAR as f64;
                for c in 0..cells {
                    let lat = lats[c];
                    let (va, pa, fu, d) = (vpd_anom[t][c], tp_anom[t][c], fuel[t][c], dry(c, t));
                    let warm = (2.0 * PI * (frac - 0.55)).cos() * lat.sin();
                    let noise: f64 = rng.sample(StandardNormal);
                    let l = land[c];
                    let val = match name {
                        "mslp" => 101_300.0 + 400.0 * mslp_base[c] - 150.0 * pa + 300.0 * warm + 50.0 * noise,
                        "tp" => (2.0 - 1.5 * d + 1.2 * pa + 0.2 * noise).max(0.0) * 1e-3,
                        "vpd" => (1.0 + (0.4 + prone[c]) * d + 0.5 * va + 0.05 * noise).max(0.0) * 10.0,
                        "sst" if !l => 273.0 + 26.0 * lat.cos() + 3.0 * warm + 0.3 * noise,
                        "t2m_mean" => 258.0 + 35.0 * lat.cos() + 8.0 * warm + 1.5 * va + 0.5 * noise,
                        "ssrd" => (1.5e7 * (lat.cos() + 0.3 * warm) + 1e6 * noise).max(0.0),
                        "swvl1" if l => (0.3 - 0.015 * fu - 0.05 * d + 0.03 * pa + 0.01 * noise).clamp(0.0, 0.6),
                        "lst_day" if l => 263.0 + 38.0 * lat.cos() + 10.0 * warm + 2.5 * va + 0.8 * noise,
                        "ndvi" if l => (0.45 - 0.2 * prone[c] + 0.03 * fu - 0.1 * d + 0.03 * noise).clamp(-0.1, 1.0),
                        "pop_dens" if l => (3.0 + 1.5 * pop_base[c]).exp() * (1.0 + 0.01 * year_idx),
                        "gwis_ba" => {
                            if l && score[t * cells + c] > fire_threshold[t] {
                                50.0 * (0.8 * noise).exp()
                            } else {
                                0.0
                            }
                        }
                        _ => f64::NAN,
                    };
                    v[t * cells + c] = if val.is_nan() { nan } else { val as f32 };
                }
            }
        }
        infos.push(VariableInfo {
            name: name.to_string(),
            is_static,
            mean: None,
            std: None,
        });
        values.push(v);
    }
    let times = (config.years.0..=config.years.1)
        .flat_map(|y| (0..PERIODS_PER_YEAR).map(move |k| period_date(y, k)))
        .collect();
    let cube = Datacube {
        grid,
        times,
        variables: infos,
        values,
        meta: serde_json::json!({ "synth": config }),
    };
    cube.validate()?;
    Ok(cube)
}
