//! Standardization, positional channels, sample windows and year splits.

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use super::cube::{input_variables, Datacube, LAND_SEA_MASK, TARGET_VARIABLE};
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::tensor::Tensor;

/// Allowed forecast horizons, in 8-day periods.
pub const HORIZONS: [usize; 6] = [1, 2, 4, 8, 16, 24];
/// Input channels: 11 variables plus 3 positional channels.
pub const INPUT_CHANNELS: usize = 14;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Inclusive year ranges of each split, keyed on the target's year.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitYears {
    pub train: (i32, i32),
    pub val: (i32, i32),
    pub test: (i32, i32),
}

impl Default for SplitYears {
    fn default() -> Self {
        Self {
            train: (2002, 2017),
            val: (2018, 2018),
            test: (2019, 2019),
        }
    }
}

impl SplitYears {
    pub fn classify(&self, year: i32) -> Option<Split> {
        let inside = |(a, b): (i32, i32)| a <= year && year <= b;
        if inside(self.train) {
            Some(Split::Train)
        } else if inside(self.val) {
            Some(Split::Val)
        } else if inside(self.test) {
            Some(Split::Test)
        } else {
            None
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, (a, b)) in [("train", self.train), ("val", self.val), ("test", self.test)] {
            if a > b {
                return Err(Error::Config(format!("{name} years {a}..{b} are reversed")));
            }
        }
        if self.train.1 >= self.val.0 || self.val.1 >= self.test.0 {
            return Err(Error::Config("splits must be ordered train < val < test".into()));
        }
        Ok(())
    }
}

/// Mean and standard deviation of one input variable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariableStats {
    pub name: String,
    pub mean: f64,
    pub std: f64,
}

/// Statistics of the dynamic inputs over finite values at training-year
/// times. The land-sea mask is thresholded, not standardized, and has no
/// entry.
pub fn compute_stats(cube: &Datacube, years: &SplitYears) -> Result<Vec<VariableStats>> {
    let train_times: Vec<usize> = cube
        .times
        .iter()
        .enumerate()
        .filter(|(_, d)| years.classify(d.year()) == Some(Split::Train))
        .map(|(i, _)| i)
        .collect();
    if train_times.is_empty() {
        return Err(Error::Config(format!(
            "no cube times fall in the training years {}..{}",
            years.train.0, years.train.1
        )));
    }
    let mut out = Vec::new();
    for name in input_variables() {
        if name == LAND_SEA_MASK {
            continue;
        }
        let (mut n, mut sum, mut sq) = (0usize, 0.0f64, 0.0f64);
        for &t in &train_times {
            for &v in cube.slice(name, t)? {
                if v.is_finite() {
                    n += 1;
                    sum += v as f64;
                }
            }
        }
        if n == 0 {
            return Err(Error::Schema(format!("variable '{name}' has no finite training values")));
        }
        let mean = sum / n as f64;
        for &t in &train_times {
            for &v in cube.slice(name, t)? {
                if v.is_finite() {
                    sq += (v as f64 - mean).powi(2);
                }
            }
        }
        let std = (sq / n as f64).sqrt();
        if std <= 1e-12 * mean.abs().max(1.0) {
            return Err(Error::Schema(format!(
                "variable '{name}' is constant over the training years; cannot standardize"
            )));
        }
        out.push(VariableStats {
            name: name.to_string(),
            mean,
            std,
        });
    }
    Ok(out)
}

fn standardize_value(v: f32, s: &VariableStats) -> f32 {
    if v.is_finite() {
        ((v as f64 - s.mean) / s.std) as f32
    } else {
        0.0
    }
}

/// Standardized copy of a cube: each dynamic input becomes
/// `(v - mean) / std` with missing values set to 0, the land-sea mask
/// becomes 0/1, the target is untouched, and the statistics are recorded
/// in the variable table.
pub fn standardize(cube: &Datacube, stats: &[VariableStats]) -> Result<Datacube> {
    let mut out = cube.clone();
    for (info, vals) in out.variables.iter_mut().zip(&mut out.values) {
        if info.name == TARGET_VARIABLE {
            continue;
        }
        if info.name == LAND_SEA_MASK {
            for v in vals.iter_mut() {
                *v = if *v > 0.5 { 1.0 } else { 0.0 };
            }
            continue;
        }
        let s = stats
            .iter()
            .find(|s| s.name == info.name)
            .ok_or_else(|| Error::Schema(format!("no statistics for '{}'", info.name)))?;
        for v in vals.iter_mut() {
            *v = standardize_value(*v, s);
        }
        info.mean = Some(s.mean);
        info.std = Some(s.std);
    }
    Ok(out)
}

/// `[cos(lat), sin(lon), cos(lon)]` per cell, shape `[3, H, W]`.
pub fn positional_channels(grid: &GridSpec) -> Tensor<f32> {
    let cells = grid.cells();
    let mut data = vec![0.0f32; 3 * cells];
    for c in 0..cells {
        let (lat, lon) = grid.cell_latlon(c);
        let (lat, lon) = (lat.to_radians(), lon.to_radians());
        data[c] = lat.cos() as f32;
        data[cells + c] = lon.sin() as f32;
        data[2 * cells + c] = lon.cos() as f32;
    }
    Tensor::new([3, grid.height, grid.width], data).expect("sized above")
}

/// An input window `[start, start + ts)` and its target time
/// `start + ts - 1 + horizon`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleWindow {
    pub start: usize,
    pub ts: usize,
    pub horizon: usize,
}

impl SampleWindow {
    /// Index of the last input time.
    pub fn end(&self) -> usize {
        self.start + self.ts - 1
    }

    pub fn target(&self) -> usize {
        self.end() + self.horizon
    }
}

/// Every window over `n_times` steps, advancing by `stride`.
pub fn make_windows(n_times: usize, ts: usize, horizon: usize, stride: usize) -> Result<Vec<SampleWindow>> {
    if ts == 0 || horizon == 0 || stride == 0 {
        return Err(Error::Config("ts, horizon and stride must be positive".into()));
    }
    if ts + horizon > n_times {
        return Err(Error::Config(format!(
            "ts {ts} + horizon {horizon} exceeds the {n_times} available times"
        )));
    }
    Ok((0..=n_times - ts - horizon)
        .step_by(stride)
        .map(|start| SampleWindow { start, ts, horizon })
        .collect())
}

/// Stride for a window length and overlap.
pub fn stride_for(ts: usize, overlap: usize) -> Result<usize> {
    if overlap >= ts {
        return Err(Error::Config(format!("overlap {overlap} must be below ts {ts}")));
    }
    Ok(ts - overlap)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitWindows {
    pub train: Vec<SampleWindow>,
    pub val: Vec<SampleWindow>,
    pub test: Vec<SampleWindow>,
}

impl SplitWindows {
    pub fn get(&self, split: Split) -> &[SampleWindow] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    /// Errors naming the first empty split.
    pub fn require_nonempty(&self) -> Result<()> {
        for (name, w) in [("train", &self.train), ("val", &self.val), ("test", &self.test)] {
            if w.is_empty() {
                return Err(Error::Config(format!("the {name} split has no samples")));
            }
        }
        Ok(())
    }
}

/// Assigns windows to splits by the year of their target time; windows
/// with targets outside every split are dropped.
pub fn split_by_years(windows: &[SampleWindow], times: &[NaiveDate], years: &SplitYears) -> SplitWindows {
    let mut out = SplitWindows::default();
    for w in windows {
        match times.get(w.target()).and_then(|d| years.classify(d.year())) {
            Some(Split::Train) => out.train.push(*w),
            Some(Split::Val) => out.val.push(*w),
            Some(Split::Test) => out.test.push(*w),
            None => {}
        }
    }
    out
}

/// Standardized inputs in time-major layout, ready for window assembly.
#[derive(Clone, Debug)]
pub struct PreparedCube {
    pub grid: GridSpec,
    pub times: Vec<NaiveDate>,
    pub stats: Vec<VariableStats>,
    /// `[T, 11, H, W]` standardized inputs; the land-sea mask is repeated
    /// at every time.
    inputs: Vec<f32>,
    positional: Tensor<f32>,
    /// `[T, H, W]` binary target as 0/1.
    targets: Vec<f32>,
    pub land: Vec<bool>,
}

impl PreparedCube {
    /// Standardizes `cube` with statistics from the training years.
    pub fn new(cube: &Datacube, years: &SplitYears) -> Result<Self> {
        cube.validate()?;
        let stats = compute_stats(cube, years)?;
        let cells = cube.grid.cells();
        let t_len = cube.time_len();
        let names = input_variables();
        let mut inputs = vec![0.0f32; t_len * names.len() * cells];
        let lsm: Vec<f32> = cube
            .var(LAND_SEA_MASK)?
            .iter()
            .map(|&v| if v > 0.5 { 1.0 } else { 0.0 })
            .collect();
        for (ch, name) in names.iter().enumerate() {
            let s = stats.iter().find(|s| s.name == *name);
            for t in 0..t_len {
                let dst = &mut inputs[(t * names.len() + ch) * cells..][..cells];
                match s {
                    Some(s) => {
                        for (d, &v) in dst.iter_mut().zip(cube.slice(name, t)?) {
                            *d = standardize_value(v, s);
                        }
                    }
                    None => dst.copy_from_slice(&lsm),
                }
            }
        }
        let targets = cube
            .var(TARGET_VARIABLE)?
            .iter()
            .map(|&v| if v > 0.0 { 1.0 } else { 0.0 })
            .collect();
        Ok(Self {
            grid: cube.grid,
            times: cube.times.clone(),
            stats,
            inputs,
            positional: positional_channels(&cube.grid),
            targets,
            land: lsm.iter().map(|&v| v > 0.5).collect(),
        })
    }

    pub fn time_len(&self) -> usize {
        self.times.len()
    }

    /// The `[ts, 14, H, W]` input tensor of a window.
    pub fn input(&self, w: &SampleWindow) -> Result<Tensor<f32>> {
        if w.end() >= self.time_len() {
            return Err(Error::IndexOutOfRange {
                index: w.end(),
                size: self.time_len(),
            });
        }
        let cells = self.grid.cells();
        let per_time = 11 * cells;
        let mut data = Vec::with_capacity(w.ts * INPUT_CHANNELS * cells);
        for t in w.start..=w.end() {
            data.extend_from_slice(&self.inputs[t * per_time..(t + 1) * per_time]);
            data.extend_from_slice(self.positional.data());
        }
        Tensor::new([w.ts, INPUT_CHANNELS, self.grid.height, self.grid.width], data)
    }

    /// All binary targets, `[T, H, W]`.
    pub fn targets(&self) -> &[f32] {
        &self.targets
    }

    /// Binary target grid at time `t`.
    pub fn target(&self, t: usize) -> Result<&[f32]> {
        let cells = self.grid.cells();
        self.targets
            .get(t * cells..(t + 1) * cells)
            .ok_or(Error::IndexOutOfRange {
                index: t,
                size: self.time_len(),
            })
    }
}
