//! Datacubes, standardization, sample windows, year splits, region masks
//! and the synthetic cube generator.

mod cube;
mod prepare;
mod region;
mod synth;

pub use cube::{
    input_variables, read_cube_header, required_variables, CubeHeader, Datacube, VariableInfo,
    CUBE_MAGIC, DYNAMIC_VARIABLES, LAND_SEA_MASK, POSITIONAL_CHANNELS, TARGET_VARIABLE,
};
pub use prepare::{
    compute_stats, make_windows, positional_channels, split_by_years, standardize, stride_for,
    PreparedCube, SampleWindow, Split, SplitWindows, SplitYears, VariableStats, HORIZONS,
    INPUT_CHANNELS,
};
pub use region::{RegionMask, REGION_MAGIC};
pub use synth::{period_date, synth_cube, SynthConfig, PERIODS_PER_YEAR};
