//! Command-line grammar.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use firecast_core::eval::BaselineKind;
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "firecast", version, about = "Seasonal wildfire forecasting on an icosahedral multimesh")]
pub struct Cli {
    /// Worker threads; 1 makes every run bitwise reproducible.
    #[arg(long, global = true, env = "FIRECAST_THREADS", value_parser = clap::value_parser!(u32).range(1..))]
    pub threads: Option<u32>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build or inspect mesh files.
    #[command(subcommand)]
    Mesh(MeshCommand),
    /// Create, inspect or check datacubes and region masks.
    #[command(subcommand)]
    Data(DataCommand),
    /// Train a model and write checkpoints plus a metric log.
    Train(TrainArgs),
    /// Write probability grids for every target time of a split.
    Predict(PredictArgs),
    /// Score a prediction directory against the cube and the naive baselines.
    Eval(EvalArgs),
    /// Score a naive seasonal baseline on the test split.
    Baseline(BaselineArgs),
    /// Integrated Gradients variable importance.
    Attribute(AttributeArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Mesh(MeshCommand::Build(_)) => "mesh build",
            Self::Mesh(MeshCommand::Stats(_)) => "mesh stats",
            Self::Data(DataCommand::Synth(_)) => "data synth",
            Self::Data(DataCommand::Stats(_)) => "data stats",
            Self::Data(DataCommand::Validate(_)) => "data validate",
            Self::Data(DataCommand::Region(_)) => "data region",
            Self::Train(_) => "train",
            Self::Predict(_) => "predict",
            Self::Eval(_) => "eval",
            Self::Baseline(_) => "baseline",
            Self::Attribute(_) => "attribute",
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum MeshCommand {
    /// Build a uniform multimesh, or a local-area mesh around a region.
    Build(MeshBuildArgs),
    /// Print node, edge and face counts of a mesh file.
    Stats(PathArg),
}

#[derive(Debug, Subcommand)]
pub enum DataCommand {
    /// Generate a seeded synthetic datacube.
    Synth(SynthArgs),
    /// Print per-variable statistics of a datacube.
    Stats(PathArg),
    /// Check a datacube against the schema.
    Validate(PathArg),
    /// Write a rectangular lat-lon region mask on a cube's grid.
    Region(RegionArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct PathArg {
    pub path: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct MeshBuildArgs {
    /// Finest refinement level of a uniform mesh.
    #[arg(long, default_value_t = 6, value_parser = clap::value_parser!(u32).range(0..=8))]
    pub levels: u32,
    /// Region mask; switches to a local-area mesh.
    #[arg(long)]
    pub region: Option<PathBuf>,
    /// Local-area level inside the region.
    #[arg(long, default_value_t = 6)]
    pub fine_level: u32,
    /// Local-area level far from the region.
    #[arg(long, default_value_t = 3)]
    pub coarse_level: u32,
    /// Inner and outer buffer distances in km, as `INNER,OUTER`.
    #[arg(long, default_value = "400,800", value_parser = parse_pair_f64)]
    pub buffer_km: (f64, f64),
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Inclusive year range `FIRST:LAST`.
    #[arg(long, default_value = "2002:2019", value_parser = parse_years)]
    pub years: (i32, i32),
    #[arg(long, default_value_t = 64)]
    pub height: usize,
    #[arg(long, default_value_t = 128)]
    pub width: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct RegionArgs {
    /// Cube whose grid the mask is built on.
    #[arg(long)]
    pub cube: PathBuf,
    #[arg(long)]
    pub name: String,
    /// Latitude range `MIN:MAX` in degrees.
    #[arg(long, value_parser = parse_range, allow_hyphen_values = true)]
    pub lat: (f64, f64),
    /// Longitude range `MIN:MAX` in degrees; `MIN > MAX` wraps.
    #[arg(long, value_parser = parse_range, allow_hyphen_values = true)]
    pub lon: (f64, f64),
    #[arg(long)]
    pub out: PathBuf,
}

/// Year ranges of the train, validation and test splits.
#[derive(Debug, Clone, Args, Serialize)]
pub struct SplitArgs {
    #[arg(long, default_value = "2002:2017", value_parser = parse_years)]
    pub train_years: (i32, i32),
    #[arg(long, default_value = "2018:2018", value_parser = parse_years)]
    pub val_years: (i32, i32),
    #[arg(long, default_value = "2019:2019", value_parser = parse_years)]
    pub test_years: (i32, i32),
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub cube: PathBuf,
    #[arg(long)]
    pub mesh: PathBuf,
    /// Input window length in 8-day periods.
    #[arg(long, default_value_t = 6, value_parser = parse_ts)]
    pub ts: usize,
    /// Forecast lead in 8-day periods.
    #[arg(long, default_value_t = 1, value_parser = parse_horizon)]
    pub horizon: usize,
    /// Periods shared by consecutive windows; defaults to `ts - 6`.
    #[arg(long)]
    pub overlap: Option<usize>,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 1e-7)]
    pub weight_decay: f64,
    /// SGDR cycle lengths in epochs, comma separated.
    #[arg(long, default_value = "10,40", value_delimiter = ',')]
    pub sgdr_cycles: Vec<usize>,
    #[arg(long, default_value_t = 1)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Processor depth; 12 matches the reference architecture.
    #[arg(long, default_value_t = 12)]
    pub processor_layers: usize,
    /// Restricts the loss to this region (intersected with land).
    #[arg(long)]
    pub region: Option<PathBuf>,
    #[command(flatten)]
    pub splits: SplitArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SplitName {
    Train,
    Val,
    Test,
}

#[derive(Debug, Args, Serialize)]
pub struct PredictArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub cube: PathBuf,
    #[arg(long)]
    pub mesh: PathBuf,
    /// Must match the checkpoint's horizon when given.
    #[arg(long, value_parser = parse_horizon)]
    pub horizon: Option<usize>,
    #[arg(long, value_enum, default_value_t = SplitName::Test)]
    pub split: SplitName,
    /// Also write an 8-bit PGM map per target time.
    #[arg(long)]
    pub export_map: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub cube: PathBuf,
    #[arg(long, num_args = 1..)]
    pub regions: Vec<PathBuf>,
    #[command(flatten)]
    pub splits: SplitArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct BaselineArgs {
    #[arg(long)]
    pub cube: PathBuf,
    #[arg(long, value_parser = parse_baseline)]
    pub kind: BaselineKind,
    #[arg(long, num_args = 1..)]
    pub regions: Vec<PathBuf>,
    #[command(flatten)]
    pub splits: SplitArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct AttributeArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub cube: PathBuf,
    #[arg(long)]
    pub mesh: PathBuf,
    #[arg(long, value_parser = parse_horizon)]
    pub horizon: Option<usize>,
    /// Path points of the Riemann sum.
    #[arg(long, default_value_t = 200, value_parser = clap::value_parser!(u64).range(1..))]
    pub steps: u64,
    /// Test windows to attribute, spread evenly over the split.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub samples: u64,
    /// Averages the output over this region instead of all land.
    #[arg(long)]
    pub region: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_choice(s: &str, allowed: &[usize], what: &str) -> Result<usize, String> {
    let list = allowed.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(", ");
    match s.parse::<usize>() {
        Ok(v) if allowed.contains(&v) => Ok(v),
        _ => Err(format!("{what} must be one of {{{list}}}")),
    }
}

fn parse_ts(s: &str) -> Result<usize, String> {
    parse_choice(s, &firecast_core::model::TIME_STEPS, "ts")
}

fn parse_horizon(s: &str) -> Result<usize, String> {
    parse_choice(s, &firecast_core::data::HORIZONS, "horizon")
}

fn parse_baseline(s: &str) -> Result<BaselineKind, String> {
    s.parse().map_err(|_| "kind must be one of {anyfire, majority}".to_string())
}

fn parse_years(s: &str) -> Result<(i32, i32), String> {
    let bad = || format!("expected a year or FIRST:LAST, got '{s}'");
    let (a, b) = match s.split_once(':') {
        Some((a, b)) => (a, b),
        None => (s, s),
    };
    let a: i32 = a.trim().parse().map_err(|_| bad())?;
    let b: i32 = b.trim().parse().map_err(|_| bad())?;
    if a > b {
        return Err(format!("year range {a}:{b} is reversed"));
    }
    Ok((a, b))
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(':').ok_or_else(|| format!("expected MIN:MAX, got '{s}'"))?;
    let a: f64 = a.trim().parse().map_err(|_| format!("bad number '{a}'"))?;
    let b: f64 = b.trim().parse().map_err(|_| format!("bad number '{b}'"))?;
    Ok((a, b))
}

fn parse_pair_f64(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected A,B, got '{s}'"))?;
    let a: f64 = a.trim().parse().map_err(|_| format!("bad number '{a}'"))?;
    let b: f64 = b.trim().parse().map_err(|_| format!("bad number '{b}'"))?;
    Ok((a, b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn value_parsers() {
        assert_eq!(parse_ts("12"), Ok(12));
        assert!(parse_ts("13").unwrap_err().contains("{6, 12, 24}"));
        assert_eq!(parse_horizon("8"), Ok(8));
        assert!(parse_horizon("3").is_err());
        assert_eq!(parse_years("2018"), Ok((2018, 2018)));
        assert_eq!(parse_years("2002:2017"), Ok((2002, 2017)));
        assert!(parse_years("2019:2002").is_err());
        assert_eq!(parse_range("-10:25.5"), Ok((-10.0, 25.5)));
        assert_eq!(parse_pair_f64("400,800"), Ok((400.0, 800.0)));
    }

    #[test]
    fn grammar_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
