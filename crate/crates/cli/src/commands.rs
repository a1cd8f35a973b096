//! Subcommand implementations.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde_json::{json, Value};

use firecast_core::attribution::{
    channel_abs_sums, integrated_gradients, mean_probability_objective, model_channel_layout,
    report_from_channel_sums, Completeness, Quadrature,
};
use firecast_core::data::{
    make_windows, split_by_years, stride_for, synth_cube, Datacube, PreparedCube, RegionMask,
    SampleWindow, SplitWindows, SplitYears, SynthConfig, POSITIONAL_CHANNELS, TARGET_VARIABLE,
};
use firecast_core::eval::{
    evaluate, read_predictions, write_prediction, EvalData, EvalReport, FireHistory,
    PredictionMeta, ScoredTime,
};
use firecast_core::geomesh::{
    build_lam_mesh, build_multimesh, read_mesh_file, read_mesh_header, write_mesh_file, LamConfig,
    LamInfo, MeshFile,
};
use firecast_core::model::{
    load_checkpoint, save_checkpoint, FireCastNet, FireCastNetConfig, MeshGraphs, ParamStore,
};
use firecast_core::training::{predict_logits, sigmoid, train, TrainConfig};
use firecast_core::Tensor;

use crate::args::*;
use crate::run_config::RunConfig;

fn load_cube(path: &Path) -> Result<Datacube> {
    let cube = Datacube::load(path).with_context(|| format!("reading cube {}", path.display()))?;
    cube.validate()
        .with_context(|| format!("cube {} violates the schema", path.display()))?;
    Ok(cube)
}

fn load_region(path: &Path, cube: &Datacube) -> Result<RegionMask> {
    let region = RegionMask::load(path).with_context(|| format!("reading region {}", path.display()))?;
    if region.mask.len() != cube.grid.cells() {
        bail!(
            "region {} has {} cells but the cube grid has {}",
            path.display(),
            region.mask.len(),
            cube.grid.cells()
        );
    }
    Ok(region)
}

fn load_graphs(path: &Path, grid: &firecast_core::GridSpec, config: &FireCastNetConfig) -> Result<MeshGraphs> {
    let file = read_mesh_file(path).with_context(|| format!("reading mesh {}", path.display()))?;
    MeshGraphs::build(&file.mesh, grid, config.spatial_reduction)
        .with_context(|| format!("coupling mesh {} to the cube grid", path.display()))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn split_years(args: &SplitArgs) -> Result<SplitYears> {
    let years = SplitYears {
        train: args.train_years,
        val: args.val_years,
        test: args.test_years,
    };
    years.validate()?;
    Ok(years)
}

pub fn mesh_build(args: &MeshBuildArgs, rc: &RunConfig) -> Result<()> {
    let mut file = match &args.region {
        None => MeshFile::new(build_multimesh(args.levels)?),
        Some(path) => {
            let region = RegionMask::load(path).with_context(|| format!("reading region {}", path.display()))?;
            let config = LamConfig {
                fine_level: args.fine_level,
                coarse_level: args.coarse_level,
                buffer_km: args.buffer_km,
            };
            let lam = build_lam_mesh(&region, &config)?;
            let mut file = MeshFile::new(lam.mesh);
            file.lam = Some(LamInfo {
                region: lam.region_name,
                config,
            });
            file
        }
    };
    file.run_config = rc.to_value();
    write_mesh_file(&args.out, &file).with_context(|| format!("writing {}", args.out.display()))?;
    println!(
        "nodes={} edges={} faces={}",
        file.mesh.node_count(),
        file.mesh.edge_count(),
        file.mesh.faces.len()
    );
    Ok(())
}

pub fn mesh_stats(args: &PathArg) -> Result<()> {
    let h = read_mesh_header(&args.path).with_context(|| format!("reading {}", args.path.display()))?;
    println!("kind={}", h.kind);
    println!("finest_level={}", h.finest_level);
    println!("nodes={}", h.nodes);
    println!("edges={}", h.edges);
    println!("faces={}", h.faces);
    for l in &h.per_level {
        println!(
            "level={} vertices={} edges={} faces={}",
            l.level, l.vertices, l.edges, l.faces
        );
    }
    if let Some(lam) = &h.lam {
        println!(
            "lam_region={} fine_level={} coarse_level={} buffer_km={},{}",
            lam.region, lam.config.fine_level, lam.config.coarse_level, lam.config.buffer_km.0, lam.config.buffer_km.1
        );
    }
    Ok(())
}

pub fn data_synth(args: &SynthArgs, rc: &RunConfig) -> Result<()> {
    let config = SynthConfig::new(args.seed, args.years, args.height, args.width);
    let mut cube = synth_cube(&config)?;
    cube.meta["run_config"] = rc.to_value();
    cube.save(&args.out).with_context(|| format!("writing {}", args.out.display()))?;
    println!(
        "times={} grid={}x{} variables={}",
        cube.time_len(),
        cube.grid.height,
        cube.grid.width,
        cube.variables.len()
    );
    Ok(())
}

pub fn data_stats(args: &PathArg) -> Result<()> {
    let cube = load_cube(&args.path)?;
    let (first, last) = (cube.times[0], cube.times[cube.time_len() - 1]);
    println!(
        "grid={}x{} times={} first={first} last={last}",
        cube.grid.height,
        cube.grid.width,
        cube.time_len()
    );
    for (info, values) in cube.variables.iter().zip(&cube.values) {
        let finite: Vec<f64> = values.iter().filter(|v| v.is_finite()).map(|&v| v as f64).collect();
        let n = finite.len().max(1) as f64;
        let mean = finite.iter().sum::<f64>() / n;
        let std = (finite.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let missing = 1.0 - finite.len() as f64 / values.len().max(1) as f64;
        println!(
            "{} static={} mean={mean:.6} std={std:.6} missing={missing:.4}",
            info.name, info.is_static
        );
    }
    let land = cube.land_mask()?;
    let cells = cube.grid.cells();
    let target = cube.var(TARGET_VARIABLE)?;
    let (mut fires, mut total) = (0usize, 0usize);
    for t in 0..cube.time_len() {
        for c in (0..cells).filter(|&c| land[c]) {
            total += 1;
            fires += (target[t * cells + c] > 0.0) as usize;
        }
    }
    println!(
        "land_cells={} fire_rate={:.6}",
        land.iter().filter(|&&l| l).count(),
        fires as f64 / total.max(1) as f64
    );
    Ok(())
}

pub fn data_validate(args: &PathArg) -> Result<()> {
    let cube = load_cube(&args.path)?;
    println!(
        "valid: {} variables, {} times, {}x{} grid",
        cube.variables.len(),
        cube.time_len(),
        cube.grid.height,
        cube.grid.width
    );
    Ok(())
}

pub fn data_region(args: &RegionArgs) -> Result<()> {
    let cube = load_cube(&args.cube)?;
    let region = RegionMask::rectangle(&args.name, cube.grid, args.lat, args.lon);
    if region.is_empty() {
        bail!("region '{}' contains no grid cell centre", args.name);
    }
    region.save(&args.out).with_context(|| format!("writing {}", args.out.display()))?;
    println!("cells={}", region.count());
    Ok(())
}

fn windows_for(data: &PreparedCube, ts: usize, horizon: usize, stride: usize, years: &SplitYears) -> Result<SplitWindows> {
    let windows = make_windows(data.time_len(), ts, horizon, stride)?;
    Ok(split_by_years(&windows, &data.times, years))
}

fn open_jsonl(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

pub fn train_cmd(args: &TrainArgs, rc: &RunConfig) -> Result<()> {
    let cube = load_cube(&args.cube)?;
    let years = split_years(&args.splits)?;
    let overlap = args.overlap.unwrap_or(args.ts.saturating_sub(6));
    let stride = stride_for(args.ts, overlap)?;
    let mut config = FireCastNetConfig::paper(args.ts);
    config.processor_layers = args.processor_layers;
    config.validate()?;
    let graphs = load_graphs(&args.mesh, &cube.grid, &config)?;
    let mask = match &args.region {
        Some(p) => load_region(p, &cube)?.mask,
        None => vec![true; cube.grid.cells()],
    };
    let data = PreparedCube::new(&cube, &years)?;
    let splits = windows_for(&data, args.ts, args.horizon, stride, &years)?;
    if splits.train.is_empty() || splits.val.is_empty() {
        bail!(
            "no complete train or validation windows for ts={} horizon={} in years {:?}/{:?}",
            args.ts,
            args.horizon,
            years.train,
            years.val
        );
    }
    let train_config = TrainConfig {
        epochs: args.epochs,
        base_lr: args.lr,
        min_lr: 0.0,
        weight_decay: args.weight_decay,
        sgdr_cycles: args.sgdr_cycles.clone(),
        batch_size: args.batch_size,
        seed: args.seed,
    };
    train_config.validate()?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let meta = |extra: Value| {
        json!({
            "run_config": rc.to_value(),
            "horizon": args.horizon,
            "overlap": overlap,
            "split_years": years,
            "train": train_config,
            "extra": extra,
        })
    };
    write_json(
        &args.out.join("config.json"),
        &json!({
            "run_config": rc.to_value(),
            "model": config,
            "train": train_config,
            "horizon": args.horizon,
            "overlap": overlap,
            "stride": stride,
            "split_years": years,
            "samples": {
                "train": splits.train.len(),
                "val": splits.val.len(),
                "test": splits.test.len(),
            },
        }),
    )?;
    let (net, mut store) = FireCastNet::init::<f32>(&config, args.seed)?;
    let mut log = open_jsonl(&args.out.join("metrics.jsonl"))?;
    let outcome = train(
        &net,
        &mut store,
        &graphs,
        &data,
        &splits,
        &mask,
        &train_config,
        |m, params, improved| {
            let line = serde_json::to_string(m)?;
            writeln!(log, "{line}")?;
            log.flush()?;
            eprintln!("{line}");
            let info = json!({ "val_auprc": m.val_auprc, "val_loss": m.val_loss });
            save_checkpoint(&args.out.join("last.json"), &config, params, Some(m.epoch), meta(info.clone()))?;
            if improved {
                save_checkpoint(&args.out.join("best.json"), &config, params, Some(m.epoch), meta(info))?;
            }
            Ok(())
        },
    )?;
    let best = &outcome.history[outcome.best_epoch];
    println!(
        "best_epoch={} val_auprc={}",
        outcome.best_epoch,
        best.val_auprc.map_or("null".into(), |v| format!("{v:.6}"))
    );
    Ok(())
}

struct LoadedModel {
    horizon: usize,
    years: SplitYears,
    net: FireCastNet,
    store: ParamStore<f32>,
}

fn load_model(path: &Path, horizon: Option<usize>) -> Result<LoadedModel> {
    let (manifest, net, store) =
        load_checkpoint(path).with_context(|| format!("reading checkpoint {}", path.display()))?;
    let stored = manifest.meta.get("horizon").and_then(Value::as_u64).map(|h| h as usize);
    let horizon = match (horizon, stored) {
        (Some(h), Some(s)) if h != s => bail!("checkpoint was trained for horizon {s}, not {h}"),
        (Some(h), _) => h,
        (None, Some(s)) => s,
        (None, None) => bail!("checkpoint has no horizon; pass --horizon"),
    };
    let years = match manifest.meta.get("split_years") {
        Some(v) => serde_json::from_value(v.clone()).context("checkpoint split years")?,
        None => SplitYears::default(),
    };
    Ok(LoadedModel {
        horizon,
        years,
        net,
        store,
    })
}

fn split_of(splits: SplitWindows, name: SplitName) -> Vec<SampleWindow> {
    match name {
        SplitName::Train => splits.train,
        SplitName::Val => splits.val,
        SplitName::Test => splits.test,
    }
}

pub fn predict_cmd(args: &PredictArgs, rc: &RunConfig) -> Result<()> {
    let model = load_model(&args.ckpt, args.horizon)?;
    let cube = load_cube(&args.cube)?;
    let config = &model.net.config;
    let graphs = load_graphs(&args.mesh, &cube.grid, config)?;
    let data = PreparedCube::new(&cube, &model.years)?;
    let windows = split_of(windows_for(&data, config.ts, model.horizon, 1, &model.years)?, args.split);
    if windows.is_empty() {
        bail!("the {:?} split has no complete windows", args.split);
    }
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let probs = windows
        .par_iter()
        .map(|w| {
            let logits = predict_logits(&model.net, &model.store, &graphs, data.input(w)?)?;
            Ok(logits.into_iter().map(sigmoid).collect::<Vec<f32>>())
        })
        .collect::<firecast_core::Result<Vec<_>>>()?;
    for (w, p) in windows.iter().zip(&probs) {
        let meta = PredictionMeta {
            time: data.times[w.target()].to_string(),
            horizon: model.horizon,
            model_id: "firecastnet".into(),
            window_end: data.times[w.end()].to_string(),
            grid: cube.grid,
            run_config: rc.to_value(),
        };
        write_prediction(&args.out, &meta, p, args.export_map)?;
    }
    println!("predictions={}", windows.len());
    Ok(())
}

fn binary_targets(cube: &Datacube) -> Result<Vec<f32>> {
    Ok(cube
        .var(TARGET_VARIABLE)?
        .iter()
        .map(|&v| if v > 0.0 { 1.0 } else { 0.0 })
        .collect())
}

fn load_regions(paths: &[std::path::PathBuf], cube: &Datacube) -> Result<Vec<RegionMask>> {
    paths.iter().map(|p| load_region(p, cube)).collect()
}

fn print_report(report: &EvalReport) {
    let fmt = |v: Option<f64>| v.map_or("null".into(), |v| format!("{v:.6}"));
    let g = &report.global;
    println!(
        "global auprc={} anyfire={} majority={} samples={}",
        fmt(g.auprc),
        fmt(g.anyfire_auprc),
        fmt(g.majority_auprc),
        g.samples
    );
    for (name, r) in &report.regions {
        println!("region={name} auprc={} samples={}", fmt(r.auprc), r.samples);
    }
}

pub fn eval_cmd(args: &EvalArgs, rc: &RunConfig) -> Result<()> {
    let cube = load_cube(&args.cube)?;
    let years = split_years(&args.splits)?;
    let preds = read_predictions(&args.pred).with_context(|| format!("reading {}", args.pred.display()))?;
    if preds.is_empty() {
        bail!("no predictions found in {}", args.pred.display());
    }
    let (model_id, horizon) = (preds[0].0.model_id.clone(), preds[0].0.horizon);
    let mut scored = Vec::with_capacity(preds.len());
    for (meta, scores) in preds {
        if meta.grid != cube.grid {
            bail!("prediction for {} was made on a different grid", meta.time);
        }
        if meta.horizon != horizon || meta.model_id != model_id {
            bail!("{} mixes models or horizons", args.pred.display());
        }
        let date: chrono::NaiveDate = meta
            .time
            .parse()
            .with_context(|| format!("bad prediction time '{}'", meta.time))?;
        let time = cube
            .times
            .iter()
            .position(|&d| d == date)
            .with_context(|| format!("prediction time {date} is not in the cube"))?;
        scored.push(ScoredTime { time, scores });
    }
    let targets = binary_targets(&cube)?;
    let land = cube.land_mask()?;
    let data = EvalData {
        times: &cube.times,
        targets: &targets,
        land: &land,
        years,
    };
    let regions = load_regions(&args.regions, &cube)?;
    let mut report = evaluate(&model_id, Some(horizon), &scored, &data, &regions)?;
    report.run_config = rc.to_value();
    write_json(&args.out, &report)?;
    print_report(&report);
    Ok(())
}

pub fn baseline_cmd(args: &BaselineArgs, rc: &RunConfig) -> Result<()> {
    let cube = load_cube(&args.cube)?;
    let years = split_years(&args.splits)?;
    let targets = binary_targets(&cube)?;
    let land = cube.land_mask()?;
    let cells = cube.grid.cells();
    let history = FireHistory::new(&cube.times, &targets, cells, years)?;
    let scored = (0..cube.time_len())
        .filter(|&t| years.classify(chrono::Datelike::year(&cube.times[t])) == Some(firecast_core::data::Split::Test))
        .map(|t| {
            Ok(ScoredTime {
                time: t,
                scores: history.predict(args.kind, cube.times[t])?,
            })
        })
        .collect::<firecast_core::Result<Vec<_>>>()?;
    if scored.is_empty() {
        bail!("the cube has no times in the test years {:?}", years.test);
    }
    let data = EvalData {
        times: &cube.times,
        targets: &targets,
        land: &land,
        years,
    };
    let regions = load_regions(&args.regions, &cube)?;
    let mut report = evaluate(args.kind.name(), None, &scored, &data, &regions)?;
    report.run_config = rc.to_value();
    write_json(&args.out, &report)?;
    print_report(&report);
    Ok(())
}

/// Evenly spaced picks of `n` items out of `len`.
fn spread(len: usize, n: usize) -> Vec<usize> {
    let n = n.min(len);
    (0..n).map(|i| i * len / n).collect()
}

pub fn attribute_cmd(args: &AttributeArgs, rc: &RunConfig) -> Result<()> {
    let model = load_model(&args.ckpt, args.horizon)?;
    let cube = load_cube(&args.cube)?;
    let config = &model.net.config;
    let graphs = load_graphs(&args.mesh, &cube.grid, config)?;
    let data = PreparedCube::new(&cube, &model.years)?;
    let windows = windows_for(&data, config.ts, model.horizon, 1, &model.years)?.test;
    if windows.is_empty() {
        bail!("the test split has no complete windows");
    }
    let mask: Arc<[bool]> = match &args.region {
        Some(p) => {
            let region = load_region(p, &cube)?;
            region.mask.iter().zip(&data.land).map(|(&r, &l)| r && l).collect()
        }
        None => data.land.clone().into(),
    };
    let objective = mean_probability_objective(&model.net, &model.store, &graphs, mask)?;
    let layout = model_channel_layout();
    let steps = args.steps as usize;
    let mut sums = vec![0.0; layout.len()];
    let mut completeness = Vec::new();
    let picks = spread(windows.len(), args.samples as usize);
    let value_at = |x: Tensor<f32>| -> Result<f64> {
        let mut tape = firecast_core::Tape::new();
        let v = tape.constant(x);
        let out = objective(&mut tape, v)?;
        Ok(tape.value(out).item()? as f64)
    };
    for &i in &picks {
        let x = data.input(&windows[i])?;
        let baseline = Tensor::zeros(x.shape().to_vec());
        let ig = integrated_gradients(&objective, &x, &baseline, steps, Quadrature::RightRiemann)?;
        for (s, v) in sums.iter_mut().zip(channel_abs_sums(&ig, layout.len())?) {
            *s += v;
        }
        let ig_sum: f64 = ig.data().iter().map(|&v| v as f64).sum();
        completeness.push(Completeness::new(value_at(x)?, value_at(baseline)?, ig_sum));
    }
    let mut report = report_from_channel_sums(&sums, &layout, &POSITIONAL_CHANNELS, steps)?;
    report.horizon = Some(model.horizon);
    report.samples = picks.len();
    report.completeness = completeness;
    report.run_config = rc.to_value();
    write_json(&args.out, &report)?;
    for v in &report.variables {
        println!(
            "{} share={}",
            v.name,
            v.share.map_or("null".into(), |s| format!("{s:.6}"))
        );
    }
    if let Some(d) = &report.diagnostic {
        println!("diagnostic: {d}");
    }
    Ok(())
}
