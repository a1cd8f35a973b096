use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::ap::average_precision;
use super::baselines::{BaselineKind, FireHistory};
use crate::data::{RegionMask, SplitYears};
use crate::error::{Error, Result};

/// Scores of one pool of (cell, time) pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoolScores {
    /// Land cells in the pool's mask.
    pub cells: usize,
    /// Pooled (cell, time) pairs.
    pub samples: usize,
    pub positives: usize,
    pub positive_rate: f64,
    pub auprc: Option<f64>,
    pub anyfire_auprc: Option<f64>,
    pub majority_auprc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model_id: String,
    pub horizon: Option<usize>,
    pub times: Vec<String>,
    pub global: PoolScores,
    /// Keyed by region name, hence ordered by name.
    pub regions: BTreeMap<String, PoolScores>,
    #[serde(default)]
    pub run_config: serde_json::Value,
}

/// A score grid for one target time.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredTime {
    pub time: usize,
    pub scores: Vec<f32>,
}

/// Inputs shared by every pool of an evaluation.
pub struct EvalData<'a> {
    pub times: &'a [NaiveDate],
    /// Binary `[T, cells]` targets.
    pub targets: &'a [f32],
    pub land: &'a [bool],
    pub years: SplitYears,
}

struct Pooled {
    scores: Vec<f64>,
    anyfire: Vec<f64>,
    majority: Vec<f64>,
    labels: Vec<bool>,
}

fn pool(
    data: &EvalData<'_>,
    preds: &[ScoredTime],
    baselines: &[(Vec<f32>, Vec<f32>)],
    mask: Option<&[bool]>,
) -> (usize, Pooled) {
    let cells = data.land.len();
    let selected: Vec<usize> = (0..cells)
        .filter(|&c| data.land[c] && mask.is_none_or(|m| m[c]))
        .collect();
    let n = selected.len() * preds.len();
    let mut p = Pooled {
        scores: Vec::with_capacity(n),
        anyfire: Vec::with_capacity(n),
        majority: Vec::with_capacity(n),
        labels: Vec::with_capacity(n),
    };
    for (pred, (any, maj)) in preds.iter().zip(baselines) {
        let target = &data.targets[pred.time * cells..(pred.time + 1) * cells];
        for &c in &selected {
            p.scores.push(pred.scores[c] as f64);
            p.anyfire.push(any[c] as f64);
            p.majority.push(maj[c] as f64);
            p.labels.push(target[c] > 0.5);
        }
    }
    (selected.len(), p)
}

fn score_pool(cells: usize, p: &Pooled) -> PoolScores {
    let positives = p.labels.iter().filter(|&&l| l).count();
    let samples = p.labels.len();
    let diagnostic = if samples == 0 {
        Some("pool is empty".to_string())
    } else if positives == 0 {
        Some("pool has no positive labels; AUPRC undefined".to_string())
    } else {
        None
    };
    PoolScores {
        cells,
        samples,
        positives,
        positive_rate: if samples == 0 { 0.0 } else { positives as f64 / samples as f64 },
        auprc: average_precision(&p.scores, &p.labels),
        anyfire_auprc: average_precision(&p.anyfire, &p.labels),
        majority_auprc: average_precision(&p.majority, &p.labels),
        diagnostic,
    }
}

/// Pools every (cell, time) pair inside `land` (and each region mask) and
/// computes model and naive-baseline AUPRC on identical pools.
pub fn evaluate(
    model_id: &str,
    horizon: Option<usize>,
    preds: &[ScoredTime],
    data: &EvalData<'_>,
    regions: &[RegionMask],
) -> Result<EvalReport> {
    let cells = data.land.len();
    if preds.is_empty() {
        return Err(Error::InvalidArgument("no predictions to evaluate".into()));
    }
    for p in preds {
        if p.scores.len() != cells || p.time >= data.times.len() {
            return Err(Error::Shape(format!(
                "prediction for time {} has {} cells, grid has {cells}",
                p.time,
                p.scores.len()
            )));
        }
    }
    let history = FireHistory::new(data.times, data.targets, cells, data.years)?;
    let baselines = preds
        .iter()
        .map(|p| {
            let date = data.times[p.time];
            Ok((
                history.predict(BaselineKind::AnyFire, date)?,
                history.predict(BaselineKind::Majority, date)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let (n, global) = pool(data, preds, &baselines, None);
    let global = score_pool(n, &global);
    let mut out = BTreeMap::new();
    for r in regions {
        if r.mask.len() != cells {
            return Err(Error::Shape(format!(
                "region '{}' has {} cells, grid has {cells}",
                r.name,
                r.mask.len()
            )));
        }
        let (n, p) = pool(data, preds, &baselines, Some(&r.mask));
        out.insert(r.name.clone(), score_pool(n, &p));
    }
    Ok(EvalReport {
        model_id: model_id.to_string(),
        horizon,
        times: preds
            .iter()
            .map(|p| data.times[p.time].format("%Y-%m-%d").to_string())
            .collect(),
        global,
        regions: out,
        run_config: serde_json::Value::Null,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;

    fn setup() -> (Vec<NaiveDate>, Vec<f32>, Vec<bool>, SplitYears) {
        let times: Vec<NaiveDate> = (2000..=2002)
            .map(|y| NaiveDate::from_ymd_opt(y, 1, 1).unwrap())
            .collect();
        // Four cells; the last is ocean.
        let targets = vec![
            1.0, 0.0, 1.0, 0.0, //
            1.0, 0.0, 0.0, 0.0, //
            1.0, 1.0, 0.0, 0.0,
        ];
        let years = SplitYears {
            train: (2000, 2000),
            val: (2001, 2001),
            test: (2002, 2002),
        };
        (times, targets, vec![true, true, true, false], years)
    }

    #[test]
    fn pooled_report() {
        let (times, targets, land, years) = setup();
        let data = EvalData {
            times: &times,
            targets: &targets,
            land: &land,
            years,
        };
        let preds = [ScoredTime {
            time: 2,
            scores: vec![0.9, 0.8, 0.1, 0.95],
        }];
        let grid = GridSpec::global(1, 4);
        let regions = [
            RegionMask::new("a", grid, vec![true, false, false, false]).unwrap(),
            RegionMask::new("b", grid, vec![false, false, true, true]).unwrap(),
        ];
        let r = evaluate("m", Some(1), &preds, &data, &regions).unwrap();
        assert_eq!(r.global.samples, 3);
        assert_eq!(r.global.positives, 2);
        assert_eq!(r.global.auprc, Some(1.0));
        // Majority of {2000, 2001}: only cell 0 burned twice.
        let maj = r.global.majority_auprc.unwrap();
        assert!((maj - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-12);
        let any = r.global.anyfire_auprc.unwrap();
        assert!((any - (0.5 * 0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-12);
        assert_eq!(r.regions["a"].auprc, Some(1.0));
        assert_eq!(r.regions["b"].auprc, None);
        assert!(r.regions["b"].diagnostic.is_some());
    }
}
