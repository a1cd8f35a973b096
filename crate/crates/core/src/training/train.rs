use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{bce_loss, bce_value};
use super::optim::{AdamConfig, AdamW};
use super::schedule::Sgdr;
use crate::data::{PreparedCube, SampleWindow, SplitWindows};
use crate::error::{Error, Result};
use crate::eval::average_precision;
use crate::model::{FireCastNet, MeshGraphs, ParamStore};
use crate::tensor::{Tape, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub base_lr: f64,
    pub min_lr: f64,
    pub weight_decay: f64,
    /// SGDR cycle lengths in epochs.
    pub sgdr_cycles: Vec<usize>,
    /// Samples per optimizer step; gradients are averaged in sample order.
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            base_lr: 1e-3,
            min_lr: 0.0,
            weight_decay: 1e-7,
            sgdr_cycles: vec![10, 40],
            batch_size: 1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config("weight decay must be finite and non-negative".into()));
        }
        self.schedule().map(|_| ())
    }

    pub fn schedule(&self) -> Result<Sgdr> {
        Sgdr::new(self.base_lr, self.min_lr, self.sgdr_cycles.clone())
    }
}

/// One line of the metric log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_auprc: Option<f64>,
    pub best_epoch: usize,
    pub best_val_auprc: Option<f64>,
}

pub struct TrainOutcome {
    pub history: Vec<EpochMetrics>,
    pub best_epoch: usize,
    pub best_params: ParamStore<f32>,
}

/// Logits `[H * W]` of one input.
pub fn predict_logits(
    net: &FireCastNet,
    store: &ParamStore<f32>,
    graphs: &MeshGraphs,
    input: Tensor<f32>,
) -> Result<Vec<f32>> {
    let mut tape = Tape::new();
    let p = store.bind(&mut tape, false);
    let x = tape.constant(input);
    let y = net.forward(&mut tape, &p, x, graphs)?;
    Ok(tape.value(y).data().to_vec())
}

pub fn sigmoid(z: f32) -> f32 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Loss and parameter gradients of one sample.
pub fn sample_gradients(
    net: &FireCastNet,
    store: &ParamStore<f32>,
    graphs: &MeshGraphs,
    input: Tensor<f32>,
    target: Arc<[f32]>,
    mask: Arc<[bool]>,
) -> Result<(f64, Vec<Tensor<f32>>)> {
    let mut tape = Tape::new();
    let p = store.bind(&mut tape, true);
    let x = tape.constant(input);
    let y = net.forward(&mut tape, &p, x, graphs)?;
    let loss = bce_loss(&mut tape, y, target, mask)?;
    let value = tape.value(loss).item()? as f64;
    let mut grads = tape.backward(loss)?;
    let g = p
        .vars()
        .iter()
        .zip(store.tensors())
        .map(|(&v, t)| grads.take(v).unwrap_or_else(|| Tensor::zeros(t.shape().to_vec())))
        .collect();
    Ok((value, g))
}

/// Validation loss and pooled AUPRC over `windows`.
pub fn evaluate_windows(
    net: &FireCastNet,
    store: &ParamStore<f32>,
    graphs: &MeshGraphs,
    data: &PreparedCube,
    windows: &[SampleWindow],
    mask: &[bool],
) -> Result<(f64, Option<f64>)> {
    let per_window = windows
        .par_iter()
        .map(|w| {
            let logits = predict_logits(net, store, graphs, data.input(w)?)?;
            let target = data.target(w.target())?;
            let loss = bce_value(&logits, target, mask)?;
            Ok((loss, logits, target))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    let mut loss = 0.0;
    for (l, logits, target) in &per_window {
        loss += l;
        for ((&z, &y), &m) in logits.iter().zip(target.iter()).zip(mask) {
            if m {
                scores.push(z as f64);
                labels.push(y > 0.5);
            }
        }
    }
    let n = per_window.len().max(1) as f64;
    Ok((loss / n, average_precision(&scores, &labels)))
}

/// Epoch loop: seeded shuffling, masked BCE, AdamW under an SGDR schedule,
/// validation AUPRC after every epoch and retention of the best parameters.
/// `on_epoch` receives each epoch's metrics, the current parameters and
/// whether they are the new best.
#[allow(clippy::too_many_arguments)]
pub fn train(
    net: &FireCastNet,
    store: &mut ParamStore<f32>,
    graphs: &MeshGraphs,
    data: &PreparedCube,
    splits: &SplitWindows,
    loss_mask: &[bool],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics, &ParamStore<f32>, bool) -> Result<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let schedule = config.schedule()?;
    if splits.train.is_empty() || splits.val.is_empty() {
        return Err(Error::Config("training needs non-empty train and val splits".into()));
    }
    if loss_mask.len() != data.grid.cells() {
        return Err(Error::Shape("loss mask does not match the grid".into()));
    }
    let mask: Arc<[bool]> = loss_mask.iter().zip(&data.land).map(|(&m, &l)| m && l).collect();
    if !mask.iter().any(|&m| m) {
        return Err(Error::Config("loss mask covers no land cells".into()));
    }
    let adam = AdamConfig {
        weight_decay: config.weight_decay,
        ..AdamConfig::default()
    };
    let mut opt = AdamW::new(adam, store.tensors());
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, Option<f64>, ParamStore<f32>)> = None;
    let mut order = splits.train.clone();
    for epoch in 0..config.epochs {
        let lr = schedule.lr(epoch);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        order.clone_from(&splits.train);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let snapshot: &ParamStore<f32> = store;
            let results = batch
                .par_iter()
                .map(|w| {
                    let target: Arc<[f32]> = data.target(w.target())?.into();
                    sample_gradients(net, snapshot, graphs, data.input(w)?, target, mask.clone())
                })
                .collect::<Result<Vec<_>>>()?;
            let mut sum: Option<Vec<Tensor<f32>>> = None;
            for (loss, grads) in results {
                if !loss.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "loss is {loss} at epoch {epoch}, batch {b}"
                    )));
                }
                total += loss;
                match &mut sum {
                    None => sum = Some(grads),
                    Some(acc) => {
                        for (a, g) in acc.iter_mut().zip(&grads) {
                            for (x, y) in a.data_mut().iter_mut().zip(g.data()) {
                                *x += *y;
                            }
                        }
                    }
                }
            }
            let mut grads = sum.expect("batches are non-empty");
            if batch.len() > 1 {
                let k = batch.len() as f32;
                for g in &mut grads {
                    for x in g.data_mut() {
                        *x /= k;
                    }
                }
            }
            opt.step(store.tensors_mut(), &grads, lr)
                .map_err(|e| Error::NonFinite(format!("epoch {epoch}, batch {b}: {e}")))?;
        }
        let (val_loss, val_auprc) = evaluate_windows(net, store, graphs, data, &splits.val, &mask)?;
        let improved = match &best {
            None => true,
            Some((_, prev, _)) => val_auprc.unwrap_or(f64::NEG_INFINITY) > prev.unwrap_or(f64::NEG_INFINITY),
        };
        if improved {
            best = Some((epoch, val_auprc, store.clone()));
        }
        let (best_epoch, best_val_auprc) = best.as_ref().map(|b| (b.0, b.1)).expect("set above");
        let metrics = EpochMetrics {
            epoch,
            lr,
            train_loss: total / order.len() as f64,
            val_loss,
            val_auprc,
            best_epoch,
            best_val_auprc,
        };
        on_epoch(&metrics, store, improved)?;
        history.push(metrics);
    }
    let (best_epoch, _, best_params) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        history,
        best_epoch,
        best_params,
    })
}
