use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cosine annealing with warm restarts, sampled once per epoch:
/// `lr = min + (max - min) * (1 + cos(pi * t_cur / t_i)) / 2`.
///
/// Epochs past the last configured cycle keep restarting with the last
/// cycle length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sgdr {
    pub max_lr: f64,
    pub min_lr: f64,
    pub cycles: Vec<usize>,
}

impl Sgdr {
    pub fn new(max_lr: f64, min_lr: f64, cycles: Vec<usize>) -> Result<Self> {
        if !(max_lr > 0.0 && max_lr.is_finite()) || !(0.0..=max_lr).contains(&min_lr) {
            return Err(Error::Config(format!(
                "learning rates must satisfy 0 <= min ({min_lr}) <= max ({max_lr}), max > 0"
            )));
        }
        if cycles.is_empty() || cycles.contains(&0) {
            return Err(Error::Config("SGDR cycles must be non-empty and positive".into()));
        }
        Ok(Self {
            max_lr,
            min_lr,
            cycles,
        })
    }

    /// `(cycle index, epochs into the cycle, cycle length)` of an epoch.
    pub fn position(&self, epoch: usize) -> (usize, usize, usize) {
        let mut start = 0;
        for (i, &len) in self.cycles.iter().enumerate() {
            if epoch < start + len {
                return (i, epoch - start, len);
            }
            start += len;
        }
        let last = *self.cycles.last().expect("validated non-empty");
        let extra = epoch - start;
        (self.cycles.len() + extra / last, extra % last, last)
    }

    /// Learning rate at a fractional position within a cycle.
    pub fn lr_at(&self, t_cur: f64, t_i: f64) -> f64 {
        // Written from the top so a cycle start yields `max_lr` exactly.
        self.max_lr - 0.5 * (self.max_lr - self.min_lr) * (1.0 - (PI * t_cur / t_i).cos())
    }

    pub fn lr(&self, epoch: usize) -> f64 {
        let (_, t_cur, t_i) = self.position(epoch);
        self.lr_at(t_cur as f64, t_i as f64)
    }
}
