//! Masked loss, AdamW, the SGDR schedule and the epoch loop.

mod loss;
mod optim;
mod schedule;
mod train;

pub use loss::{bce_loss, bce_value};
pub use optim::{AdamConfig, AdamW};
pub use schedule::Sgdr;
pub use train::{
    evaluate_windows, predict_logits, sample_gradients, sigmoid, train, EpochMetrics, TrainConfig,
    TrainOutcome,
};
