//! Average precision, naive seasonal baselines, pooled evaluation reports
//! and prediction files.

mod ap;
mod baselines;
mod predictions;
mod report;

pub use ap::average_precision;
pub use baselines::{naive_anyfire, naive_majority, period_of_year, BaselineKind, FireHistory};
pub use predictions::{pgm_bytes, read_predictions, write_prediction, PredictionMeta};
pub use report::{evaluate, EvalData, EvalReport, PoolScores, ScoredTime};
