//! Seasonal wildfire forecasting on an icosahedral multimesh.

pub mod attribution;
pub mod coupling;
pub mod data;
pub mod error;
pub mod eval;
pub mod geomesh;
pub mod grid;
pub mod model;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use grid::GridSpec;
pub use tensor::{Tape, Tensor, Var};
