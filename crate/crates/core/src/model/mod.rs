//! The FireCastNet network, the recurrent baseline cells and checkpoints.
//!
//! Parameters live in a [`ParamStore`]; model structs only hold
//! [`ParamId`] layouts, so the same network runs at `f32` for training and
//! at `f64` for gradient checks via [`ParamStore::cast`].

mod checkpoint;
mod firecastnet;
mod mlp;
mod params;
mod recurrent;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest, ParamEntry, CHECKPOINT_FORMAT};
pub use firecastnet::{FireCastNet, FireCastNetConfig, MeshGraphs, TIME_STEPS};
pub use mlp::Mlp;
pub use params::{Bound, ParamId, ParamKind, ParamSpec, ParamStore};
pub use recurrent::{
    dropout, BaselineHead, ConvGruCell, ConvLstmCell, GruCell, DEFAULT_HIDDEN, DEFAULT_KERNEL,
};
