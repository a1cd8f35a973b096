//! The resolved configuration echoed into every artifact.

use serde::Serialize;
use serde_json::Value;

#[derive(Clone, Debug, Serialize)]
pub struct RunConfig {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: &'static str,
    pub threads: usize,
    pub seed: Option<u64>,
    /// Every flag of the subcommand after defaults were applied.
    pub args: Value,
}

impl RunConfig {
    pub fn new(subcommand: &'static str, threads: usize, seed: Option<u64>, args: &impl Serialize) -> Self {
        Self {
            tool: "firecast",
            version: env!("CARGO_PKG_VERSION"),
            subcommand,
            threads,
            seed,
            args: serde_json::to_value(args).expect("flag structs serialize"),
        }
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("run config serializes")
    }

    pub fn canonical(&self) -> String {
        serde_json::to_string(self).expect("run config serializes")
    }
}
