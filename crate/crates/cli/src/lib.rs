//! Config-driven experiment runner for `graph-bayes`.

pub mod config;
pub mod run;
pub mod svg;

pub use config::{ConfigError, ExperimentConfig, ExperimentKind};
pub use run::{run, Manifest, RunReport};

/// Environment variable naming the directory under which runs are placed
/// when neither `--out` nor the config's `output_dir` is given.
pub const OUTPUT_ROOT_ENV: &str = "GRAPH_BAYES_OUTPUT_ROOT";
