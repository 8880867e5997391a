//! Graph-based Bayesian semi-supervised learning on point clouds.

pub mod cloud;
pub mod error;
pub mod experiments;
pub mod forward;
pub mod graph;
pub mod interpolate;
pub mod likelihood;
pub mod oracle;
pub mod pipeline;
pub mod prior;
pub mod sampler;
pub mod spectral;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
