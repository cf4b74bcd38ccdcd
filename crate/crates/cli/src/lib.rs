//! Configuration and stage runner behind the `symkbc` binary.

pub mod config;
pub mod pipeline;

pub use config::PipelineConfig;
pub use pipeline::{EvalOptions, Pipeline};
