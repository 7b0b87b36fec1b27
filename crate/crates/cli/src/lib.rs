//! Command-line orchestration for the `mvdist` pipeline: run configuration,
//! subcommands, appendix-shaped tables and the artifact manifest.

pub mod commands;
pub mod config;
pub mod error;
pub mod ops;
pub mod pipeline;
pub mod tables;

pub use commands::main_with_args;
pub use config::RunConfig;
pub use error::{CliResult, StageError};
pub use pipeline::{run_pipeline, Manifest};
