//! File formats, experiment configuration, run manifests, and the `mmf`
//! command implementations on top of `mmf-core`.

pub mod ablation;
pub mod commands;
pub mod config;
pub mod error;
pub mod formats;
pub mod manifest;

pub use error::{CliError, CliResult};
pub use mmf_core as core;
