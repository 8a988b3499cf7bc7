//! Host side of the curation engine: configuration, dataset files, the
//! embedding cache, remote experts, model files and the subcommands behind
//! the `nucleus` binary.

pub mod ablate;
pub mod cache;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod manifest;
pub mod model_io;
pub mod pipeline;
pub mod remote;
pub mod report;
pub mod synth;

pub use error::{EngineError, Result};
pub use nucleus_core as core;
