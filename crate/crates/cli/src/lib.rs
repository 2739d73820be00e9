//! File-based front end for the relaxometry pipeline: analytic theory,
//! synthetic records, rate fits and spectral reconstruction.

pub mod analysis;
pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod svg;

pub use commands::{cmd_deconvolve, cmd_fit, cmd_pipeline, cmd_simulate, cmd_theory};
pub use config::RunConfig;
pub use error::CliError;
