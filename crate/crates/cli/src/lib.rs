//! Command line and HTTP front end for the `banditcat` engine.
//!
//! - [`config`]: the JSON run configuration
//! - [`commands`]: `calibrate`, `simulate`, `tune-gamma` and `metrics`
//! - [`service`]: the HTTP session service behind `serve`

pub mod commands;
pub mod config;
pub mod error;
pub mod service;

pub use config::RunConfig;
pub use error::CliError;
