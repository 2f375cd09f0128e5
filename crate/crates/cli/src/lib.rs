//! Command-line driver for `qident-core`: simulate a configured model,
//! identify its unknown parameters from a measured trace, propose spectral
//! initial guesses, reconstruct environment spectra and compare gradients.
//!
//! Every run writes CSV tables, the effective configuration and a manifest
//! of SHA-256 digests into `<root>/<command>/`.

pub mod commands;
pub mod config;
pub mod error;
pub mod experiment;
pub mod output;

pub use commands::{run_config, run_file, Command, Overrides};
pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};
