//! Command-line front end for the wealth-dynamics simulator: config parsing,
//! subcommands and figure-ready CSV/JSON export.

pub mod commands;
pub mod config;
pub mod export;

pub use commands::{analytic, correlate, simulate, stationary, CliError};
pub use config::{parse_config, ExperimentConfig, ParseError};
pub use export::{read_csv, CsvTable, ExportManifest, Kind, ManifestEntry};
