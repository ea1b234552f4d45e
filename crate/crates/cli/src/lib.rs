//! Command-line front end for buck converter stability analysis.

pub mod commands;
pub mod config;

pub use commands::{analyze_cascade, analyze_single, bode, simulate, Outcome, Quantity};
pub use config::{parse_config, parse_config_str, SystemConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error at {path}: {msg}")]
    Config { path: String, msg: String },
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Analysis(#[from] buckstab::Error),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
