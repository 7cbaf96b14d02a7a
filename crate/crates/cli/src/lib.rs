//! Command implementations behind the `bicam` binary.
//!
//! Every command reads its settings from a [`RunConfig`] (file first, flags
//! on top), processes directory items in sorted filename order and writes
//! CSV with shortest round-trip floats, so reruns are byte-identical.

pub mod args;
pub mod commands;
pub mod inputs;
pub mod table;

use std::fmt;

use bicam::io::config::RunConfig;

pub use args::{Cli, Command};

/// Exit status classes.
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Run(bicam::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Run(bicam::Error::Numeric { .. }) => EXIT_NUMERIC,
            CliError::Run(_) => EXIT_DATA,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Run(e) => e.fmt(f),
        }
    }
}

impl std::error::Error for CliError {}

impl From<bicam::Error> for CliError {
    fn from(e: bicam::Error) -> Self {
        CliError::Run(e)
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Loads `--config` if given, then applies flag overrides.
pub fn resolve_config(cli: &Cli) -> CliResult<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let bytes = bicam::io::read_file(path)?;
            let text = String::from_utf8(bytes)
                .map_err(|_| bicam::Error::Format(format!("{} is not UTF-8", path.display())))?;
            RunConfig::parse(&text).map_err(|e| e.in_context(&path.display().to_string()))?
        }
        None => RunConfig::default(),
    };
    for (key, value) in cli.run.overrides() {
        cfg.set(key, value)
            .map_err(|e| CliError::Usage(format!("--{}: {e}", key.replace('_', "-"))))?;
    }
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

/// Runs one parsed invocation, writing the human-readable report to `out`.
pub fn run(cli: &Cli, out: &mut dyn std::io::Write) -> CliResult<()> {
    let cfg = resolve_config(cli)?;
    commands::dispatch(&cli.command, &cfg, out)
}
