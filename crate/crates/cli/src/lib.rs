//! The `veto-bandit` command line.
//!
//! Each subcommand writes its artifacts plus a `.meta.json` manifest holding
//! the resolved configuration and SHA-256 hashes of every input and output.

mod commands;
pub mod config;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::Parser;
use serde::Serialize;

use config::{Cli, Command, FileConfig, Resolved};

pub const CONFIG_ENV: &str = "VETO_BANDIT_CONFIG";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub kind: String,
    pub message: String,
}

impl CliError {
    pub fn new(kind: impl Into<String>, message: impl Into<String>) -> Self {
        CliError {
            kind: kind.into(),
            message: message.into(),
        }
    }

    /// `error: kind=<kind> message=<message>` on a single line.
    pub fn line(&self) -> String {
        let message = self
            .message
            .split_whitespace()
            .collect::<Vec<_>>()
            .join(" ");
        format!("error: kind={} message={}", self.kind, message)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.line())
    }
}

impl std::error::Error for CliError {}

impl From<veto_core::Error> for CliError {
    fn from(e: veto_core::Error) -> Self {
        CliError::new(e.kind(), e.to_string())
    }
}

impl From<veto_advisor::ApiError> for CliError {
    fn from(e: veto_advisor::ApiError) -> Self {
        let message = match e.step {
            Some(step) => format!("{} (step {step})", e.message),
            None => e.message,
        };
        CliError::new(e.code, message)
    }
}

pub(crate) fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::new("io", format!("{}: {e}", path.display()))
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| io_error(path, e))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| io_error(path, e))
}

/// Configuration and hashes written beside every artifact.
#[derive(Debug, Serialize)]
pub(crate) struct Manifest<'a> {
    command: Command,
    config: &'a Resolved,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    details: BTreeMap<String, serde_json::Value>,
}

impl<'a> Manifest<'a> {
    pub(crate) fn new(command: Command, config: &'a Resolved) -> Self {
        Manifest {
            command,
            config,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            details: BTreeMap::new(),
        }
    }

    pub(crate) fn input(&mut self, path: &Path, bytes: &[u8]) {
        self.inputs.insert(
            path.display().to_string(),
            veto_core::model_io::sha256_hex(bytes),
        );
    }

    /// Writes `bytes` to `path` and records its hash.
    pub(crate) fn output(&mut self, path: &Path, bytes: &[u8]) -> Result<(), CliError> {
        write_file(path, bytes)?;
        self.outputs.insert(
            path.display().to_string(),
            veto_core::model_io::sha256_hex(bytes),
        );
        Ok(())
    }

    pub(crate) fn detail(&mut self, key: &str, value: impl Serialize) {
        let value = serde_json::to_value(value).expect("details serialise");
        self.details.insert(key.to_string(), value);
    }

    pub(crate) fn write(&self, path: &Path) -> Result<(), CliError> {
        let mut bytes = serde_json::to_vec_pretty(self).expect("manifest serialises");
        bytes.push(b'\n');
        write_file(path, &bytes)
    }
}

/// `<path>.meta.json`
pub(crate) fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

/// Parses `args` (program name first), resolves the configuration and runs
/// the subcommand. Human-readable results go to `out`.
pub fn run(
    args: &[OsString],
    env_config: Option<PathBuf>,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            write!(out, "{e}").map_err(|e| CliError::new("io", e.to_string()))?;
            return Ok(());
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or_default();
            return Err(CliError::new("usage", first.trim_start_matches("error: ")));
        }
    };
    let file = match cli.flags.config.clone().or(env_config) {
        Some(path) => FileConfig::load(&path)?,
        None => FileConfig::default(),
    };
    let config = Resolved::merge(cli.flags, file)?;
    commands::execute(cli.command, &config, out)
}
