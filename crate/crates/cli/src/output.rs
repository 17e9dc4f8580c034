use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::Value;

use crate::config::ExperimentConfig;
use crate::error::CliError;

/// Wrapper written around every command result.
#[derive(Debug, Serialize)]
pub struct Envelope<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'a str,
    pub config: &'a ExperimentConfig,
    /// Seconds since the Unix epoch; absent in deterministic mode.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generated_at: Option<u64>,
    pub result: Value,
}

impl<'a> Envelope<'a> {
    pub fn new(config: &'a ExperimentConfig, result: Value) -> Self {
        let generated_at = (!config.deterministic)
            .then(|| SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0));
        Self { tool: "lts", version: lts_core::VERSION, command: &config.command, config, generated_at, result }
    }

    pub fn to_json(&self) -> Result<String, CliError> {
        let mut s =
            serde_json::to_string_pretty(self).map_err(|e| CliError::Runtime(format!("serializing report: {e}")))?;
        s.push('\n');
        Ok(s)
    }
}

/// Writes `contents` to a temporary file beside `path`, then renames it over
/// `path`.
pub fn write_atomic(path: &Path, contents: &str) -> Result<(), CliError> {
    let fail = |e: std::io::Error| CliError::Runtime(format!("writing `{}`: {e}", path.display()));
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    std::fs::create_dir_all(&dir).map_err(fail)?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(fail)?;
    tmp.write_all(contents.as_bytes()).map_err(fail)?;
    tmp.as_file().sync_all().map_err(fail)?;
    tmp.persist(path).map_err(|e| fail(e.error))?;
    Ok(())
}
