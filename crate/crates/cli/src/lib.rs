//! Experiment runner behind the `voterlab` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod render;

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use config::{Command, ExperimentConfig, Format};
pub use error::CliError;

pub const SCHEMA: &str = "voterlab.result/1";

/// Everything a run produces, with its configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub schema: String,
    pub tool_version: String,
    pub config: ExperimentConfig,
    pub seed: u64,
    pub replicas: u64,
    /// True when every reported number is computed exactly.
    pub exact: bool,
    pub results: serde_json::Value,
}

/// A finished run held in memory until every piece is ready.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub record: ResultRecord,
    pub csv: String,
    pub images: Vec<(PathBuf, Vec<u8>)>,
}

impl RunOutput {
    pub fn primary(&self) -> Result<Vec<u8>, CliError> {
        Ok(match self.record.config.format {
            Format::Json => {
                let mut s = serde_json::to_string_pretty(&self.record)?;
                s.push('\n');
                s.into_bytes()
            }
            Format::Csv => {
                let mut s: String = self.record.config.emit().lines().map(|l| format!("# {l}\n")).collect();
                s.push_str(&self.csv);
                s.into_bytes()
            }
        })
    }
}

/// Writes through a temporary file in the target directory and renames, so a
/// reader never sees a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| CliError::Io(e.error))?;
    Ok(())
}

/// Runs a validated configuration and writes its files. Nothing is written
/// unless the whole computation succeeded.
pub fn execute(cfg: &ExperimentConfig, stdout: &mut dyn Write) -> Result<(), CliError> {
    cfg.validate()?;
    let out = commands::run(cfg)?;
    let primary = out.primary()?;
    match &cfg.out {
        Some(p) => write_atomic(p, &primary)?,
        None => stdout.write_all(&primary)?,
    }
    for (path, bytes) in &out.images {
        write_atomic(path, bytes)?;
    }
    Ok(())
}
