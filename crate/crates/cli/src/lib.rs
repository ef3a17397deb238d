//! Command implementations behind the `jumpleg` binary. Each command reads
//! a [`RunConfig`], writes its files into the output directory and returns
//! a serializable report.

pub mod commands;
pub mod trajectory;

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use jumpleg::robot::{default_model, load_model, RobotModel};
use serde::Serialize;
use thiserror::Error;

pub use commands::{
    cmd_identify, cmd_optimize, cmd_simulate, cmd_tiptoe, cmd_track, cmd_validate, IdentifyOptions,
    IdentifyReport, OptimizeOptions, OptimizeReport, SimulateOptions, SimulateReport,
    TiptoeOptions, TiptoeReport, TrackOptions, TrackReport, ValidateOptions, ValidateReport,
};
pub use trajectory::{Trajectory, TrajectoryError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, unreadable or malformed input files.
    #[error("{0}")]
    Usage(String),
    /// The computation ran but did not produce an acceptable result.
    #[error("{0}")]
    Numerical(String),
    #[error("writing {path}: {source}")]
    Io { path: String, source: io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Io { .. } => EXIT_USAGE,
            CliError::Numerical(_) => EXIT_NUMERICAL,
        }
    }
}

/// Options shared by every subcommand.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    /// Model TOML; the shipped model when absent.
    pub model_path: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub seed: u64,
    /// Torso rise above standing height; 0 asks for a hover.
    pub apex: f64,
    pub stance_duration: f64,
    pub dt: f64,
    pub mu: f64,
    pub gains_profile: Option<String>,
    pub payload_kg: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model_path: None,
            out_dir: PathBuf::from("out"),
            seed: 0,
            apex: 0.3,
            stance_duration: 0.4,
            dt: 0.01,
            mu: 0.7,
            gains_profile: None,
            payload_kg: 1.0,
        }
    }
}

impl RunConfig {
    pub fn with_out_dir(out_dir: impl Into<PathBuf>) -> Self {
        Self {
            out_dir: out_dir.into(),
            ..Self::default()
        }
    }

    /// The model with the configured torso payload.
    pub fn model(&self) -> Result<RobotModel, CliError> {
        if !(self.payload_kg.is_finite() && self.payload_kg >= 0.0) {
            return Err(CliError::Usage(format!(
                "payload must be nonnegative, got {}",
                self.payload_kg
            )));
        }
        let base = match &self.model_path {
            Some(path) => {
                load_model(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
            }
            None => default_model(),
        };
        Ok(base.with_payload(self.payload_kg))
    }

    pub fn out_path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }
}

/// Writes `bytes` to a temporary file beside `path` and renames it over
/// `path`, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let io_err = |source| CliError::Io {
        path: path.display().to_string(),
        source,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err)?;
    }
    let name = path
        .file_name()
        .ok_or_else(|| CliError::Usage(format!("{} is not a file path", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
    fs::write(&tmp, bytes).map_err(io_err)?;
    fs::rename(&tmp, path).map_err(io_err)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("reports serialize");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}
