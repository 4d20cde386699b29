//! The `ipf` command-line tool.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
//! Failures print a single `error: ...` line on stderr.

mod args;
mod commands;
mod plot;

use std::ffi::OsString;
use std::fs;
use std::path::Path;

use clap::error::ErrorKind;
use clap::Parser;
use serde::Deserialize;

pub use args::Cli;

use crate::error::Error;
use crate::metrics::{Clip, SigmaPolicy, SigmaSource};
use crate::model::ModelConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Failure of a command, classified by exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Run(Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Run(Error::Numerical(_)) => EXIT_NUMERICAL,
            CliError::Run(_) => EXIT_DATA,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Run(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Run(e)
    }
}

pub type CliResult<T = ()> = std::result::Result<T, CliError>;

/// Optional settings read from `--config`. Every key is optional and flags
/// take precedence.
///
/// ```json
/// {
///   "seed": 7, "folds": 5, "epochs": 50, "batch_size": 8,
///   "lr": 0.0002, "weight_decay": 0.01, "precision": "f32", "eval_every": 1,
///   "sigma_policy": "train-residual", "clip": "70,1000",
///   "fallback_ones": false, "use_masks": true,
///   "patients": 8, "slices": 4, "image_size": 64, "visits": 6, "noise_sd": 10.0,
///   "model": { "image_size": 64, "...": "see ModelConfig" }
/// }
/// ```
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub folds: Option<usize>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub weight_decay: Option<f64>,
    pub precision: Option<String>,
    pub eval_every: Option<usize>,
    pub sigma_policy: Option<String>,
    pub clip: Option<String>,
    pub fallback_ones: Option<bool>,
    pub use_masks: Option<bool>,
    pub patients: Option<usize>,
    pub slices: Option<usize>,
    pub image_size: Option<usize>,
    pub visits: Option<usize>,
    pub noise_sd: Option<f64>,
    pub model: Option<ModelConfig>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }
}

/// `train-residual` or `fixed:<sigma>`.
pub fn parse_sigma_source(s: &str) -> CliResult<SigmaSource> {
    match s {
        "train-residual" => Ok(SigmaSource::TrainResidualLaplace),
        _ => match s.strip_prefix("fixed:").map(str::parse::<f64>) {
            Some(Ok(sigma)) if sigma > 0.0 => Ok(SigmaSource::Fixed { sigma }),
            _ => Err(CliError::Usage(format!(
                "invalid --sigma-policy {s:?}: expected train-residual or fixed:<sigma>"
            ))),
        },
    }
}

/// `SIGMA_MIN,ERROR_MAX`.
pub fn parse_clip(s: &str) -> CliResult<Clip> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    match parts[..] {
        [a, b] => match (a.parse::<f64>(), b.parse::<f64>()) {
            (Ok(sigma_min), Ok(error_max)) if sigma_min > 0.0 && error_max > 0.0 => Ok(Clip { sigma_min, error_max }),
            _ => Err(CliError::Usage(format!("invalid --clip {s:?}: values must be positive numbers"))),
        },
        _ => Err(CliError::Usage(format!("invalid --clip {s:?}: expected SIGMA_MIN,ERROR_MAX"))),
    }
}

pub fn sigma_policy(flag_policy: Option<&str>, flag_clip: Option<&str>, file: &FileConfig) -> CliResult<SigmaPolicy> {
    let source = match flag_policy.or(file.sigma_policy.as_deref()) {
        Some(s) => parse_sigma_source(s)?,
        None => SigmaSource::TrainResidualLaplace,
    };
    let clip = flag_clip.or(file.clip.as_deref()).map(parse_clip).transpose()?;
    Ok(SigmaPolicy { source, clip })
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return code;
        }
    };
    match commands::dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: {msg}");
            e.exit_code()
        }
    }
}
