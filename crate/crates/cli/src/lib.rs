//! Config-driven experiments on interacting particle systems: loading and
//! validating a TOML config, running one experiment, and writing its
//! artifacts plus a `manifest.json`.

pub mod artifacts;
pub mod config;
pub mod experiments;
pub mod schema;

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::Value;

use artifacts::{ArtifactEntry, ArtifactWriter};
use config::ExperimentConfig;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] mvlov_core::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => EXIT_VALIDATION,
            RunError::Core(e) if e.is_numerical_abort() => EXIT_NUMERICAL,
            RunError::Core(mvlov_core::Error::Io(_)) | RunError::Io(_) => EXIT_IO,
            RunError::Core(_) => EXIT_VALIDATION,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub config_hash: String,
    pub experiment: String,
    /// `ok`, `aborted` (numerical failure) or `failed`
    pub status: String,
    /// true when the artifacts stop before the requested horizon
    pub partial: bool,
    pub error: Option<String>,
    pub wall_time_s: f64,
    pub config: Value,
    pub versions: Value,
    pub artifacts: Vec<ArtifactEntry>,
    pub summary: Value,
}

pub const MANIFEST: &str = "manifest.json";

/// Reads and validates a config; `output_dir` is resolved against the
/// directory holding the file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, RunError> {
    let text = std::fs::read_to_string(path)?;
    let mut cfg = ExperimentConfig::from_toml(&text)?;
    if cfg.output_dir.is_relative() {
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.output_dir = base.join(&cfg.output_dir);
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug)]
pub struct RunOutcome {
    pub output_dir: PathBuf,
    pub manifest: Manifest,
}

/// Runs `cfg` into `cfg.output_dir`. The manifest is written whether or
/// not the experiment succeeds, once the config has validated.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutcome, RunError> {
    cfg.validate()?;
    let hash = cfg.config_hash();
    let mut out = ArtifactWriter::create(&cfg.output_dir, &hash)?;
    let start = Instant::now();
    let result = experiments::dispatch(cfg, &mut out);
    let wall = start.elapsed().as_secs_f64();
    let (status, partial, error, summary) = match &result {
        Ok(s) => ("ok", false, None, s.clone()),
        Err(e) => {
            let abort = matches!(e, RunError::Core(c) if c.is_numerical_abort());
            let status = if abort { "aborted" } else { "failed" };
            (status, abort && !out.entries().is_empty(), Some(e.to_string()), Value::Null)
        }
    };
    let manifest = Manifest {
        config_hash: hash,
        experiment: cfg.experiment.name().to_string(),
        status: status.to_string(),
        partial,
        error,
        wall_time_s: wall,
        config: serde_json::to_value(cfg).map_err(|e| RunError::Config(e.to_string()))?,
        versions: serde_json::json!({
            "mvlov": env!("CARGO_PKG_VERSION"),
            "artifact_formats": { "ensemble": "MVL1", "density": "MVG1" },
        }),
        artifacts: out.entries().to_vec(),
        summary,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| RunError::Config(e.to_string()))?;
    std::fs::write(cfg.output_dir.join(MANIFEST), text + "\n")?;
    result.map(|_| RunOutcome {
        output_dir: cfg.output_dir.clone(),
        manifest,
    })
}
