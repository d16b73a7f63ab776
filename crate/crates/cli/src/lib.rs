//! Config-driven experiment runner for `perfhom`: every run writes its CSV
//! and JSON artifacts plus a `manifest.json` holding the fully resolved
//! config and a SHA-256 per artifact, and any manifest can be replayed to
//! detect drift.

pub mod config;
pub mod run;

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use config::{parse_seeds, ExperimentConfig, ExperimentKind, HoleWeightMode};

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid config field `{field}`: {message}")]
    Validation { field: String, message: String },
    #[error(transparent)]
    Core(#[from] perfhom::Error),
    #[error("oracle comparisons failed")]
    OracleFailure,
    #[error("replay found drift in {0} artifact(s)")]
    Drift(usize),
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    /// 1 validation, 2 solver-fatal, 3 replay drift.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation { .. } | CliError::Io { .. } => 1,
            CliError::Core(e) => match e {
                perfhom::Error::Monotonicity { .. } | perfhom::Error::DegenerateBatch(_) => 2,
                _ => 1,
            },
            CliError::OracleFailure => 2,
            CliError::Drift(_) => 3,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the manifest's directory.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub config: ExperimentConfig,
    pub artifacts: Vec<Artifact>,
    pub warnings: Vec<String>,
    pub passed: bool,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Command-line overrides applied on top of the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seeds: Option<Vec<u64>>,
    pub parallel: Option<usize>,
}

/// Apply overrides, fill defaults and validate; no files are touched.
pub fn prepare(mut cfg: ExperimentConfig, overrides: &Overrides) -> Result<ExperimentConfig, CliError> {
    if let Some(out) = &overrides.out {
        cfg.output_dir = Some(out.clone());
    }
    if let Some(seeds) = &overrides.seeds {
        cfg.seeds = seeds.clone();
    }
    if let Some(p) = overrides.parallel {
        cfg.parallel = p;
    }
    let cfg = cfg.resolved();
    cfg.validate()?;
    if cfg.output_dir.is_none() {
        return Err(CliError::Validation {
            field: "output_dir".into(),
            message: "no output directory (set it in the config or pass --out)".into(),
        });
    }
    Ok(cfg)
}

fn compute(cfg: &ExperimentConfig) -> Result<run::Outputs, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.parallel)
        .build()
        .map_err(|e| CliError::Validation {
            field: "parallel".into(),
            message: e.to_string(),
        })?;
    pool.install(|| run::execute(cfg))
}

/// Run a prepared config, write its artifacts and manifest, and return the
/// manifest. An oracle failure still writes everything before reporting.
pub fn run(cfg: &ExperimentConfig) -> Result<Manifest, CliError> {
    let out_dir = cfg.output_dir.clone().expect("prepared config has an output directory");
    let outputs = compute(cfg)?;
    std::fs::create_dir_all(&out_dir).map_err(io_err(&out_dir))?;
    let mut artifacts = Vec::new();
    for (name, bytes) in &outputs.files {
        let path = out_dir.join(name);
        std::fs::write(&path, bytes).map_err(io_err(&path))?;
        artifacts.push(Artifact {
            path: name.clone(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
        });
    }
    let manifest = Manifest {
        tool: format!("perfhom {}", env!("CARGO_PKG_VERSION")),
        config: cfg.clone(),
        artifacts,
        warnings: outputs.warnings,
        passed: outputs.passed,
    };
    let path = out_dir.join(MANIFEST_NAME);
    let text = serde_json::to_string_pretty(&manifest).map_err(perfhom::Error::from)?;
    std::fs::write(&path, text + "\n").map_err(io_err(&path))?;
    if !manifest.passed {
        return Err(CliError::OracleFailure);
    }
    Ok(manifest)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactStatus {
    Match,
    Mismatch,
    Absent,
}

impl fmt::Display for ArtifactStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ArtifactStatus::Match => "match",
            ArtifactStatus::Mismatch => "mismatch",
            ArtifactStatus::Absent => "absent",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayEntry {
    pub path: String,
    /// The file on disk against the recorded hash.
    pub on_disk: ArtifactStatus,
    /// A fresh run against the recorded hash.
    pub rerun: ArtifactStatus,
}

impl ReplayEntry {
    pub fn status(&self) -> ArtifactStatus {
        match (self.on_disk, self.rerun) {
            (ArtifactStatus::Absent, _) => ArtifactStatus::Absent,
            (ArtifactStatus::Match, ArtifactStatus::Match) => ArtifactStatus::Match,
            _ => ArtifactStatus::Mismatch,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub entries: Vec<ReplayEntry>,
}

impl ReplayReport {
    pub fn drift_count(&self) -> usize {
        self.entries.iter().filter(|e| e.status() != ArtifactStatus::Match).count()
    }
}

/// Re-run the manifest's config in a scratch directory and compare both the
/// files next to the manifest and the fresh outputs with the recorded hashes.
pub fn replay(manifest_path: &Path, parallel: Option<usize>) -> Result<ReplayReport, CliError> {
    let text = std::fs::read_to_string(manifest_path).map_err(io_err(manifest_path))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| CliError::Validation {
        field: "manifest".into(),
        message: e.to_string(),
    })?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let mut cfg = manifest.config.clone();
    if let Some(p) = parallel {
        cfg.parallel = p;
    }
    cfg.validate()?;
    let fresh = compute(&cfg)?;
    let entries = manifest
        .artifacts
        .iter()
        .map(|a| {
            let on_disk = match std::fs::read(dir.join(&a.path)) {
                Ok(bytes) if sha256_hex(&bytes) == a.sha256 => ArtifactStatus::Match,
                Ok(_) => ArtifactStatus::Mismatch,
                Err(_) => ArtifactStatus::Absent,
            };
            let rerun = match fresh.files.iter().find(|f| f.0 == a.path) {
                Some((_, bytes)) if sha256_hex(bytes) == a.sha256 => ArtifactStatus::Match,
                Some(_) => ArtifactStatus::Mismatch,
                None => ArtifactStatus::Absent,
            };
            ReplayEntry {
                path: a.path.clone(),
                on_disk,
                rerun,
            }
        })
        .collect();
    Ok(ReplayReport { entries })
}
