//! The end-to-end pipeline: preprocess a mesh into partition files, run them,
//! and report. Every stage writes below the configured output directory and
//! refreshes `manifest.json` there.

pub mod config;
mod preprocess;
mod report;
mod run;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{InitialCondition, LambdaMode, Mode, ReceiverConfig, RunConfig, Scheme, SourceConfig, TimeFunction};
pub use preprocess::{preprocess, PreprocessSummary};
pub use report::{report, ReportOutput};
pub use run::{cost_ratio, run, RunSummary};

use crate::basis::BasisError;
use crate::lts::LtsError;
use crate::mesh::MeshError;
use crate::partition::PartitionError;
use crate::solver::SolverError;
use crate::source_receiver::SourceReceiverError;

#[derive(Debug, Error)]
pub enum DriverError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("mesh: {0}")]
    Mesh(#[from] MeshError),
    #[error("clustering: {0}")]
    Lts(#[from] LtsError),
    #[error("partitioning: {0}")]
    Partition(#[from] PartitionError),
    #[error("solver: {0}")]
    Solver(#[from] SolverError),
    #[error("basis: {0}")]
    Basis(#[from] BasisError),
    #[error("sources/receivers: {0}")]
    SourceReceiver(#[from] SourceReceiverError),
    #[error("version mismatch: {0}")]
    Version(String),
    #[error("{path}: {source}")]
    Json { path: String, source: serde_json::Error },
    #[error("worker {0} panicked")]
    Worker(usize),
}

impl DriverError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        DriverError::Io { path: path.display().to_string(), source }
    }
}

pub const MANIFEST: &str = "manifest.json";
pub const PARTITION_DIR: &str = "partitions";
pub const SEISMOGRAM_DIR: &str = "seismograms";

/// Outputs of [`execute`].
#[derive(Debug, Default)]
pub struct Outcome {
    pub preprocess: Option<PreprocessSummary>,
    pub run: Option<RunSummary>,
}

/// Runs the stages selected by `cfg.mode`.
pub fn execute(cfg: &RunConfig) -> Result<Outcome, DriverError> {
    let mut out = Outcome::default();
    if matches!(cfg.mode, Mode::Preprocess | Mode::Both) {
        out.preprocess = Some(preprocess(cfg)?);
    }
    if matches!(cfg.mode, Mode::Run | Mode::Both) {
        out.run = Some(run(cfg)?);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub files: Vec<ManifestEntry>,
}

/// Lists every file below `dir` (sorted) and writes the manifest.
pub fn write_manifest(dir: &Path) -> Result<Manifest, DriverError> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<ManifestEntry>) -> Result<(), DriverError> {
        let entries = std::fs::read_dir(dir).map_err(|e| DriverError::io(dir, e))?;
        for e in entries {
            let e = e.map_err(|e| DriverError::io(dir, e))?;
            let path = e.path();
            let meta = e.metadata().map_err(|e| DriverError::io(&path, e))?;
            if meta.is_dir() {
                walk(root, &path, out)?;
            } else {
                let rel = path.strip_prefix(root).expect("walk stays below root");
                if rel != Path::new(MANIFEST) {
                    let rel: Vec<_> = rel.components().map(|c| c.as_os_str().to_string_lossy().into_owned()).collect();
                    out.push(ManifestEntry { path: rel.join("/"), bytes: meta.len() });
                }
            }
        }
        Ok(())
    }
    let mut files = Vec::new();
    walk(dir, dir, &mut files)?;
    files.sort_by(|a, b| a.path.cmp(&b.path));
    let manifest = Manifest { files };
    write_json(&dir.join(MANIFEST), &manifest)?;
    Ok(manifest)
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), DriverError> {
    let text = serde_json::to_string_pretty(value).map_err(|source| DriverError::Json { path: path.display().to_string(), source })?;
    write_file(path, text.as_bytes())
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, DriverError> {
    let text = std::fs::read_to_string(path).map_err(|e| DriverError::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| DriverError::Json { path: path.display().to_string(), source })
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<(), DriverError> {
    std::fs::write(path, bytes).map_err(|e| DriverError::io(path, e))
}

pub(crate) fn create_dir(path: &Path) -> Result<PathBuf, DriverError> {
    std::fs::create_dir_all(path).map_err(|e| DriverError::io(path, e))?;
    Ok(path.to_path_buf())
}

/// `receiver_0003_slot_01.csv`.
pub fn seismogram_file_name(receiver: usize, slot: usize) -> String {
    format!("receiver_{receiver:04}_slot_{slot:02}.csv")
}
