//! End-to-end orchestration over a work directory: synthetic cohort,
//! MIP preprocessing, cross-validated training, fine-tuning, encoding,
//! clustering, reconstruction evaluation and reproducibility analysis.
//!
//! Every command reads its inputs from the artifacts of earlier commands
//! and stamps its outputs with the config hash. Per-subject failures are
//! collected in the [`CommandReport`] instead of aborting the run.

mod commands;
mod config;
mod layout;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autoenc::AutoencError;
use crate::cluster::ClusterError;
use crate::evalmetrics::MetricsError;
use crate::synthtree::SynthError;
use crate::voxform::VoxError;

pub use commands::{
    cluster, encode, evaluate, finetune, preprocess, read_manifest, reproduce, run_all, synth, train, EvalSummary,
    EvalSummaryRow, FoldSummary, ManifestRow, MeanSd, TrainSummary,
};
pub use config::{
    CohortConfig, EncodeSection, EvaluateSection, FinetuneSection, ModelSource, PipelineConfig, PreprocessConfig, Seeds,
    TrainSection,
};
pub use layout::Layout;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_PARTIAL: i32 = 3;
pub const EXIT_MISSING_ARTIFACT: i32 = 4;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("missing {}; run `{command}` first", path.display())]
    MissingArtifact { path: PathBuf, command: String },
    #[error("{command}: no subject could be processed ({failures} failures)")]
    NothingProcessed { command: &'static str, failures: usize },
    #[error(transparent)]
    Vox(#[from] VoxError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Autoenc(#[from] AutoencError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("format: {0}")]
    Format(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => EXIT_USAGE,
            Self::MissingArtifact { .. } => EXIT_MISSING_ARTIFACT,
            _ => EXIT_FAILURE,
        }
    }
}

impl From<csv::Error> for PipelineError {
    fn from(e: csv::Error) -> Self {
        Self::Format(e.to_string())
    }
}

impl From<serde_json::Error> for PipelineError {
    fn from(e: serde_json::Error) -> Self {
        Self::Format(e.to_string())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectFailure {
    pub subject_id: String,
    pub message: String,
}

/// Outcome of one command that did not fail as a whole.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CommandReport {
    pub command: &'static str,
    pub processed: usize,
    pub failures: Vec<SubjectFailure>,
    pub outputs: Vec<PathBuf>,
}

impl CommandReport {
    fn new(command: &'static str) -> Self {
        Self { command, ..Default::default() }
    }

    fn fail(&mut self, subject_id: &str, err: impl std::fmt::Display) {
        log::warn!("{}: {subject_id}: {err}", self.command);
        self.failures.push(SubjectFailure { subject_id: subject_id.to_string(), message: err.to_string() });
    }

    pub fn exit_code(&self) -> i32 {
        if self.failures.is_empty() {
            EXIT_OK
        } else {
            EXIT_PARTIAL
        }
    }

    pub fn summary(&self) -> String {
        let mut s = format!("{}: {} processed, {} failed", self.command, self.processed, self.failures.len());
        for f in &self.failures {
            s.push_str(&format!("\n  {}: {}", f.subject_id, f.message));
        }
        s
    }
}

/// Provenance record written next to CSV outputs as `<file>.meta.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub config_hash: String,
    pub command: String,
    pub generator: String,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    path.with_file_name(name)
}

fn write_sidecar(path: &Path, config_hash: &str, command: &str) -> Result<(), PipelineError> {
    let meta = Sidecar {
        config_hash: config_hash.to_string(),
        command: command.to_string(),
        generator: format!("airtree {}", env!("CARGO_PKG_VERSION")),
    };
    std::fs::write(sidecar_path(path), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

/// Sizes the global rayon pool; later calls are ignored.
pub fn configure_threads(jobs: usize) {
    if jobs > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            log::debug!("thread pool already configured: {e}");
        }
    }
}
