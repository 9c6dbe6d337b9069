//! Run manifests, score files, tables and report generation.
//!
//! Everything a run produces is plain JSON, JSONL or CSV under one
//! directory (see [`layout::RunDir`]). Reports are rendered from those files
//! alone, so regenerating a report from the same run directories yields the
//! same bytes.

pub mod layout;
pub mod render;
pub mod tables;

use std::collections::BTreeMap;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::AssembledDocument;
use crate::digest::sha256_fields;
use crate::llm::cache::CacheStats;
use crate::pipeline::StageSet;

pub use layout::{RunDir, ScoreRow, SigtestRecord, SystemOutput};
pub use render::{build_report, render_report, score_run, ReportOptions};
pub use tables::{
    emit_domain_plot_data, fill_deltas, parse_ablation_csv, render_ablation_table, significance_marker,
    AblationRow, DomainSteps, TableFormat,
};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}: {reason}")]
    Io { path: String, reason: String },
    #[error("{path}: {reason}")]
    Format { path: String, reason: String },
    #[error("ablation table needs exactly one all-off row, found {0}")]
    MissingBaselineRow(usize),
    #[error("manifest field {0} is not populated")]
    Incomplete(&'static str),
    #[error(transparent)]
    Stats(#[from] crate::stats::StatsError),
}

pub(crate) fn io_err(path: &std::path::Path, e: impl std::fmt::Display) -> ReportError {
    ReportError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    /// `sbys`, `zero-shot`, `zero-shot-seg`, `zero-shot-seg-ctx` or `maps`.
    pub mode: String,
    pub config: serde_json::Value,
    pub template_digests: BTreeMap<String, String>,
    pub model_id: String,
    pub stage_set: Option<StageSet>,
    pub corpus_digest: String,
    pub seed: u64,
    pub cache: Option<CacheStats>,
    pub documents: usize,
    pub failures: usize,
    /// Choices made where the method leaves room for interpretation.
    #[serde(default)]
    pub notes: Vec<String>,
    pub started_unix: u64,
    pub finished_unix: u64,
}

impl RunManifest {
    pub fn new(run_id: impl Into<String>, mode: impl Into<String>) -> Self {
        RunManifest {
            run_id: run_id.into(),
            mode: mode.into(),
            config: serde_json::Value::Null,
            template_digests: BTreeMap::new(),
            model_id: String::new(),
            stage_set: None,
            corpus_digest: String::new(),
            seed: 0,
            cache: None,
            documents: 0,
            failures: 0,
            notes: Vec::new(),
            started_unix: unix_now(),
            finished_unix: 0,
        }
    }

    pub fn finish(&mut self) {
        self.finished_unix = unix_now();
    }

    /// Checks that every field a report relies on is filled in.
    pub fn check_reportable(&self) -> Result<(), ReportError> {
        if self.run_id.is_empty() {
            return Err(ReportError::Incomplete("run_id"));
        }
        if self.config.is_null() {
            return Err(ReportError::Incomplete("config"));
        }
        if self.template_digests.is_empty() {
            return Err(ReportError::Incomplete("template_digests"));
        }
        if self.model_id.is_empty() {
            return Err(ReportError::Incomplete("model_id"));
        }
        if self.corpus_digest.is_empty() {
            return Err(ReportError::Incomplete("corpus_digest"));
        }
        if self.finished_unix == 0 {
            return Err(ReportError::Incomplete("finished_unix"));
        }
        Ok(())
    }
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Digest over the serialized documents, in order.
pub fn corpus_digest(docs: &[AssembledDocument]) -> String {
    let lines: Vec<Vec<u8>> = docs
        .iter()
        .map(|d| serde_json::to_vec(d).expect("document serializes"))
        .collect();
    sha256_fields(lines.iter().map(Vec::as_slice))
}
