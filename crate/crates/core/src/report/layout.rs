//! Run directory layout and file formats.
//!
//! ```text
//! runs/<run-id>/
//!   manifest.json        RunManifest
//!   outputs.jsonl        one system output per document
//!   conversations.jsonl  archived conversations per document
//!   failures.jsonl       per-document errors
//!   timings.jsonl        per-stage wall-clock seconds
//!   scores.csv           system,doc_id,domain,lang_pair,metric,value
//!   sigtests/*.json      PermutationResult per comparison
//!   domain_deltas.csv    domain,system,delta
//!   domain_plot.csv      domain,step,delta
//!   report.md
//! ```

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{io_err, ReportError, RunManifest};
use crate::stats::PermutationResult;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub system: String,
    pub doc_id: String,
    pub domain: String,
    pub lang_pair: String,
    pub metric: String,
    pub value: f64,
}

/// A stored significance test: the test result plus what was compared.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigtestRecord {
    pub metric: String,
    /// `None` when the test pooled all language pairs.
    pub lang_pair: Option<String>,
    #[serde(flatten)]
    pub result: PermutationResult,
}

/// Output line for single-output systems (the baselines).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemOutput {
    pub doc_id: String,
    pub mode: String,
    #[serde(rename = "final")]
    pub final_translation: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segment_translations: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidates: Option<crate::baselines::CandidateSet>,
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), ReportError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        let line = serde_json::to_string(item).map_err(|e| io_err(path, e))?;
        writeln!(w, "{line}").map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, ReportError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| ReportError::Format {
            path: path.display().to_string(),
            reason: format!("line {}: {e}", i + 1),
        })?);
    }
    Ok(out)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ReportError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| io_err(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, ReportError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| ReportError::Format {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}

/// Hypotheses in an outputs file, per system. The final output is system
/// `run_id`; intermediate stage outputs that differ from the final stage are
/// `run_id@zero_shot`, `run_id@draft` and `run_id@refined`.
pub fn hypotheses_by_system(
    run_id: &str,
    lines: &[Value],
) -> BTreeMap<String, BTreeMap<String, String>> {
    let mut out: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
    for line in lines {
        let Some(doc_id) = line.get("doc_id").and_then(Value::as_str) else {
            continue;
        };
        let text = |k: &str| line.get(k).and_then(Value::as_str);
        if let Some(f) = text("final") {
            out.entry(run_id.to_string())
                .or_default()
                .insert(doc_id.to_string(), f.to_string());
        }
        // The last stage that ran is the final output; skip it.
        let last = ["proofread", "refined", "draft", "zero_shot"]
            .into_iter()
            .find(|k| text(k).is_some());
        for field in ["zero_shot", "draft", "refined"] {
            if Some(field) == last {
                continue;
            }
            if let Some(t) = text(field) {
                out.entry(format!("{run_id}@{field}"))
                    .or_default()
                    .insert(doc_id.to_string(), t.to_string());
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunDir { root: root.into() }
    }

    pub fn create(root: impl Into<PathBuf>) -> Result<Self, ReportError> {
        let dir = Self::new(root);
        fs::create_dir_all(&dir.root).map_err(|e| io_err(&dir.root, e))?;
        Ok(dir)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join("manifest.json")
    }
    pub fn outputs_path(&self) -> PathBuf {
        self.root.join("outputs.jsonl")
    }
    pub fn conversations_path(&self) -> PathBuf {
        self.root.join("conversations.jsonl")
    }
    pub fn failures_path(&self) -> PathBuf {
        self.root.join("failures.jsonl")
    }
    pub fn timings_path(&self) -> PathBuf {
        self.root.join("timings.jsonl")
    }
    pub fn scores_path(&self) -> PathBuf {
        self.root.join("scores.csv")
    }
    pub fn sigtests_dir(&self) -> PathBuf {
        self.root.join("sigtests")
    }
    pub fn report_path(&self) -> PathBuf {
        self.root.join("report.md")
    }
    pub fn domain_deltas_path(&self) -> PathBuf {
        self.root.join("domain_deltas.csv")
    }
    pub fn domain_plot_path(&self) -> PathBuf {
        self.root.join("domain_plot.csv")
    }

    pub fn write_manifest(&self, m: &RunManifest) -> Result<(), ReportError> {
        write_json(&self.manifest_path(), m)
    }

    pub fn read_manifest(&self) -> Result<RunManifest, ReportError> {
        read_json(&self.manifest_path())
    }

    pub fn read_outputs(&self) -> Result<Vec<Value>, ReportError> {
        read_jsonl(&self.outputs_path())
    }

    pub fn write_scores(&self, rows: &[ScoreRow]) -> Result<(), ReportError> {
        let path = self.scores_path();
        let mut w = csv::Writer::from_path(&path).map_err(|e| io_err(&path, e))?;
        for r in rows {
            w.serialize(r).map_err(|e| io_err(&path, e))?;
        }
        w.flush().map_err(|e| io_err(&path, e))
    }

    pub fn read_scores(&self) -> Result<Vec<ScoreRow>, ReportError> {
        let path = self.scores_path();
        let mut r = csv::Reader::from_path(&path).map_err(|e| io_err(&path, e))?;
        r.deserialize()
            .map(|row| {
                row.map_err(|e| ReportError::Format {
                    path: path.display().to_string(),
                    reason: e.to_string(),
                })
            })
            .collect()
    }

    pub fn write_sigtest(&self, name: &str, record: &SigtestRecord) -> Result<(), ReportError> {
        let dir = self.sigtests_dir();
        fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        write_json(&dir.join(format!("{}.json", file_safe(name))), record)
    }

    /// All stored test results, ordered by file name.
    pub fn read_sigtests(&self) -> Result<Vec<SigtestRecord>, ReportError> {
        let dir = self.sigtests_dir();
        if !dir.exists() {
            return Ok(Vec::new());
        }
        let mut paths: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(|e| io_err(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        paths.iter().map(|p| read_json(p)).collect()
    }
}

/// Replaces characters that are awkward in file names.
pub fn file_safe(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.@".contains(c) { c } else { '_' })
        .collect()
}
