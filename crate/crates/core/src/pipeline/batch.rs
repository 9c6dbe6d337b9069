//! Batch runs over many documents.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{run_step_by_step, PipelineConfig, StageOutputs, StageSet};
use crate::corpus::AssembledDocument;
use crate::exec::Execution;
use crate::llm::cache::ResponseCache;
use crate::llm::{ChatBackend, Conversation};
use crate::report::layout::write_jsonl;
use crate::report::{corpus_digest, ReportError, RunDir, RunManifest};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentFailure {
    pub doc_id: String,
    pub stage: Option<String>,
    pub error: String,
}

#[derive(Debug, Clone)]
pub struct BatchOptions {
    /// Documents in flight at once.
    pub concurrency: usize,
    pub execution: Execution,
    /// Cache whose statistics go into the manifest.
    pub cache: Option<Arc<ResponseCache>>,
}

impl Default for BatchOptions {
    fn default() -> Self {
        BatchOptions {
            concurrency: 4,
            execution: Execution::default(),
            cache: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BatchOutcome<T = StageOutputs> {
    /// One entry per input document, in input order.
    pub results: Vec<Result<T, DocumentFailure>>,
    pub manifest: RunManifest,
}

impl<T> BatchOutcome<T> {
    pub fn successes(&self) -> impl Iterator<Item = &T> {
        self.results.iter().filter_map(|r| r.as_ref().ok())
    }

    pub fn failures(&self) -> impl Iterator<Item = &DocumentFailure> {
        self.results.iter().filter_map(|r| r.as_ref().err())
    }

    /// 0 when every document succeeded, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        i32::from(self.failures().next().is_some())
    }
}

/// Applies `f` to every document with at most `opts.concurrency` in flight.
/// Results keep input order.
pub fn run_documents<T, F>(docs: &[AssembledDocument], opts: &BatchOptions, f: F) -> Vec<Result<T, DocumentFailure>>
where
    T: Send,
    F: Fn(&AssembledDocument) -> Result<T, DocumentFailure> + Sync + Send,
{
    opts.execution.map_bounded(docs, opts.concurrency.max(1), f)
}

/// Fills the manifest fields every batch shares.
pub fn complete_manifest<T>(
    manifest: &mut RunManifest,
    docs: &[AssembledDocument],
    cfg: &PipelineConfig,
    model_id: &str,
    results: &[Result<T, DocumentFailure>],
    opts: &BatchOptions,
) {
    manifest.template_digests = cfg.templates.digests();
    manifest.model_id = model_id.to_string();
    manifest.corpus_digest = corpus_digest(docs);
    manifest.documents = docs.len();
    manifest.failures = results.iter().filter(|r| r.is_err()).count();
    manifest.cache = opts.cache.as_ref().map(|c| c.stats());
    manifest.finish();
}

fn stage_notes(stage_set: StageSet, cfg: &PipelineConfig) -> Vec<String> {
    let mut notes = Vec::new();
    if stage_set.draft && !stage_set.research {
        notes.push("draft without research: single-turn conversation holding only the drafting prompt".into());
    }
    if stage_set.refine && !stage_set.research {
        notes.push(
            "refine without research: refinement continues the preceding single-turn exchange".into(),
        );
    }
    if stage_set.research && cfg.extract_artifacts {
        notes.push("artifacts extracted in a separate conversation from a labeled transcript".into());
    }
    notes
}

pub fn run_batch(
    docs: &[AssembledDocument],
    stage_set: StageSet,
    backend: &dyn ChatBackend,
    cfg: &PipelineConfig,
    opts: &BatchOptions,
    mut manifest: RunManifest,
) -> BatchOutcome {
    let results = run_documents(docs, opts, |doc| {
        run_step_by_step(doc, stage_set, backend, cfg).map_err(|e| DocumentFailure {
            doc_id: doc.id.clone(),
            stage: e.stage().map(|s| s.to_string()),
            error: e.to_string(),
        })
    });
    manifest.stage_set = Some(stage_set);
    manifest.notes.extend(stage_notes(stage_set, cfg));
    complete_manifest(&mut manifest, docs, cfg, backend.model_id(), &results, opts);
    BatchOutcome { results, manifest }
}

#[derive(Serialize)]
struct ConversationsLine<'a> {
    doc_id: &'a str,
    conversations: &'a [Conversation],
}

#[derive(Serialize)]
struct TimingsLine<'a> {
    doc_id: &'a str,
    seconds: &'a BTreeMap<String, f64>,
}

/// Writes outputs, conversations, failures, timings and the manifest.
pub fn write_stage_run(run: &RunDir, outcome: &BatchOutcome) -> Result<(), ReportError> {
    let mut outputs: Vec<Value> = Vec::new();
    let mut conversations = Vec::new();
    let mut timings = Vec::new();
    for o in outcome.successes() {
        let mut v = serde_json::to_value(o).expect("stage outputs serialize");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("conversations");
        }
        outputs.push(v);
        conversations.push(ConversationsLine {
            doc_id: &o.doc_id,
            conversations: &o.conversations,
        });
        timings.push(TimingsLine {
            doc_id: &o.doc_id,
            seconds: &o.timings,
        });
    }
    write_jsonl(&run.outputs_path(), &outputs)?;
    write_jsonl(&run.conversations_path(), &conversations)?;
    write_jsonl(&run.timings_path(), &timings)?;
    let failures: Vec<&DocumentFailure> = outcome.failures().collect();
    write_jsonl(&run.failures_path(), &failures)?;
    run.write_manifest(&outcome.manifest)
}
