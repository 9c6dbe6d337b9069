//! Comparison systems: document and segment zero-shot, zero-shot in
//! context, and MAPS with reference-free candidate selection.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{language_name, ConfigError, SelectorMode};
use crate::corpus::{AssembledDocument, Segment, DEFAULT_JOINER};
use crate::llm::{continue_conversation, ChatBackend, Conversation, LlmError};
use crate::metrics::{argbest, Metric, MetricError, ScoreRequest};
use crate::pipeline::batch::{complete_manifest, run_documents, BatchOptions, BatchOutcome, DocumentFailure};
use crate::pipeline::PipelineConfig;
use crate::prompts::{bindings, PromptError, TemplateId};
use crate::report::layout::{write_jsonl, SystemOutput};
use crate::report::{ReportError, RunDir, RunManifest};

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("{doc_id}: {source}")]
    Backend {
        doc_id: String,
        #[source]
        source: LlmError,
    },
    #[error("{0}: empty translation")]
    EmptyTranslation(String),
    #[error("expected {expected} segment translations, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("no MAPS demonstrations for {0}")]
    MissingDemos(String),
    #[error("selector failed: {0}")]
    Selector(#[from] MetricError),
    #[error("demonstrations file {path}: {reason}")]
    Demos { path: String, reason: String },
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

fn ask_once(
    doc_id: &str,
    stage: &str,
    prompt: &str,
    backend: &dyn ChatBackend,
    cfg: &PipelineConfig,
) -> Result<String, BaselineError> {
    let conv = Conversation::new(backend.model_id(), doc_id, stage);
    match continue_conversation(&conv, prompt, &cfg.generation, backend) {
        Ok((reply, _)) if !reply.trim().is_empty() => Ok(reply),
        Ok(_) | Err(LlmError::EmptyCompletion) => Err(BaselineError::EmptyTranslation(doc_id.to_string())),
        Err(source) => Err(BaselineError::Backend {
            doc_id: doc_id.to_string(),
            source,
        }),
    }
}

/// One completion of the zero-shot prompt over the whole document.
pub fn zero_shot_document(
    doc: &AssembledDocument,
    backend: &dyn ChatBackend,
    cfg: &PipelineConfig,
) -> Result<String, BaselineError> {
    let prompt = cfg.templates.render(TemplateId::ZeroShot, &cfg.doc_bindings(doc)?)?;
    ask_once(&doc.id, "zero_shot", &prompt.text, backend, cfg)
}

/// The segments merged into `doc`, in order. References are not carried.
pub fn segments_of(doc: &AssembledDocument) -> Vec<Segment> {
    doc.segments
        .iter()
        .enumerate()
        .map(|(i, text)| Segment {
            doc_id: doc.doc_id.clone(),
            domain: doc.domain.clone(),
            index: doc.segment_span.start + i,
            source_text: text.clone(),
            reference_text: None,
            source_lang: doc.source_lang.clone(),
            target_lang: doc.target_lang.clone(),
        })
        .collect()
}

/// Translates one segment, optionally showing the full document source as
/// context. `document` is required when `with_context` is set.
pub fn zero_shot_segment(
    segment: &Segment,
    backend: &dyn ChatBackend,
    with_context: bool,
    document: Option<&AssembledDocument>,
    cfg: &PipelineConfig,
) -> Result<String, BaselineError> {
    let src = language_name(&cfg.languages, &segment.source_lang)?;
    let tgt = language_name(&cfg.languages, &segment.target_lang)?;
    let mut b = bindings([
        ("source_language", src.as_str()),
        ("target_language", tgt.as_str()),
        ("source_text", segment.source_text.as_str()),
    ]);
    let id = format!("{}#{}", segment.doc_id, segment.index);
    let template = if with_context {
        let doc = document.ok_or_else(|| {
            BaselineError::Config(ConfigError::Invalid {
                key: "document".into(),
                message: "in-context segment translation needs the document".into(),
            })
        })?;
        b.insert("document_context".into(), doc.source_text.clone());
        TemplateId::ZeroShotInContext
    } else {
        TemplateId::ZeroShot
    };
    let prompt = cfg.templates.render(template, &b)?;
    ask_once(&id, template.as_str(), &prompt.text, backend, cfg)
}

/// Joins per-segment translations with the corpus joiner.
pub fn concat_segment_translations(per_segment: &[String], doc: &AssembledDocument) -> Result<String, BaselineError> {
    if per_segment.len() != doc.segments.len() {
        return Err(BaselineError::LengthMismatch {
            expected: doc.segments.len(),
            got: per_segment.len(),
        });
    }
    Ok(per_segment.join(DEFAULT_JOINER))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnowledgeKind {
    Keywords,
    Topic,
    Demonstration,
}

impl KnowledgeKind {
    pub const ALL: [KnowledgeKind; 3] = [KnowledgeKind::Keywords, KnowledgeKind::Topic, KnowledgeKind::Demonstration];

    fn template(self) -> TemplateId {
        match self {
            KnowledgeKind::Keywords => TemplateId::MapsKeywords,
            KnowledgeKind::Topic => TemplateId::MapsTopic,
            KnowledgeKind::Demonstration => TemplateId::MapsDemo,
        }
    }

    fn label(self, src: &str, tgt: &str) -> String {
        match self {
            KnowledgeKind::Keywords => "Keyword Pairs".into(),
            KnowledgeKind::Topic => "Topics".into(),
            KnowledgeKind::Demonstration => format!("Related {src}-{tgt} text pair"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub knowledge_kind: KnowledgeKind,
    pub knowledge: String,
    pub translation: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub doc_id: String,
    pub candidates: Vec<Candidate>,
    pub selected: usize,
    pub selector: String,
    pub selector_scores: Vec<f64>,
}

impl CandidateSet {
    pub fn selected_translation(&self) -> &str {
        &self.candidates[self.selected].translation
    }
}

/// Few-shot demonstration blocks per language pair, one per knowledge
/// prompt.
///
/// ```toml
/// [pairs.en-de]
/// keywords = "..."
/// topic = "..."
/// demo = "..."
/// ```
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapsDemos {
    #[serde(default)]
    pub pairs: BTreeMap<String, PairDemos>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairDemos {
    pub keywords: String,
    pub topic: String,
    pub demo: String,
}

impl PairDemos {
    fn for_kind(&self, kind: KnowledgeKind) -> &str {
        match kind {
            KnowledgeKind::Keywords => &self.keywords,
            KnowledgeKind::Topic => &self.topic,
            KnowledgeKind::Demonstration => &self.demo,
        }
    }
}

impl MapsDemos {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn load(path: &Path) -> Result<Self, BaselineError> {
        let err = |reason: String| BaselineError::Demos {
            path: path.display().to_string(),
            reason,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        Self::from_toml(&text).map_err(err)
    }
}

/// Keywords, topic and demonstration knowledge, one candidate per knowledge
/// string, then selection by `selector`. Six backend calls and three
/// selector calls per document.
pub fn maps_translate(
    doc: &AssembledDocument,
    backend: &dyn ChatBackend,
    selector: &dyn Metric,
    mode: SelectorMode,
    demos: &MapsDemos,
    cfg: &PipelineConfig,
) -> Result<CandidateSet, BaselineError> {
    let pair = doc.lang_pair();
    let pair_demos = demos.pairs.get(&pair).ok_or(BaselineError::MissingDemos(pair))?;
    let desc = selector.descriptor();
    let reference = match mode {
        SelectorMode::Qe if desc.needs_reference => {
            return Err(BaselineError::Selector(MetricError::Config(format!(
                "{} needs references and cannot select in QE mode",
                desc.name
            ))))
        }
        SelectorMode::Qe => None,
        SelectorMode::Reference => Some(
            doc.reference_text
                .as_deref()
                .ok_or_else(|| MetricError::MissingReference(doc.id.clone()))?,
        ),
    };
    let base = cfg.doc_bindings(doc)?;
    let src = base["source_language"].clone();
    let tgt = base["target_language"].clone();

    let mut knowledge = Vec::with_capacity(3);
    for kind in KnowledgeKind::ALL {
        let mut b = base.clone();
        b.insert("demonstrations".into(), pair_demos.for_kind(kind).to_string());
        let prompt = cfg.templates.render(kind.template(), &b)?;
        knowledge.push(ask_once(&doc.id, kind.template().as_str(), &prompt.text, backend, cfg)?);
    }

    let mut candidates = Vec::with_capacity(3);
    for (kind, k) in KnowledgeKind::ALL.into_iter().zip(knowledge) {
        let mut b = base.clone();
        b.insert("knowledge_label".into(), kind.label(&src, &tgt));
        b.insert("knowledge".into(), k.clone());
        let prompt = cfg.templates.render(TemplateId::MapsCandidate, &b)?;
        let translation = ask_once(&doc.id, "maps_candidate", &prompt.text, backend, cfg)?;
        candidates.push(Candidate {
            knowledge_kind: kind,
            knowledge: k,
            translation,
        });
    }

    let mut scores = Vec::with_capacity(3);
    for c in &candidates {
        let req = ScoreRequest {
            id: &doc.id,
            hypothesis: &c.translation,
            reference,
            source: desc.needs_source.then_some(doc.source_text.as_str()),
        };
        let s = selector.score_batch(&[req])?;
        match s.as_slice() {
            [v] if v.is_finite() => scores.push(*v),
            _ => {
                return Err(BaselineError::Selector(MetricError::PluginProtocol(format!(
                    "selector returned {} values for one candidate",
                    s.len()
                ))))
            }
        }
    }
    let selected = argbest(&scores, desc.orientation).expect("three candidates");
    Ok(CandidateSet {
        doc_id: doc.id.clone(),
        candidates,
        selected,
        selector: desc.name.clone(),
        selector_scores: scores,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BaselineMode {
    #[serde(rename = "zero-shot")]
    ZeroShot,
    #[serde(rename = "zero-shot-seg")]
    ZeroShotSeg,
    #[serde(rename = "zero-shot-seg-ctx")]
    ZeroShotSegCtx,
    #[serde(rename = "maps")]
    Maps,
}

impl BaselineMode {
    pub fn as_str(self) -> &'static str {
        match self {
            BaselineMode::ZeroShot => "zero-shot",
            BaselineMode::ZeroShotSeg => "zero-shot-seg",
            BaselineMode::ZeroShotSegCtx => "zero-shot-seg-ctx",
            BaselineMode::Maps => "maps",
        }
    }
}

impl fmt::Display for BaselineMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BaselineMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [
            BaselineMode::ZeroShot,
            BaselineMode::ZeroShotSeg,
            BaselineMode::ZeroShotSegCtx,
            BaselineMode::Maps,
        ]
        .into_iter()
        .find(|m| m.as_str() == s)
        .ok_or_else(|| format!("unknown baseline mode '{s}'"))
    }
}

/// Selection setup for [`BaselineMode::Maps`].
pub struct MapsSetup<'a> {
    pub selector: &'a dyn Metric,
    pub mode: SelectorMode,
    pub demos: &'a MapsDemos,
}

pub fn translate_baseline(
    doc: &AssembledDocument,
    mode: BaselineMode,
    backend: &dyn ChatBackend,
    cfg: &PipelineConfig,
    maps: Option<&MapsSetup<'_>>,
) -> Result<SystemOutput, BaselineError> {
    let mut out = SystemOutput {
        doc_id: doc.id.clone(),
        mode: mode.to_string(),
        final_translation: String::new(),
        segment_translations: None,
        candidates: None,
    };
    match mode {
        BaselineMode::ZeroShot => out.final_translation = zero_shot_document(doc, backend, cfg)?,
        BaselineMode::ZeroShotSeg | BaselineMode::ZeroShotSegCtx => {
            let with_context = mode == BaselineMode::ZeroShotSegCtx;
            let per_segment = segments_of(doc)
                .iter()
                .map(|s| zero_shot_segment(s, backend, with_context, Some(doc), cfg))
                .collect::<Result<Vec<_>, _>>()?;
            out.final_translation = concat_segment_translations(&per_segment, doc)?;
            out.segment_translations = Some(per_segment);
        }
        BaselineMode::Maps => {
            let setup = maps.ok_or_else(|| BaselineError::MissingDemos(doc.lang_pair()))?;
            let set = maps_translate(doc, backend, setup.selector, setup.mode, setup.demos, cfg)?;
            out.final_translation = set.selected_translation().to_string();
            out.candidates = Some(set);
        }
    }
    Ok(out)
}

pub fn run_baseline_batch(
    docs: &[AssembledDocument],
    mode: BaselineMode,
    backend: &dyn ChatBackend,
    cfg: &PipelineConfig,
    maps: Option<&MapsSetup<'_>>,
    opts: &BatchOptions,
    mut manifest: RunManifest,
) -> BatchOutcome<SystemOutput> {
    let results = run_documents(docs, opts, |doc| {
        translate_baseline(doc, mode, backend, cfg, maps).map_err(|e| DocumentFailure {
            doc_id: doc.id.clone(),
            stage: Some(mode.to_string()),
            error: e.to_string(),
        })
    });
    if let Some(m) = maps {
        manifest.notes.push(format!(
            "MAPS templates are reconstructions; selector {} in {} mode",
            m.selector.descriptor().name,
            match m.mode {
                SelectorMode::Qe => "QE",
                SelectorMode::Reference => "reference",
            }
        ));
    }
    complete_manifest(&mut manifest, docs, cfg, backend.model_id(), &results, opts);
    BatchOutcome { results, manifest }
}

pub fn write_baseline_run(run: &RunDir, outcome: &BatchOutcome<SystemOutput>) -> Result<(), ReportError> {
    let outputs: Vec<&SystemOutput> = outcome.successes().collect();
    write_jsonl(&run.outputs_path(), &outputs)?;
    let failures: Vec<&DocumentFailure> = outcome.failures().collect();
    write_jsonl(&run.failures_path(), &failures)?;
    run.write_manifest(&outcome.manifest)
}
