//! Step-by-step translation: research, draft, refine, proofread.
//!
//! Research, drafting and refinement share one conversation so each stage
//! sees the model's earlier turns. Proofreading opens a fresh conversation
//! that embeds the source, draft and refined texts. When drafting is
//! disabled the current translation comes from the zero-shot baseline, and
//! a refinement stage continues that zero-shot exchange.

pub mod artifacts;
pub mod batch;
pub mod simulate;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{language_name, Config, ConfigError};
use crate::corpus::AssembledDocument;
use crate::llm::{continue_conversation, ChatBackend, Conversation, GenerationConfig, LlmError};
use crate::prompts::{bindings, Bindings, PromptError, TemplateId, TemplateRegistry};

pub use artifacts::{extract_artifacts, parse_artifacts, ArtifactError, IdiomEntry, ResearchArtifacts};
pub use batch::{run_batch, run_documents, BatchOptions, BatchOutcome, DocumentFailure};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Research,
    Draft,
    ZeroShot,
    Refine,
    Proofread,
    Extract,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Research => "research",
            Stage::Draft => "draft",
            Stage::ZeroShot => "zero_shot",
            Stage::Refine => "refine",
            Stage::Proofread => "proofread",
            Stage::Extract => "extract",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid stage set: {0}")]
    InvalidStageSet(String),
    #[error("{doc_id} [{stage}]: {source}")]
    Backend {
        doc_id: String,
        stage: Stage,
        #[source]
        source: LlmError,
    },
    #[error("{doc_id} [{stage}]: empty translation")]
    EmptyTranslation { doc_id: String, stage: Stage },
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

impl PipelineError {
    pub fn stage(&self) -> Option<Stage> {
        match self {
            PipelineError::Backend { stage, .. } | PipelineError::EmptyTranslation { stage, .. } => {
                Some(*stage)
            }
            _ => None,
        }
    }
}

/// Which stages run. Research requires drafting and proofreading requires
/// refinement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct StageSet {
    pub research: bool,
    pub draft: bool,
    pub refine: bool,
    pub proofread: bool,
}

impl StageSet {
    pub const ZERO_SHOT: StageSet = StageSet::raw(false, false, false, false);
    pub const ALL: StageSet = StageSet::raw(true, true, true, true);

    const fn raw(research: bool, draft: bool, refine: bool, proofread: bool) -> Self {
        StageSet {
            research,
            draft,
            refine,
            proofread,
        }
    }

    pub fn new(research: bool, draft: bool, refine: bool, proofread: bool) -> Result<Self, PipelineError> {
        let s = Self::raw(research, draft, refine, proofread);
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.research && !self.draft {
            return Err(PipelineError::InvalidStageSet("research requires draft".into()));
        }
        if self.proofread && !self.refine {
            return Err(PipelineError::InvalidStageSet("proofread requires refine".into()));
        }
        Ok(())
    }

    /// The seven ablation configurations in table order: zero-shot, draft,
    /// refine, draft+refine, research+draft, research+draft+refine, all.
    pub fn ablation_rows() -> [StageSet; 7] {
        [
            Self::raw(false, false, false, false),
            Self::raw(false, true, false, false),
            Self::raw(false, false, true, false),
            Self::raw(false, true, true, false),
            Self::raw(true, true, false, false),
            Self::raw(true, true, true, false),
            Self::raw(true, true, true, true),
        ]
    }

    /// Position in [`StageSet::ablation_rows`].
    pub fn ablation_index(&self) -> Option<usize> {
        Self::ablation_rows().iter().position(|s| s == self)
    }

    pub fn is_zero_shot(&self) -> bool {
        *self == Self::ZERO_SHOT
    }

    /// Template ids sent to the backend, in order, for a run whose
    /// extraction calls all parse on the first attempt.
    pub fn expected_templates(&self, extract: bool) -> Vec<TemplateId> {
        let mut out = Vec::new();
        if self.research {
            out.push(TemplateId::Research);
        }
        if self.draft {
            out.push(TemplateId::Drafting);
        } else {
            out.push(TemplateId::ZeroShot);
        }
        if self.research && extract {
            out.push(TemplateId::DraftJson);
        }
        if self.refine {
            out.push(TemplateId::Refinement);
        }
        if self.proofread {
            out.push(TemplateId::Proofreading);
        }
        out
    }

    pub fn label(&self) -> String {
        let names: Vec<&str> = [
            (self.research, "research"),
            (self.draft, "draft"),
            (self.refine, "refine"),
            (self.proofread, "proofread"),
        ]
        .into_iter()
        .filter_map(|(on, n)| on.then_some(n))
        .collect();
        if names.is_empty() {
            "none".into()
        } else {
            names.join(",")
        }
    }
}

impl fmt::Display for StageSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for StageSet {
    type Err = PipelineError;

    /// Comma-separated stage names; `none` or an empty string disables all.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut set = StageSet::default();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "research" => set.research = true,
                "draft" => set.draft = true,
                "refine" => set.refine = true,
                "proofread" => set.proofread = true,
                "none" => {}
                other => {
                    return Err(PipelineError::InvalidStageSet(format!("unknown stage '{other}'")))
                }
            }
        }
        set.validate()?;
        Ok(set)
    }
}

/// Everything a translation system needs besides the backend.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub generation: GenerationConfig,
    pub templates: TemplateRegistry,
    pub languages: BTreeMap<String, String>,
    pub extract_artifacts: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            generation: GenerationConfig::default(),
            templates: TemplateRegistry::default(),
            languages: BTreeMap::new(),
            extract_artifacts: true,
        }
    }
}

impl PipelineConfig {
    pub fn from_config(cfg: &Config) -> Result<Self, ConfigError> {
        Ok(PipelineConfig {
            generation: cfg.generation_config(),
            templates: cfg.template_registry()?,
            languages: cfg.languages.clone(),
            extract_artifacts: cfg.pipeline.extract_artifacts,
        })
    }

    /// `source_language`, `target_language` and `source_text` for `doc`.
    pub fn doc_bindings(&self, doc: &AssembledDocument) -> Result<Bindings, ConfigError> {
        let src = language_name(&self.languages, &doc.source_lang)?;
        let tgt = language_name(&self.languages, &doc.target_lang)?;
        Ok(bindings([
            ("source_language", src.as_str()),
            ("target_language", tgt.as_str()),
            ("source_text", doc.source_text.as_str()),
        ]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageOutputs {
    pub doc_id: String,
    pub stage_set: StageSet,
    pub research_response: Option<String>,
    pub artifacts: Option<ResearchArtifacts>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extraction_error: Option<String>,
    pub zero_shot: Option<String>,
    pub draft: Option<String>,
    pub refined: Option<String>,
    pub proofread: Option<String>,
    #[serde(rename = "final")]
    pub final_translation: String,
    #[serde(default)]
    pub conversations: Vec<Conversation>,
    /// Recoverable anomalies, e.g. `refine_empty_fallback`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
    /// Wall-clock seconds per stage. Kept out of serialized outputs so that
    /// replayed runs are byte-identical.
    #[serde(skip)]
    pub timings: BTreeMap<String, f64>,
}

/// Sends `user_text` and returns the reply. An empty completion is returned
/// as an empty string with the exchange still recorded, so that callers can
/// decide whether emptiness is fatal.
fn ask(
    conversation: &Conversation,
    user_text: &str,
    generation: &GenerationConfig,
    backend: &dyn ChatBackend,
) -> Result<(String, Conversation), LlmError> {
    match continue_conversation(conversation, user_text, generation, backend) {
        Err(LlmError::EmptyCompletion) => {
            let mut conv = conversation.clone();
            conv.messages.push(crate::llm::ChatMessage::user(user_text));
            conv.messages.push(crate::llm::ChatMessage::assistant(""));
            Ok((String::new(), conv))
        }
        other => other,
    }
}

struct Runner<'a> {
    doc: &'a AssembledDocument,
    backend: &'a dyn ChatBackend,
    cfg: &'a PipelineConfig,
    timings: BTreeMap<String, f64>,
}

impl Runner<'_> {
    fn stage(
        &mut self,
        stage: Stage,
        conversation: &Conversation,
        prompt: &str,
    ) -> Result<(String, Conversation), PipelineError> {
        let started = Instant::now();
        let r = ask(conversation, prompt, &self.cfg.generation, self.backend);
        self.timings
            .insert(stage.as_str().to_string(), started.elapsed().as_secs_f64());
        r.map_err(|source| PipelineError::Backend {
            doc_id: self.doc.id.clone(),
            stage,
            source,
        })
    }

    fn fresh(&self, stage: Stage) -> Conversation {
        Conversation::new(self.backend.model_id(), &self.doc.id, stage.as_str())
    }

    fn require_text(&self, stage: Stage, text: &str) -> Result<(), PipelineError> {
        if text.trim().is_empty() {
            return Err(PipelineError::EmptyTranslation {
                doc_id: self.doc.id.clone(),
                stage,
            });
        }
        Ok(())
    }
}

pub fn run_step_by_step(
    doc: &AssembledDocument,
    stage_set: StageSet,
    backend: &dyn ChatBackend,
    cfg: &PipelineConfig,
) -> Result<StageOutputs, PipelineError> {
    stage_set.validate()?;
    let b = cfg.doc_bindings(doc)?;
    let templates = &cfg.templates;
    let mut run = Runner {
        doc,
        backend,
        cfg,
        timings: BTreeMap::new(),
    };
    let mut out = StageOutputs {
        doc_id: doc.id.clone(),
        stage_set,
        research_response: None,
        artifacts: None,
        extraction_error: None,
        zero_shot: None,
        draft: None,
        refined: None,
        proofread: None,
        final_translation: String::new(),
        conversations: Vec::new(),
        flags: Vec::new(),
        timings: BTreeMap::new(),
    };

    let mut current: Option<Conversation> = None;
    if stage_set.research {
        let prompt = templates.render(TemplateId::Research, &b)?;
        let (reply, conv) = run.stage(Stage::Research, &run.fresh(Stage::Research), &prompt.text)?;
        out.research_response = Some(reply);
        current = Some(conv);
    }

    let translation: String;
    if stage_set.draft {
        let prompt = templates.render(TemplateId::Drafting, &b)?;
        let base = current.take().unwrap_or_else(|| run.fresh(Stage::Draft));
        let (reply, conv) = run.stage(Stage::Draft, &base, &prompt.text)?;
        run.require_text(Stage::Draft, &reply)?;
        out.draft = Some(reply.clone());
        translation = reply;
        current = Some(conv);
    } else {
        let prompt = templates.render(TemplateId::ZeroShot, &b)?;
        let (reply, conv) = run.stage(Stage::ZeroShot, &run.fresh(Stage::ZeroShot), &prompt.text)?;
        run.require_text(Stage::ZeroShot, &reply)?;
        out.zero_shot = Some(reply.clone());
        translation = reply;
        current = Some(conv);
    }

    let mut extraction_conv = None;
    if stage_set.research && cfg.extract_artifacts {
        let started = Instant::now();
        let conv = current.as_ref().expect("draft conversation");
        let extraction = extract_artifacts(conv, backend, &cfg.generation, templates);
        run.timings
            .insert(Stage::Extract.as_str().to_string(), started.elapsed().as_secs_f64());
        match extraction.result {
            Ok(a) => out.artifacts = Some(a),
            Err(e) => out.extraction_error = Some(e.to_string()),
        }
        if extraction.attempts > 1 {
            out.flags.push("extraction_retried".into());
        }
        extraction_conv = extraction.conversation;
    }

    let mut latest = translation;
    if stage_set.refine {
        let prompt = templates.render(TemplateId::Refinement, &b)?;
        let base = current.take().expect("a translation conversation exists");
        let (reply, conv) = run.stage(Stage::Refine, &base, &prompt.text)?;
        current = Some(conv);
        if reply.trim().is_empty() {
            out.flags.push("refine_empty_fallback".into());
            out.refined = Some(latest.clone());
        } else {
            out.refined = Some(reply.clone());
            latest = reply;
        }
    }

    out.conversations.extend(current.take());
    out.conversations.extend(extraction_conv);

    if stage_set.proofread {
        let draft_text = out
            .draft
            .clone()
            .or_else(|| out.zero_shot.clone())
            .expect("a first translation exists");
        let mut pb = b.clone();
        pb.insert("draft_translation".into(), draft_text);
        pb.insert("refined_translation".into(), latest.clone());
        let prompt = templates.render(TemplateId::Proofreading, &pb)?;
        let (reply, conv) = run.stage(Stage::Proofread, &run.fresh(Stage::Proofread), &prompt.text)?;
        out.conversations.push(conv);
        if reply.trim().is_empty() {
            out.flags.push("proofread_empty_fallback".into());
            out.proofread = Some(latest.clone());
        } else {
            out.proofread = Some(reply.clone());
            latest = reply;
        }
    }

    out.final_translation = latest;
    out.timings = run.timings;
    Ok(out)
}
