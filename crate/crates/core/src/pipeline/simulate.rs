//! A deterministic stand-in translator for offline runs and tests.
//!
//! Requests are recognized by matching the last user message against the
//! template registry. Translation requests answer with the known reference
//! for the source text (or the source itself), with a stage-specific share
//! of words dropped, so later stages score higher than earlier ones.
//! Nothing here resembles a real model; it only exercises the plumbing.

use std::collections::HashMap;
use std::sync::Arc;

use serde_json::json;

use crate::llm::mock::MockBackend;
use crate::llm::{ChatMessage, LlmError, Role};
use crate::prompts::{TemplateId, TemplateRegistry};

/// Removes every `k`-th whitespace token (1-based).
fn drop_every(text: &str, k: usize) -> String {
    text.split_whitespace()
        .enumerate()
        .filter(|(i, _)| (i + 1) % k != 0)
        .map(|(_, w)| w)
        .collect::<Vec<_>>()
        .join(" ")
}

struct Simulator {
    templates: TemplateRegistry,
    references: HashMap<String, String>,
}

impl Simulator {
    fn target_for(&self, source: &str) -> String {
        self.references
            .get(source)
            .cloned()
            .unwrap_or_else(|| source.to_string())
    }

    /// Source text of the first templated user turn in the conversation.
    fn conversation_source(&self, messages: &[ChatMessage]) -> Option<String> {
        messages
            .iter()
            .filter(|m| m.role == Role::User)
            .find_map(|m| self.templates.identify_with_bindings(&m.content))
            .and_then(|(_, b)| b.get("source_text").cloned())
    }

    fn respond(&self, messages: &[ChatMessage]) -> Result<String, LlmError> {
        let last = messages
            .last()
            .ok_or_else(|| LlmError::Precondition("empty request".into()))?;
        let Some((id, b)) = self.templates.identify_with_bindings(&last.content) else {
            // A re-ask after a malformed extraction: answer with the
            // previous assistant text unchanged.
            return messages
                .iter()
                .rev()
                .find(|m| m.role == Role::Assistant)
                .map(|m| m.content.clone())
                .ok_or_else(|| LlmError::BackendRefusal("unrecognized prompt".into()));
        };
        let source = b.get("source_text").cloned().unwrap_or_default();
        let reply = match id {
            TemplateId::Research => "Idiomatic Expressions:\n* none identified".to_string(),
            TemplateId::ZeroShot | TemplateId::ZeroShotInContext => {
                drop_every(&self.target_for(&source), 7)
            }
            TemplateId::Drafting => drop_every(&self.target_for(&source), 11),
            TemplateId::Refinement => {
                let src = self.conversation_source(messages).unwrap_or_default();
                drop_every(&self.target_for(&src), 19)
            }
            TemplateId::Proofreading => b.get("refined_translation").cloned().unwrap_or_default(),
            TemplateId::DraftJson => {
                let draft = last
                    .content
                    .rsplit_once("Response 2 (draft):\n")
                    .and_then(|(_, rest)| rest.split_once("\n\n"))
                    .map(|(d, _)| d.to_string())
                    .unwrap_or_default();
                json!({"idiomatic_expressions": null, "draft_translation": draft}).to_string()
            }
            TemplateId::MapsKeywords => "keyword = keyword".to_string(),
            TemplateId::MapsTopic => "general".to_string(),
            TemplateId::MapsDemo => "example = example".to_string(),
            TemplateId::MapsCandidate => {
                let k = match b.get("knowledge_label").map(String::as_str) {
                    Some("Keyword Pairs") => 5,
                    Some("Topics") => 9,
                    _ => 13,
                };
                drop_every(&self.target_for(&source), k)
            }
        };
        Ok(if reply.is_empty() { source } else { reply })
    }
}

/// Builds the simulated backend. `references` maps source texts to their
/// target-side references.
pub fn simulated_backend(
    model_id: &str,
    templates: TemplateRegistry,
    references: HashMap<String, String>,
) -> MockBackend {
    let sim = Arc::new(Simulator {
        templates,
        references,
    });
    MockBackend::new(model_id).with_fallback(move |messages| sim.respond(messages))
}
