//! Structured research artifacts.
//!
//! The research and draft replies are free text. A secondary completion,
//! sent in a fresh conversation, restates them as JSON with the draft-json
//! prompt. The reply is parsed leniently: code fences are stripped, the
//! first `/`-separated alternative of the draft is kept, and explicit nulls
//! are preserved as absent values. A reply that does not parse is re-asked
//! once; a second failure is recorded and the pipeline continues without
//! artifacts.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::llm::{continue_conversation, ChatBackend, Conversation, GenerationConfig};
use crate::prompts::{Bindings, TemplateId, TemplateRegistry};

/// Follow-up sent when the first extraction reply does not parse.
pub const REASK_PROMPT: &str =
    "The previous reply could not be parsed as JSON. Reply with only the JSON object.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdiomEntry {
    pub source_phrase: String,
    pub description: String,
    pub translations: Vec<String>,
    pub literal_translation: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResearchArtifacts {
    pub idiomatic_expressions: Option<Vec<IdiomEntry>>,
    pub draft_translation: String,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ArtifactError {
    #[error("could not parse extraction reply: {raw}")]
    ParseFailure { raw: String },
    #[error("extraction call failed: {0}")]
    Backend(String),
    #[error("no research or draft responses to extract from")]
    NoResponses,
}

#[derive(Debug, Clone)]
pub struct Extraction {
    pub result: Result<ResearchArtifacts, ArtifactError>,
    /// The extraction exchange, when a call was made.
    pub conversation: Option<Conversation>,
    /// Number of completions requested (1, or 2 after a re-ask).
    pub attempts: u32,
}

/// Returns the JSON payload of `raw`: the body of the first fenced block if
/// there is one, otherwise the text from the first `{` to the last `}`.
fn strip_fences(raw: &str) -> &str {
    if let Some(open) = raw.find("```") {
        let after = &raw[open + 3..];
        let body_start = after.find('\n').map(|i| i + 1).unwrap_or(after.len());
        let body = &after[body_start..];
        let end = body.find("```").unwrap_or(body.len());
        return body[..end].trim();
    }
    match (raw.find('{'), raw.rfind('}')) {
        (Some(a), Some(b)) if a < b => &raw[a..=b],
        _ => raw.trim(),
    }
}

/// First of any `/`-separated alternatives, trimmed.
pub fn first_alternative(text: &str) -> &str {
    text.split('/').next().unwrap_or(text).trim()
}

fn string_or_null(v: Option<&Value>, field: &str) -> Result<Option<String>, String> {
    match v {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => Ok(Some(s.clone())),
        Some(other) => Err(format!("{field} must be a string or null, got {other}")),
    }
}

fn parse_entry(v: &Value) -> Result<IdiomEntry, String> {
    let obj = v.as_object().ok_or("idiomatic expression entry must be an object")?;
    let source_phrase = string_or_null(obj.get("source_phrase"), "source_phrase")?
        .ok_or("entry without source_phrase")?;
    let description = string_or_null(obj.get("description"), "description")?.unwrap_or_default();
    let translations = match obj.get("translation").or_else(|| obj.get("translations")) {
        None | Some(Value::Null) => Vec::new(),
        Some(Value::String(s)) => vec![s.clone()],
        Some(Value::Array(items)) => items
            .iter()
            .map(|i| match i {
                Value::String(s) => Ok(s.clone()),
                other => Err(format!("translation items must be strings, got {other}")),
            })
            .collect::<Result<_, _>>()?,
        Some(other) => return Err(format!("translation must be a list, got {other}")),
    };
    let literal_translation = string_or_null(obj.get("literal_translation"), "literal_translation")?;
    Ok(IdiomEntry {
        source_phrase,
        description,
        translations,
        literal_translation,
    })
}

/// Parses an extraction reply.
pub fn parse_artifacts(raw: &str) -> Result<ResearchArtifacts, ArtifactError> {
    let fail = || ArtifactError::ParseFailure { raw: raw.to_string() };
    let value: Value = serde_json::from_str(strip_fences(raw)).map_err(|_| fail())?;
    let obj = value.as_object().ok_or_else(fail)?;
    let draft = match obj.get("draft_translation") {
        Some(Value::String(s)) => first_alternative(s).to_string(),
        _ => return Err(fail()),
    };
    let idioms = match obj.get("idiomatic_expressions") {
        None | Some(Value::Null) => None,
        Some(Value::Array(items)) => Some(
            items
                .iter()
                .map(parse_entry)
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| fail())?,
        ),
        Some(_) => return Err(fail()),
    };
    Ok(ResearchArtifacts {
        idiomatic_expressions: idioms,
        draft_translation: draft,
    })
}

/// Labeled transcript of the assistant turns in `conversation`, followed by
/// the draft-json prompt.
pub fn extraction_prompt(conversation: &Conversation, templates: &TemplateRegistry) -> Option<String> {
    let labels = ["research", "draft"];
    let replies: Vec<&str> = conversation.assistant_texts().collect();
    if replies.is_empty() {
        return None;
    }
    let mut text = String::new();
    for (i, reply) in replies.iter().enumerate() {
        let label = labels.get(i).copied().unwrap_or("response");
        text.push_str(&format!("Response {} ({label}):\n{reply}\n\n", i + 1));
    }
    let prompt = templates
        .render(TemplateId::DraftJson, &Bindings::new())
        .expect("draft_json has no placeholders");
    text.push_str(&prompt.text);
    Some(text)
}

pub fn extract_artifacts(
    conversation: &Conversation,
    backend: &dyn ChatBackend,
    generation: &GenerationConfig,
    templates: &TemplateRegistry,
) -> Extraction {
    let Some(prompt) = extraction_prompt(conversation, templates) else {
        return Extraction {
            result: Err(ArtifactError::NoResponses),
            conversation: None,
            attempts: 0,
        };
    };
    let fresh = Conversation::new(
        backend.model_id(),
        &conversation.created_for.doc_id,
        "extract",
    );
    let (reply, conv) = match continue_conversation(&fresh, &prompt, generation, backend) {
        Ok(r) => r,
        Err(e) => {
            return Extraction {
                result: Err(ArtifactError::Backend(e.to_string())),
                conversation: None,
                attempts: 1,
            }
        }
    };
    if let Ok(a) = parse_artifacts(&reply) {
        return Extraction {
            result: Ok(a),
            conversation: Some(conv),
            attempts: 1,
        };
    }
    match continue_conversation(&conv, REASK_PROMPT, generation, backend) {
        Ok((retry, conv)) => Extraction {
            result: parse_artifacts(&retry),
            conversation: Some(conv),
            attempts: 2,
        },
        Err(e) => Extraction {
            result: Err(ArtifactError::Backend(e.to_string())),
            conversation: Some(conv),
            attempts: 2,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_alternative_taken() {
        let a = parse_artifacts(r#"{"idiomatic_expressions": [], "draft_translation": "甲/乙"}"#).unwrap();
        assert_eq!(a.draft_translation, "甲");
        assert_eq!(a.idiomatic_expressions, Some(vec![]));
    }

    #[test]
    fn nulls_honored() {
        let a = parse_artifacts(r#"{"idiomatic_expressions": null, "draft_translation": "x"}"#).unwrap();
        assert_eq!(a.idiomatic_expressions, None);
        let b = parse_artifacts(
            r#"{"idiomatic_expressions": [{"source_phrase": "p", "description": "d", "translation": null, "literal_translation": null}], "draft_translation": "x"}"#,
        )
        .unwrap();
        let e = &b.idiomatic_expressions.unwrap()[0];
        assert!(e.translations.is_empty());
        assert_eq!(e.literal_translation, None);
    }

    #[test]
    fn fences_stripped() {
        let plain = r#"{"idiomatic_expressions": null, "draft_translation": "x"}"#;
        let fenced = format!("Here it is:\n```json\n{plain}\n```\nDone.");
        assert_eq!(parse_artifacts(&fenced).unwrap(), parse_artifacts(plain).unwrap());
    }

    #[test]
    fn malformed_is_parse_failure() {
        let err = parse_artifacts("no json here").unwrap_err();
        assert_eq!(err, ArtifactError::ParseFailure { raw: "no json here".into() });
        assert!(parse_artifacts(r#"{"draft_translation": null}"#).is_err());
    }
}
