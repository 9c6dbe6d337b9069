//! Chat-completion backends and multi-turn conversations.
//!
//! A [`Conversation`] is an immutable-by-convention list of alternating
//! user/assistant turns. [`continue_conversation`] returns an extended copy
//! rather than mutating its input, so each pipeline stage can archive the
//! exact history it sent.
//!
//! Backends implement [`ChatBackend`]:
//!
//! * [`http::HttpChatBackend`] posts a minimal chat-completion JSON body
//! * [`mock::MockBackend`] answers from a script and logs every request
//! * [`cache::CachingBackend`] records completions to an append-only JSONL
//!   file; [`cache::ReplayBackend`] serves only from that file

pub mod cache;
pub mod http;
pub mod mock;
pub mod ratelimit;

use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::sha256_hex;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LlmError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("backend refused the request: {0}")]
    BackendRefusal(String),
    #[error("request timed out after {0:?}")]
    Timeout(Duration),
    #[error("backend returned an empty completion")]
    EmptyCompletion,
    #[error("no cached completion for request {0}")]
    ReplayMiss(String),
    #[error("invalid conversation: {0}")]
    Precondition(String),
    #[error("cache error: {0}")]
    Cache(String),
    #[error("backend configuration: {0}")]
    Config(String),
}

impl LlmError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, LlmError::Transport(_) | LlmError::Timeout(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Assistant,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::User => "user",
            Role::Assistant => "assistant",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

/// Which document and stage a conversation was opened for.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub doc_id: String,
    pub stage: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conversation {
    pub messages: Vec<ChatMessage>,
    pub model_id: String,
    pub created_for: Provenance,
}

impl Conversation {
    pub fn new(model_id: impl Into<String>, doc_id: &str, stage: &str) -> Self {
        Conversation {
            messages: Vec::new(),
            model_id: model_id.into(),
            created_for: Provenance {
                doc_id: doc_id.to_string(),
                stage: stage.to_string(),
            },
        }
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    pub fn roles(&self) -> Vec<Role> {
        self.messages.iter().map(|m| m.role).collect()
    }

    pub fn assistant_texts(&self) -> impl Iterator<Item = &str> {
        self.messages
            .iter()
            .filter(|m| m.role == Role::Assistant)
            .map(|m| m.content.as_str())
    }

    /// Roles alternate starting with user, and no message is empty.
    pub fn check_alternation(&self) -> Result<(), LlmError> {
        for (i, m) in self.messages.iter().enumerate() {
            let expected = if i % 2 == 0 { Role::User } else { Role::Assistant };
            if m.role != expected {
                return Err(LlmError::Precondition(format!(
                    "message {i} has role {} but {expected} was expected",
                    m.role
                )));
            }
            if m.content.is_empty() {
                return Err(LlmError::Precondition(format!("message {i} is empty")));
            }
        }
        Ok(())
    }

    /// Ready to be sent: alternation holds and the last turn is the user's.
    pub fn check_sendable(&self) -> Result<(), LlmError> {
        self.check_alternation()?;
        match self.messages.last() {
            Some(m) if m.role == Role::User => Ok(()),
            Some(_) => Err(LlmError::Precondition(
                "last message must be a user turn".into(),
            )),
            None => Err(LlmError::Precondition("conversation is empty".into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    /// 0 means greedy decoding.
    pub temperature: f64,
    pub max_output_tokens: u32,
    #[serde(with = "duration_secs")]
    pub timeout: Duration,
    pub retries: u32,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            temperature: 0.0,
            max_output_tokens: 4096,
            timeout: Duration::from_secs(120),
            retries: 3,
        }
    }
}

mod duration_secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let secs = f64::deserialize(d)?;
        Duration::try_from_secs_f64(secs).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    HttpChat,
    Mock,
    Replay,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub kind: BackendKind,
    #[serde(default)]
    pub endpoint: Option<String>,
    pub model_id: String,
    /// Name of the environment variable holding the API key.
    #[serde(default)]
    pub auth_env: Option<String>,
}

impl BackendDescriptor {
    pub fn validate(&self) -> Result<(), LlmError> {
        if self.kind == BackendKind::HttpChat && self.endpoint.is_none() {
            return Err(LlmError::Config("http_chat backend requires an endpoint".into()));
        }
        if self.model_id.is_empty() {
            return Err(LlmError::Config("model_id must not be empty".into()));
        }
        Ok(())
    }
}

/// A chat-completion provider. Implementations must be shareable across
/// worker threads.
pub trait ChatBackend: Send + Sync {
    fn model_id(&self) -> &str;

    /// Returns the assistant reply to `messages`, which end with a user turn.
    fn complete(&self, messages: &[ChatMessage], config: &GenerationConfig)
        -> Result<String, LlmError>;
}

impl<B: ChatBackend + ?Sized> ChatBackend for std::sync::Arc<B> {
    fn model_id(&self) -> &str {
        (**self).model_id()
    }

    fn complete(&self, messages: &[ChatMessage], config: &GenerationConfig) -> Result<String, LlmError> {
        (**self).complete(messages, config)
    }
}

impl<B: ChatBackend + ?Sized> ChatBackend for &B {
    fn model_id(&self) -> &str {
        (**self).model_id()
    }

    fn complete(&self, messages: &[ChatMessage], config: &GenerationConfig) -> Result<String, LlmError> {
        (**self).complete(messages, config)
    }
}

/// Sends `conversation` and returns the assistant text. The caller appends
/// it as the next turn.
pub fn complete(
    conversation: &Conversation,
    config: &GenerationConfig,
    backend: &dyn ChatBackend,
) -> Result<String, LlmError> {
    conversation.check_sendable()?;
    let text = backend.complete(&conversation.messages, config)?;
    if text.is_empty() {
        return Err(LlmError::EmptyCompletion);
    }
    Ok(text)
}

/// Appends `user_text`, completes, appends the reply. Returns the reply and
/// the extended conversation; `conversation` itself is untouched.
pub fn continue_conversation(
    conversation: &Conversation,
    user_text: &str,
    config: &GenerationConfig,
    backend: &dyn ChatBackend,
) -> Result<(String, Conversation), LlmError> {
    conversation.check_alternation()?;
    if let Some(last) = conversation.messages.last() {
        if last.role != Role::Assistant {
            return Err(LlmError::Precondition(
                "cannot continue a conversation that ends with a user turn".into(),
            ));
        }
    }
    let mut next = conversation.clone();
    next.messages.push(ChatMessage::user(user_text));
    let reply = complete(&next, config, backend)?;
    next.messages.push(ChatMessage::assistant(reply.clone()));
    Ok((reply, next))
}

#[derive(Serialize)]
struct CacheKeyInput<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
    max_tokens: u32,
}

/// Stable digest of everything that determines a greedy completion.
pub fn cache_key(model_id: &str, messages: &[ChatMessage], config: &GenerationConfig) -> String {
    let input = CacheKeyInput {
        model: model_id,
        messages,
        temperature: config.temperature,
        max_tokens: config.max_output_tokens,
    };
    sha256_hex(&serde_json::to_vec(&input).expect("cache key input serializes"))
}
