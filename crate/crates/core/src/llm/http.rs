//! HTTP chat-completion backend.
//!
//! The request body is the minimal schema
//! `{model, messages: [{role, content}], temperature, max_tokens}`; a
//! [`ChatAdapter`] maps it onto a provider's wire format and extracts the
//! reply. Transport failures, timeouts, 429 and 5xx responses are retried
//! with exponential backoff; other 4xx responses are refusals.

use std::time::Duration;

use serde_json::{json, Value};
use ureq::Agent;

use super::ratelimit::TokenBucket;
use super::{BackendDescriptor, BackendKind, ChatBackend, ChatMessage, GenerationConfig, LlmError};

pub trait ChatAdapter: Send + Sync {
    fn request_body(&self, model_id: &str, messages: &[ChatMessage], config: &GenerationConfig) -> Value;
    fn reply_text(&self, body: &Value) -> Option<String>;
}

/// OpenAI-style `/chat/completions`: reply at `choices[0].message.content`.
#[derive(Debug, Clone, Copy, Default)]
pub struct OpenAiCompatible;

impl ChatAdapter for OpenAiCompatible {
    fn request_body(&self, model_id: &str, messages: &[ChatMessage], config: &GenerationConfig) -> Value {
        json!({
            "model": model_id,
            "messages": messages,
            "temperature": config.temperature,
            "max_tokens": config.max_output_tokens,
        })
    }

    fn reply_text(&self, body: &Value) -> Option<String> {
        body.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
    }
}

pub struct HttpChatBackend {
    endpoint: String,
    model_id: String,
    api_key: Option<String>,
    adapter: Box<dyn ChatAdapter>,
    limiter: TokenBucket,
    base_backoff: Duration,
}

impl HttpChatBackend {
    /// Builds a backend from a descriptor, reading the API key from the
    /// environment variable it names (if any).
    pub fn from_descriptor(desc: &BackendDescriptor, requests_per_minute: f64) -> Result<Self, LlmError> {
        desc.validate()?;
        if desc.kind != BackendKind::HttpChat {
            return Err(LlmError::Config(format!("{:?} is not an http_chat descriptor", desc.kind)));
        }
        let api_key = match &desc.auth_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                LlmError::Config(format!("environment variable {var} is not set"))
            })?),
            None => None,
        };
        Ok(HttpChatBackend {
            endpoint: desc.endpoint.clone().expect("validated"),
            model_id: desc.model_id.clone(),
            api_key,
            adapter: Box::new(OpenAiCompatible),
            limiter: TokenBucket::new(requests_per_minute, 1),
            base_backoff: Duration::from_millis(500),
        })
    }

    pub fn with_adapter(mut self, adapter: impl ChatAdapter + 'static) -> Self {
        self.adapter = Box::new(adapter);
        self
    }

    pub fn with_base_backoff(mut self, d: Duration) -> Self {
        self.base_backoff = d;
        self
    }

    fn attempt(&self, agent: &Agent, body: &Value, timeout: Duration) -> Result<String, LlmError> {
        let mut req = agent.post(&self.endpoint).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(body).map_err(|e| match e {
            ureq::Error::Timeout(_) => LlmError::Timeout(timeout),
            other => LlmError::Transport(other.to_string()),
        })?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        match status {
            200..=299 => {}
            429 | 500..=599 => return Err(LlmError::Transport(format!("HTTP {status}: {text}"))),
            _ => return Err(LlmError::BackendRefusal(format!("HTTP {status}: {text}"))),
        }
        let json: Value = serde_json::from_str(&text)
            .map_err(|e| LlmError::Transport(format!("invalid JSON reply: {e}")))?;
        let reply = self
            .adapter
            .reply_text(&json)
            .ok_or_else(|| LlmError::BackendRefusal(format!("reply has no message content: {text}")))?;
        if reply.is_empty() {
            return Err(LlmError::EmptyCompletion);
        }
        Ok(reply)
    }
}

impl ChatBackend for HttpChatBackend {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn complete(&self, messages: &[ChatMessage], config: &GenerationConfig) -> Result<String, LlmError> {
        let agent: Agent = Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let body = self.adapter.request_body(&self.model_id, messages, config);
        let mut attempt = 0;
        loop {
            self.limiter.acquire();
            match self.attempt(&agent, &body, config.timeout) {
                Err(e) if e.is_retryable() && attempt < config.retries => {
                    std::thread::sleep(self.base_backoff * 2u32.saturating_pow(attempt));
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}
