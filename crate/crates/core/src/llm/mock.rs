//! Scripted in-process backend with a request log.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::{ChatBackend, ChatMessage, GenerationConfig, LlmError, Role};
use crate::digest::sha256_hex;

type Responder = Box<dyn Fn(&[ChatMessage]) -> Result<String, LlmError> + Send + Sync>;

/// Answers by looking up the digest of the last user message in a script,
/// falling back to an optional responder closure. Every request is logged.
pub struct MockBackend {
    model_id: String,
    script: HashMap<String, String>,
    fallback: Option<Responder>,
    log: Mutex<Vec<Vec<ChatMessage>>>,
    calls: AtomicUsize,
}

impl std::fmt::Debug for MockBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MockBackend")
            .field("model_id", &self.model_id)
            .field("scripted", &self.script.len())
            .field("calls", &self.request_count())
            .finish()
    }
}

pub fn prompt_hash(prompt: &str) -> String {
    sha256_hex(prompt.as_bytes())
}

impl MockBackend {
    pub fn new(model_id: impl Into<String>) -> Self {
        MockBackend {
            model_id: model_id.into(),
            script: HashMap::new(),
            fallback: None,
            log: Mutex::new(Vec::new()),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn with_script(mut self, prompt: &str, response: impl Into<String>) -> Self {
        self.script.insert(prompt_hash(prompt), response.into());
        self
    }

    pub fn with_fallback<F>(mut self, f: F) -> Self
    where
        F: Fn(&[ChatMessage]) -> Result<String, LlmError> + Send + Sync + 'static,
    {
        self.fallback = Some(Box::new(f));
        self
    }

    pub fn request_count(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    /// Every request received, in arrival order.
    pub fn requests(&self) -> Vec<Vec<ChatMessage>> {
        self.log.lock().expect("mock log poisoned").clone()
    }

    /// Last user message of every request, in arrival order.
    pub fn prompts(&self) -> Vec<String> {
        self.requests()
            .iter()
            .filter_map(|msgs| {
                msgs.iter()
                    .rev()
                    .find(|m| m.role == Role::User)
                    .map(|m| m.content.clone())
            })
            .collect()
    }
}

impl ChatBackend for MockBackend {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn complete(&self, messages: &[ChatMessage], _config: &GenerationConfig) -> Result<String, LlmError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.log
            .lock()
            .expect("mock log poisoned")
            .push(messages.to_vec());
        let prompt = messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
            .unwrap_or_default();
        if let Some(r) = self.script.get(&prompt_hash(prompt)) {
            return Ok(r.clone());
        }
        match &self.fallback {
            Some(f) => f(messages),
            None => Err(LlmError::BackendRefusal(format!(
                "mock has no script entry for prompt {}",
                &prompt_hash(prompt)[..12]
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{complete, Conversation};

    #[test]
    fn scripted_echo() {
        let backend = MockBackend::new("m").with_script("ping", "OK");
        let mut conv = Conversation::new("m", "d", "s");
        conv.messages.push(ChatMessage::user("ping"));
        assert_eq!(complete(&conv, &GenerationConfig::default(), &backend).unwrap(), "OK");
        conv.messages[0].content = "pong".into();
        assert!(matches!(
            complete(&conv, &GenerationConfig::default(), &backend),
            Err(LlmError::BackendRefusal(_))
        ));
        assert_eq!(backend.prompts(), ["ping", "pong"]);
    }
}
