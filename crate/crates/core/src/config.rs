//! Run configuration, read from TOML.
//!
//! ```toml
//! [llm]
//! kind = "http_chat"            # http_chat | mock | replay
//! endpoint = "https://host/v1/chat/completions"
//! model_id = "some-model"
//! api_key_env = "LLM_API_KEY"
//! concurrency = 4
//! requests_per_minute = 30
//!
//! [generation]
//! temperature = 0.0
//! max_output_tokens = 4096
//! timeout_secs = 120
//! retries = 3
//!
//! [languages]                   # tag -> name, merged over the built-in table
//! he = "Hebrew"
//!
//! [pipeline]
//! extract_artifacts = true
//! revised_prompts = false
//! prompts_dir = "prompts/"      # optional per-template overrides
//! cap = 250
//!
//! [maps]
//! demos = "maps_demos.toml"
//! selector = "chrf-pseudo"      # or a path to a metric plugin file
//! selector_mode = "qe"          # qe | reference
//!
//! [stats]
//! n_resamples = 100000
//! alpha = 0.05
//! alternative = "two_sided"
//! seed = 17
//! ```
//!
//! Every section is optional. Unknown keys are rejected; errors name the
//! offending key path.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::DEFAULT_CAP;
use crate::llm::ratelimit::DEFAULT_REQUESTS_PER_MINUTE;
use crate::llm::{BackendDescriptor, BackendKind, GenerationConfig};
use crate::prompts::{PromptError, PromptVariant, TemplateRegistry};
use crate::stats::permutation::{Alternative, DEFAULT_RESAMPLES};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config key `{key}`: {message}")]
    Parse { key: String, message: String },
    #[error("config key `{key}`: {message}")]
    Invalid { key: String, message: String },
    #[error("no language name known for tag '{0}'; add it under [languages]")]
    UnknownLanguage(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

const BUILTIN_LANGUAGES: &[(&str, &str)] = &[
    ("ar", "Arabic"),
    ("bn", "Bengali"),
    ("cs", "Czech"),
    ("de", "German"),
    ("en", "English"),
    ("es", "Spanish"),
    ("fr", "French"),
    ("he", "Hebrew"),
    ("hi", "Hindi"),
    ("is", "Icelandic"),
    ("it", "Italian"),
    ("ja", "Japanese"),
    ("ko", "Korean"),
    ("nl", "Dutch"),
    ("pl", "Polish"),
    ("pt", "Portuguese"),
    ("ru", "Russian"),
    ("tr", "Turkish"),
    ("uk", "Ukrainian"),
    ("zh", "Chinese"),
];

/// English name for a language tag, consulting `overrides` before the
/// built-in table. Region suffixes (`es_MX`, `zh-TW`) fall back to the
/// primary subtag when the full tag is not listed.
pub fn language_name(overrides: &BTreeMap<String, String>, tag: &str) -> Result<String, ConfigError> {
    let primary = tag.split(['_', '-']).next().unwrap_or(tag);
    for t in [tag, primary] {
        if let Some(name) = overrides.get(t) {
            return Ok(name.clone());
        }
        if let Some((_, name)) = BUILTIN_LANGUAGES.iter().find(|(k, _)| *k == t) {
            return Ok(name.to_string());
        }
    }
    Err(ConfigError::UnknownLanguage(tag.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LlmSection {
    pub kind: BackendKind,
    pub endpoint: Option<String>,
    pub model_id: String,
    pub api_key_env: Option<String>,
    pub concurrency: usize,
    pub requests_per_minute: f64,
}

impl Default for LlmSection {
    fn default() -> Self {
        LlmSection {
            kind: BackendKind::Mock,
            endpoint: None,
            model_id: "mock".into(),
            api_key_env: None,
            concurrency: 4,
            requests_per_minute: DEFAULT_REQUESTS_PER_MINUTE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerationSection {
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub timeout_secs: f64,
    pub retries: u32,
}

impl Default for GenerationSection {
    fn default() -> Self {
        let g = GenerationConfig::default();
        GenerationSection {
            temperature: g.temperature,
            max_output_tokens: g.max_output_tokens,
            timeout_secs: g.timeout.as_secs_f64(),
            retries: g.retries,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineSection {
    pub extract_artifacts: bool,
    pub revised_prompts: bool,
    pub prompts_dir: Option<PathBuf>,
    pub cap: usize,
}

impl Default for PipelineSection {
    fn default() -> Self {
        PipelineSection {
            extract_artifacts: true,
            revised_prompts: false,
            prompts_dir: None,
            cap: DEFAULT_CAP,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectorMode {
    #[default]
    Qe,
    Reference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MapsSection {
    pub demos: Option<PathBuf>,
    pub selector: String,
    pub selector_mode: SelectorMode,
}

impl Default for MapsSection {
    fn default() -> Self {
        MapsSection {
            demos: None,
            selector: "chrf-pseudo".into(),
            selector_mode: SelectorMode::Qe,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StatsSection {
    pub n_resamples: u64,
    pub alpha: f64,
    pub alternative: Alternative,
    pub seed: u64,
}

impl Default for StatsSection {
    fn default() -> Self {
        StatsSection {
            n_resamples: DEFAULT_RESAMPLES,
            alpha: 0.05,
            alternative: Alternative::TwoSided,
            seed: 17,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub llm: LlmSection,
    pub generation: GenerationSection,
    pub languages: BTreeMap<String, String>,
    pub pipeline: PipelineSection,
    pub maps: MapsSection,
    pub stats: StatsSection,
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let de = toml::Deserializer::parse(text).map_err(|e| ConfigError::Parse {
            key: String::new(),
            message: e.message().to_string(),
        })?;
        let cfg: Config = serde_path_to_error::deserialize(de).map_err(|e| ConfigError::Parse {
            key: e.path().to_string(),
            message: e.inner().message().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg = Self::from_toml_str(&text)?;
        // Relative paths inside the file are relative to the file.
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.pipeline.prompts_dir, &mut cfg.maps.demos].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |key: &str, message: &str| {
            Err(ConfigError::Invalid {
                key: key.to_string(),
                message: message.to_string(),
            })
        };
        if self.llm.kind == BackendKind::HttpChat && self.llm.endpoint.is_none() {
            return invalid("llm.endpoint", "required when kind = \"http_chat\"");
        }
        if self.llm.model_id.is_empty() {
            return invalid("llm.model_id", "must not be empty");
        }
        if self.llm.concurrency == 0 {
            return invalid("llm.concurrency", "must be at least 1");
        }
        let rpm = self.llm.requests_per_minute;
        if rpm.is_nan() || rpm < 0.0 {
            return invalid("llm.requests_per_minute", "must be non-negative");
        }
        let temperature = self.generation.temperature;
        if temperature.is_nan() || temperature < 0.0 {
            return invalid("generation.temperature", "must be non-negative");
        }
        if !(self.generation.timeout_secs > 0.0 && self.generation.timeout_secs.is_finite()) {
            return invalid("generation.timeout_secs", "must be positive");
        }
        if self.pipeline.cap == 0 {
            return invalid("pipeline.cap", "must be at least 1");
        }
        if !(self.stats.alpha > 0.0 && self.stats.alpha < 1.0) {
            return invalid("stats.alpha", "must be in (0, 1)");
        }
        if self.stats.n_resamples == 0 {
            return invalid("stats.n_resamples", "must be positive");
        }
        for (tag, name) in &self.languages {
            if name.trim().is_empty() {
                return invalid(&format!("languages.{tag}"), "must not be empty");
            }
        }
        Ok(())
    }

    pub fn language_name(&self, tag: &str) -> Result<String, ConfigError> {
        language_name(&self.languages, tag)
    }

    pub fn generation_config(&self) -> GenerationConfig {
        GenerationConfig {
            temperature: self.generation.temperature,
            max_output_tokens: self.generation.max_output_tokens,
            timeout: Duration::from_secs_f64(self.generation.timeout_secs),
            retries: self.generation.retries,
        }
    }

    pub fn backend_descriptor(&self) -> BackendDescriptor {
        BackendDescriptor {
            kind: self.llm.kind,
            endpoint: self.llm.endpoint.clone(),
            model_id: self.llm.model_id.clone(),
            auth_env: self.llm.api_key_env.clone(),
        }
    }

    pub fn prompt_variant(&self) -> PromptVariant {
        if self.pipeline.revised_prompts {
            PromptVariant::Revised
        } else {
            PromptVariant::Verbatim
        }
    }

    pub fn template_registry(&self) -> Result<TemplateRegistry, ConfigError> {
        Ok(match &self.pipeline.prompts_dir {
            Some(dir) => TemplateRegistry::with_overrides(self.prompt_variant(), dir)?,
            None => TemplateRegistry::builtin(self.prompt_variant()),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_is_default() {
        assert_eq!(Config::from_toml_str("").unwrap(), Config::default());
    }

    #[test]
    fn unknown_key_names_its_path() {
        let err = Config::from_toml_str("[llm]\nmodel = \"x\"\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("llm"), "{msg}");
        assert!(msg.contains("model"), "{msg}");
    }

    #[test]
    fn bad_variant_names_its_path() {
        let err = Config::from_toml_str("[stats]\nalternative = \"sideways\"\n").unwrap_err();
        assert!(err.to_string().contains("stats.alternative"), "{err}");
    }

    #[test]
    fn semantic_validation() {
        let err = Config::from_toml_str("[llm]\nkind = \"http_chat\"\nmodel_id = \"m\"\n").unwrap_err();
        assert!(err.to_string().contains("llm.endpoint"), "{err}");
        let err = Config::from_toml_str("[stats]\nalpha = 1.5\n").unwrap_err();
        assert!(err.to_string().contains("stats.alpha"), "{err}");
    }

    #[test]
    fn language_names() {
        let cfg = Config::from_toml_str("[languages]\nzh = \"Mandarin\"\nsw = \"Swahili\"\n").unwrap();
        assert_eq!(cfg.language_name("zh").unwrap(), "Mandarin");
        assert_eq!(cfg.language_name("sw").unwrap(), "Swahili");
        assert_eq!(cfg.language_name("de").unwrap(), "German");
        assert_eq!(cfg.language_name("es_MX").unwrap(), "Spanish");
        assert!(matches!(cfg.language_name("xx"), Err(ConfigError::UnknownLanguage(_))));
    }

    #[test]
    fn generation_maps_through() {
        let cfg = Config::from_toml_str("[generation]\ntimeout_secs = 5\nmax_output_tokens = 100\n").unwrap();
        let g = cfg.generation_config();
        assert_eq!(g.timeout, Duration::from_secs(5));
        assert_eq!(g.max_output_tokens, 100);
        assert_eq!(g.temperature, 0.0);
    }
}
