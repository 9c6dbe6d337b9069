//! Prompt templates and rendering.
//!
//! Templates are plain text with `{{name}}` placeholders. The built-in set is
//! compiled in from `prompts/*.txt`; a directory of overrides can replace any
//! subset at load time. Rendering is single-pass named substitution: values
//! are inserted verbatim and never re-scanned.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::{sha256_fields, sha256_hex};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("missing placeholder binding '{0}'")]
    MissingPlaceholder(String),
    #[error("unknown template '{0}'")]
    UnknownTemplate(String),
    #[error("cannot read template {path}: {reason}")]
    Io { path: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    Research,
    Drafting,
    Refinement,
    Proofreading,
    ZeroShot,
    ZeroShotInContext,
    DraftJson,
    MapsKeywords,
    MapsTopic,
    MapsDemo,
    MapsCandidate,
}

impl TemplateId {
    pub const ALL: [TemplateId; 11] = [
        TemplateId::Research,
        TemplateId::Drafting,
        TemplateId::Refinement,
        TemplateId::Proofreading,
        TemplateId::ZeroShot,
        TemplateId::ZeroShotInContext,
        TemplateId::DraftJson,
        TemplateId::MapsKeywords,
        TemplateId::MapsTopic,
        TemplateId::MapsDemo,
        TemplateId::MapsCandidate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::Research => "research",
            TemplateId::Drafting => "drafting",
            TemplateId::Refinement => "refinement",
            TemplateId::Proofreading => "proofreading",
            TemplateId::ZeroShot => "zero_shot",
            TemplateId::ZeroShotInContext => "zero_shot_in_context",
            TemplateId::DraftJson => "draft_json",
            TemplateId::MapsKeywords => "maps_keywords",
            TemplateId::MapsTopic => "maps_topic",
            TemplateId::MapsDemo => "maps_demo",
            TemplateId::MapsCandidate => "maps_candidate",
        }
    }

    pub fn file_name(self) -> String {
        format!("{}.txt", self.as_str())
    }

    /// MAPS templates are reconstructions rather than published wording.
    pub fn is_reconstruction(self) -> bool {
        matches!(
            self,
            TemplateId::MapsKeywords
                | TemplateId::MapsTopic
                | TemplateId::MapsDemo
                | TemplateId::MapsCandidate
        )
    }

    fn builtin_body(self) -> &'static str {
        match self {
            TemplateId::Research => include_str!("../prompts/research.txt"),
            TemplateId::Drafting => include_str!("../prompts/drafting.txt"),
            TemplateId::Refinement => include_str!("../prompts/refinement.txt"),
            TemplateId::Proofreading => include_str!("../prompts/proofreading.txt"),
            TemplateId::ZeroShot => include_str!("../prompts/zero_shot.txt"),
            TemplateId::ZeroShotInContext => include_str!("../prompts/zero_shot_in_context.txt"),
            TemplateId::DraftJson => include_str!("../prompts/draft_json.txt"),
            TemplateId::MapsKeywords => include_str!("../prompts/maps_keywords.txt"),
            TemplateId::MapsTopic => include_str!("../prompts/maps_topic.txt"),
            TemplateId::MapsDemo => include_str!("../prompts/maps_demo.txt"),
            TemplateId::MapsCandidate => include_str!("../prompts/maps_candidate.txt"),
        }
    }

    fn revised_body(self) -> Option<&'static str> {
        match self {
            TemplateId::Research => Some(include_str!("../prompts/revised/research.txt")),
            TemplateId::Proofreading => Some(include_str!("../prompts/revised/proofreading.txt")),
            TemplateId::ZeroShotInContext => {
                Some(include_str!("../prompts/revised/zero_shot_in_context.txt"))
            }
            _ => None,
        }
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TemplateId {
    type Err = PromptError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TemplateId::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| PromptError::UnknownTemplate(s.to_string()))
    }
}

pub type Bindings = BTreeMap<String, String>;

/// Builds a [`Bindings`] map from string pairs.
pub fn bindings<'a, I>(pairs: I) -> Bindings
where
    I: IntoIterator<Item = (&'a str, &'a str)>,
{
    pairs
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

pub fn bindings_digest(b: &Bindings) -> String {
    sha256_fields(b.iter().flat_map(|(k, v)| [k.as_bytes(), v.as_bytes()]))
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Part {
    Literal(String),
    Placeholder(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    id: TemplateId,
    body: String,
    parts: Vec<Part>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub template_id: TemplateId,
    pub text: String,
    pub bindings_digest: String,
}

fn is_name_char(c: char) -> bool {
    c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_'
}

fn split_parts(body: &str) -> Vec<Part> {
    let mut parts = Vec::new();
    let mut literal = String::new();
    let mut rest = body;
    while let Some(open) = rest.find("{{") {
        let after = &rest[open + 2..];
        let name_len = after.find(|c: char| !is_name_char(c)).unwrap_or(after.len());
        if name_len > 0 && after[name_len..].starts_with("}}") {
            literal.push_str(&rest[..open]);
            if !literal.is_empty() {
                parts.push(Part::Literal(std::mem::take(&mut literal)));
            }
            parts.push(Part::Placeholder(after[..name_len].to_string()));
            rest = &after[name_len + 2..];
        } else {
            literal.push_str(&rest[..open + 2]);
            rest = after;
        }
    }
    literal.push_str(rest);
    if !literal.is_empty() {
        parts.push(Part::Literal(literal));
    }
    parts
}

impl PromptTemplate {
    /// Builds a template from a file body; one trailing newline is dropped.
    pub fn new(id: TemplateId, body: &str) -> Self {
        let body = body
            .strip_suffix("\r\n")
            .or_else(|| body.strip_suffix('\n'))
            .unwrap_or(body)
            .to_string();
        let parts = split_parts(&body);
        PromptTemplate { id, body, parts }
    }

    pub fn id(&self) -> TemplateId {
        self.id
    }

    pub fn body(&self) -> &str {
        &self.body
    }

    pub fn required_placeholders(&self) -> BTreeSet<&str> {
        self.parts
            .iter()
            .filter_map(|p| match p {
                Part::Placeholder(n) => Some(n.as_str()),
                Part::Literal(_) => None,
            })
            .collect()
    }

    pub fn digest(&self) -> String {
        sha256_hex(self.body.as_bytes())
    }

    pub fn render(&self, b: &Bindings) -> Result<RenderedPrompt, PromptError> {
        let mut text = String::with_capacity(self.body.len());
        for part in &self.parts {
            match part {
                Part::Literal(s) => text.push_str(s),
                Part::Placeholder(name) => match b.get(name) {
                    Some(v) => text.push_str(v),
                    None => return Err(PromptError::MissingPlaceholder(name.clone())),
                },
            }
        }
        Ok(RenderedPrompt {
            template_id: self.id,
            text,
            bindings_digest: bindings_digest(b),
        })
    }

    /// Recovers the bindings that would render to `text`, if any.
    ///
    /// Placeholders capture lazily up to the next literal, backtracking when
    /// a later part fails (source texts may contain template literals such
    /// as newlines). A repeated placeholder must capture the same value.
    /// With `allow_prefix`, arbitrary text may precede the first literal.
    pub fn match_rendered(&self, text: &str, allow_prefix: bool) -> Option<Bindings> {
        let mut out = Bindings::new();
        self.match_from(text, 0, 0, allow_prefix, &mut out).then_some(out)
    }

    fn match_from(&self, text: &str, i: usize, pos: usize, allow_prefix: bool, out: &mut Bindings) -> bool {
        let Some(part) = self.parts.get(i) else {
            return pos == text.len();
        };
        match part {
            Part::Literal(lit) if i == 0 && allow_prefix => {
                occurrences(text, lit).any(|at| self.match_from(text, 1, at + lit.len(), allow_prefix, out))
            }
            Part::Literal(lit) => {
                text[pos..].starts_with(lit.as_str()) && self.match_from(text, i + 1, pos + lit.len(), allow_prefix, out)
            }
            Part::Placeholder(name) => {
                if let Some(prev) = out.get(name).cloned() {
                    return text[pos..].starts_with(prev.as_str())
                        && self.match_from(text, i + 1, pos + prev.len(), allow_prefix, out);
                }
                let ends: Vec<usize> = match self.parts.get(i + 1) {
                    None => vec![text.len()],
                    Some(Part::Placeholder(_)) => return false,
                    Some(Part::Literal(lit)) => occurrences(&text[pos..], lit).map(|at| pos + at).collect(),
                };
                for end in ends {
                    out.insert(name.clone(), text[pos..end].to_string());
                    if self.match_from(text, i + 1, end, allow_prefix, out) {
                        return true;
                    }
                }
                out.remove(name);
                false
            }
        }
    }

    fn literal_len(&self) -> usize {
        self.parts
            .iter()
            .map(|p| match p {
                Part::Literal(s) => s.len(),
                Part::Placeholder(_) => 0,
            })
            .sum()
    }
}

/// Start offsets of `needle` in `hay`, overlapping matches included.
fn occurrences<'a>(hay: &'a str, needle: &'a str) -> impl Iterator<Item = usize> + 'a {
    let mut from = 0;
    std::iter::from_fn(move || {
        let at = from + hay.get(from..)?.find(needle)?;
        from = at + hay[at..].chars().next().map_or(1, char::len_utf8);
        Some(at)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptVariant {
    #[default]
    Verbatim,
    Revised,
}

#[derive(Debug, Clone)]
pub struct TemplateRegistry {
    templates: BTreeMap<TemplateId, PromptTemplate>,
    variant: PromptVariant,
}

impl Default for TemplateRegistry {
    fn default() -> Self {
        Self::builtin(PromptVariant::Verbatim)
    }
}

impl TemplateRegistry {
    pub fn builtin(variant: PromptVariant) -> Self {
        let templates = TemplateId::ALL
            .into_iter()
            .map(|id| {
                let body = match variant {
                    PromptVariant::Revised => id.revised_body().unwrap_or(id.builtin_body()),
                    PromptVariant::Verbatim => id.builtin_body(),
                };
                (id, PromptTemplate::new(id, body))
            })
            .collect();
        TemplateRegistry { templates, variant }
    }

    /// Built-in templates with any `<id>.txt` found in `dir` replacing the
    /// corresponding default.
    pub fn with_overrides(variant: PromptVariant, dir: &Path) -> Result<Self, PromptError> {
        let mut reg = Self::builtin(variant);
        for id in TemplateId::ALL {
            let path = dir.join(id.file_name());
            if path.exists() {
                let body = std::fs::read_to_string(&path).map_err(|e| PromptError::Io {
                    path: path.display().to_string(),
                    reason: e.to_string(),
                })?;
                reg.templates.insert(id, PromptTemplate::new(id, &body));
            }
        }
        Ok(reg)
    }

    pub fn variant(&self) -> PromptVariant {
        self.variant
    }

    pub fn get(&self, id: TemplateId) -> &PromptTemplate {
        &self.templates[&id]
    }

    pub fn insert(&mut self, template: PromptTemplate) {
        self.templates.insert(template.id, template);
    }

    pub fn render(&self, id: TemplateId, b: &Bindings) -> Result<RenderedPrompt, PromptError> {
        self.get(id).render(b)
    }

    pub fn template_digest(&self, id: TemplateId) -> String {
        self.get(id).digest()
    }

    /// Digest of every template, keyed by template id.
    pub fn digests(&self) -> BTreeMap<String, String> {
        self.templates
            .iter()
            .map(|(id, t)| (id.as_str().to_string(), t.digest()))
            .collect()
    }

    /// Which template produced `text`. Exact matches win; otherwise a
    /// template whose rendering forms a suffix of `text` is accepted. Ties go
    /// to the template with the most literal text.
    pub fn identify(&self, text: &str) -> Option<TemplateId> {
        self.identify_with_bindings(text).map(|(id, _)| id)
    }

    pub fn identify_with_bindings(&self, text: &str) -> Option<(TemplateId, Bindings)> {
        for allow_prefix in [false, true] {
            let best = self
                .templates
                .values()
                .filter_map(|t| t.match_rendered(text, allow_prefix).map(|b| (t, b)))
                .max_by_key(|(t, _)| t.literal_len());
            if let Some((t, b)) = best {
                return Some((t.id, b));
            }
        }
        None
    }
}
