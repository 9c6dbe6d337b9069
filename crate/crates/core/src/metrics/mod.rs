//! Translation quality metrics.
//!
//! chrF is built in. Neural metrics run out of process behind the
//! [`plugin::ExternalMetric`] wire contract. Score values are reported as the
//! metric produces them; whether lower or higher is better is carried in
//! [`Orientation`] and consulted wherever scores are compared.

pub mod chrf;
pub mod plugin;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;
use chrf::{chrf_sentence, ChrfParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("plugin protocol error: {0}")]
    PluginProtocol(String),
    #[error("document {0} has no reference")]
    MissingReference(String),
    #[error("document {0} has no source")]
    MissingSource(String),
    #[error("metric transport failed: {0}")]
    Transport(String),
    #[error("metric configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    LowerBetter,
    HigherBetter,
}

impl Orientation {
    /// True when `a` is strictly better than `b`.
    pub fn better(self, a: f64, b: f64) -> bool {
        match self {
            Orientation::LowerBetter => a < b,
            Orientation::HigherBetter => a > b,
        }
    }

    /// Orders values best-first.
    pub fn cmp_best_first(self, a: f64, b: f64) -> std::cmp::Ordering {
        match self {
            Orientation::LowerBetter => a.total_cmp(&b),
            Orientation::HigherBetter => b.total_cmp(&a),
        }
    }
}

impl FromStr for Orientation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").as_str() {
            "lower_better" => Ok(Orientation::LowerBetter),
            "higher_better" => Ok(Orientation::HigherBetter),
            _ => Err(format!("unknown orientation '{s}'")),
        }
    }
}

/// Index of the best score; ties resolve to the lowest index.
pub fn argbest(scores: &[f64], orientation: Orientation) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        match best {
            None => best = Some(i),
            Some(b) if orientation.better(s, scores[b]) => best = Some(i),
            _ => {}
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transport {
    Builtin,
    Subprocess,
    Http,
}

/// What a metric needs and how its values compare.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricPlugin {
    pub name: String,
    pub orientation: Orientation,
    pub needs_reference: bool,
    pub needs_source: bool,
    pub transport: Transport,
}

impl MetricPlugin {
    /// Reference-free metrics can select among candidates (QE mode).
    pub fn usable_as_selector(&self) -> bool {
        !self.needs_reference
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ScoreRequest<'a> {
    pub id: &'a str,
    pub hypothesis: &'a str,
    pub reference: Option<&'a str>,
    pub source: Option<&'a str>,
}

pub trait Metric: Send + Sync {
    fn descriptor(&self) -> &MetricPlugin;

    /// One finite score per request, aligned with `items`.
    fn score_batch(&self, items: &[ScoreRequest<'_>]) -> Result<Vec<f64>, MetricError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredDocument {
    pub doc_id: String,
    pub system: String,
    pub value: f64,
    pub metric: String,
}

/// Scores every hypothesis of `system`, in doc-id order.
pub fn score_system(
    metric: &dyn Metric,
    system: &str,
    hypotheses: &BTreeMap<String, String>,
    references: Option<&BTreeMap<String, String>>,
    sources: Option<&BTreeMap<String, String>>,
) -> Result<Vec<ScoredDocument>, MetricError> {
    let desc = metric.descriptor();
    let mut items = Vec::with_capacity(hypotheses.len());
    for (id, hyp) in hypotheses {
        let reference = references.and_then(|r| r.get(id)).map(String::as_str);
        let source = sources.and_then(|s| s.get(id)).map(String::as_str);
        if desc.needs_reference && reference.is_none() {
            return Err(MetricError::MissingReference(id.clone()));
        }
        if desc.needs_source && source.is_none() {
            return Err(MetricError::MissingSource(id.clone()));
        }
        items.push(ScoreRequest {
            id,
            hypothesis: hyp,
            reference,
            source,
        });
    }
    let values = metric.score_batch(&items)?;
    if values.len() != items.len() {
        return Err(MetricError::PluginProtocol(format!(
            "expected {} scores, got {}",
            items.len(),
            values.len()
        )));
    }
    items
        .iter()
        .zip(values)
        .map(|(item, value)| {
            if !value.is_finite() {
                return Err(MetricError::PluginProtocol(format!(
                    "non-finite score for {}",
                    item.id
                )));
            }
            Ok(ScoredDocument {
                doc_id: item.id.to_string(),
                system: system.to_string(),
                value,
                metric: desc.name.clone(),
            })
        })
        .collect()
}

/// Reference-based sentence-level chrF.
#[derive(Debug, Clone)]
pub struct ChrfMetric {
    desc: MetricPlugin,
    params: ChrfParams,
    execution: Execution,
}

impl ChrfMetric {
    pub fn new(params: ChrfParams) -> Self {
        ChrfMetric {
            desc: MetricPlugin {
                name: "chrf".into(),
                orientation: Orientation::HigherBetter,
                needs_reference: true,
                needs_source: false,
                transport: Transport::Builtin,
            },
            params,
            execution: Execution::default(),
        }
    }

    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }
}

impl Default for ChrfMetric {
    fn default() -> Self {
        Self::new(ChrfParams::default())
    }
}

impl Metric for ChrfMetric {
    fn descriptor(&self) -> &MetricPlugin {
        &self.desc
    }

    fn score_batch(&self, items: &[ScoreRequest<'_>]) -> Result<Vec<f64>, MetricError> {
        if let Some(missing) = items.iter().find(|i| i.reference.is_none()) {
            return Err(MetricError::MissingReference(missing.id.to_string()));
        }
        Ok(self.execution.map(items, |i| {
            chrf_sentence(i.hypothesis, i.reference.unwrap_or_default(), &self.params)
        }))
    }
}

/// chrF of the hypothesis against the source text. A reference-free stand-in
/// for a QE selector, for exercising selection paths without a neural metric.
#[derive(Debug, Clone)]
pub struct PseudoQeChrf {
    desc: MetricPlugin,
    params: ChrfParams,
}

impl Default for PseudoQeChrf {
    fn default() -> Self {
        PseudoQeChrf {
            desc: MetricPlugin {
                name: "chrf-pseudo".into(),
                orientation: Orientation::HigherBetter,
                needs_reference: false,
                needs_source: true,
                transport: Transport::Builtin,
            },
            params: ChrfParams::default(),
        }
    }
}

impl Metric for PseudoQeChrf {
    fn descriptor(&self) -> &MetricPlugin {
        &self.desc
    }

    fn score_batch(&self, items: &[ScoreRequest<'_>]) -> Result<Vec<f64>, MetricError> {
        items
            .iter()
            .map(|i| match i.source {
                Some(src) => Ok(chrf_sentence(i.hypothesis, src, &self.params)),
                None => Err(MetricError::MissingSource(i.id.to_string())),
            })
            .collect()
    }
}

impl fmt::Display for Orientation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Orientation::LowerBetter => "lower_better",
            Orientation::HigherBetter => "higher_better",
        })
    }
}
