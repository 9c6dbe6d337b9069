mod common;

use std::collections::HashMap;

use stepmt_core::baselines::{
    concat_segment_translations, maps_translate, run_baseline_batch, translate_baseline, BaselineError, BaselineMode,
    KnowledgeKind, MapsDemos, MapsSetup,
};
use stepmt_core::config::SelectorMode;
use stepmt_core::corpus::DEFAULT_JOINER;
use stepmt_core::llm::mock::MockBackend;
use stepmt_core::llm::LlmError;
use stepmt_core::metrics::{ChrfMetric, Metric, MetricError, MetricPlugin, ScoreRequest, Transport};
use stepmt_core::pipeline::{BatchOptions, PipelineConfig};
use stepmt_core::report::RunManifest;
use stepmt_core::{Orientation, TemplateId, TemplateRegistry};

const DEMOS: &str = "[pairs.en-de]\nkeywords = \"kw demo\"\ntopic = \"topic demo\"\ndemo = \"pair demo\"\n";

/// Replies to segment prompts with the uppercased source, to knowledge
/// prompts with the template name, and to candidate prompts with
/// `cand:<knowledge>`.
fn echo_backend() -> MockBackend {
    let registry = TemplateRegistry::default();
    MockBackend::new("echo").with_fallback(move |messages| {
        let last = &messages.last().unwrap().content;
        let (id, b) = registry
            .identify_with_bindings(last)
            .ok_or_else(|| LlmError::BackendRefusal("unrecognized".into()))?;
        Ok(match id {
            TemplateId::ZeroShot | TemplateId::ZeroShotInContext => b["source_text"].to_uppercase(),
            TemplateId::MapsCandidate => format!("cand:{}", b["knowledge"]),
            other => other.to_string(),
        })
    })
}

/// Scores a hypothesis by table lookup.
struct TableMetric {
    plugin: MetricPlugin,
    values: HashMap<String, f64>,
}

impl TableMetric {
    fn new(orientation: Orientation, values: &[(&str, f64)]) -> Self {
        TableMetric {
            plugin: MetricPlugin {
                name: "table".into(),
                orientation,
                needs_reference: false,
                needs_source: false,
                transport: Transport::Builtin,
            },
            values: values.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        }
    }
}

impl Metric for TableMetric {
    fn descriptor(&self) -> &MetricPlugin {
        &self.plugin
    }

    fn score_batch(&self, items: &[ScoreRequest<'_>]) -> Result<Vec<f64>, MetricError> {
        Ok(items.iter().map(|r| self.values[r.hypothesis]).collect())
    }
}

fn candidate_values(kw: f64, topic: f64, demo: f64) -> Vec<(&'static str, f64)> {
    vec![("cand:maps_keywords", kw), ("cand:maps_topic", topic), ("cand:maps_demo", demo)]
}

#[test]
fn segment_modes_translate_each_segment_once() {
    let docs = common::small_docs();
    let cfg = PipelineConfig::default();
    let news = docs.iter().find(|d| d.segments.len() == 3).unwrap();
    for mode in [BaselineMode::ZeroShotSeg, BaselineMode::ZeroShotSegCtx] {
        let backend = echo_backend();
        let out = translate_baseline(news, mode, &backend, &cfg, None).unwrap();
        assert_eq!(backend.request_count(), 3, "{mode}");
        let per_segment = out.segment_translations.unwrap();
        let want: Vec<String> = news.segments.iter().map(|s| s.to_uppercase()).collect();
        assert_eq!(per_segment, want);
        assert_eq!(out.final_translation, want.join(DEFAULT_JOINER));

        let registry = TemplateRegistry::default();
        for p in backend.prompts() {
            let (id, b) = registry.identify_with_bindings(&p).unwrap();
            if mode == BaselineMode::ZeroShotSegCtx {
                assert_eq!(id, TemplateId::ZeroShotInContext);
                assert_eq!(b["document_context"], news.source_text);
            } else {
                assert_eq!(id, TemplateId::ZeroShot);
            }
        }
    }
}

#[test]
fn zero_shot_document_is_one_request() {
    let docs = common::small_docs();
    let backend = echo_backend();
    let out = translate_baseline(&docs[0], BaselineMode::ZeroShot, &backend, &PipelineConfig::default(), None).unwrap();
    assert_eq!(backend.request_count(), 1);
    assert_eq!(out.final_translation, docs[0].source_text.to_uppercase());
    assert!(out.segment_translations.is_none());
}

#[test]
fn concatenation_checks_the_segment_count() {
    let docs = common::small_docs();
    let err = concat_segment_translations(&["only one".into()], &docs[0]).unwrap_err();
    assert!(matches!(err, BaselineError::LengthMismatch { expected: 2, got: 1 }), "{err}");
}

#[test]
fn maps_selects_the_best_candidate_per_orientation() {
    let docs = common::small_docs();
    let demos = MapsDemos::from_toml(DEMOS).unwrap();
    let cfg = PipelineConfig::default();
    let cases = [
        (Orientation::HigherBetter, candidate_values(0.2, 0.9, 0.5), 1),
        (Orientation::LowerBetter, candidate_values(0.2, 0.9, 0.5), 0),
        (Orientation::HigherBetter, candidate_values(0.3, 0.7, 0.7), 1),
        (Orientation::LowerBetter, candidate_values(4.0, 4.0, 4.0), 0),
    ];
    for (orientation, values, want) in cases {
        let metric = TableMetric::new(orientation, &values);
        let backend = echo_backend();
        let set = maps_translate(&docs[0], &backend, &metric, SelectorMode::Qe, &demos, &cfg).unwrap();
        assert_eq!(set.selected, want, "{orientation:?} {values:?}");
        assert_eq!(set.candidates.len(), 3);
        let kinds: Vec<KnowledgeKind> = set.candidates.iter().map(|c| c.knowledge_kind).collect();
        assert_eq!(kinds, KnowledgeKind::ALL);
        assert_eq!(set.selected_translation(), values[want].0);
        assert_eq!(set.selector, "table");
    }
}

#[test]
fn maps_knowledge_prompts_carry_the_demonstrations() {
    let docs = common::small_docs();
    let demos = MapsDemos::from_toml(DEMOS).unwrap();
    let metric = TableMetric::new(Orientation::HigherBetter, &candidate_values(1.0, 2.0, 3.0));
    let backend = echo_backend();
    maps_translate(&docs[0], &backend, &metric, SelectorMode::Qe, &demos, &PipelineConfig::default()).unwrap();
    let prompts = backend.prompts();
    assert_eq!(prompts.len(), 6);
    for (p, demo) in prompts.iter().zip(["kw demo", "topic demo", "pair demo"]) {
        assert!(p.contains(demo), "{p}");
        assert!(p.contains(&docs[0].source_text));
    }
}

#[test]
fn reference_metrics_cannot_select_in_qe_mode() {
    let docs = common::small_docs();
    let demos = MapsDemos::from_toml(DEMOS).unwrap();
    let backend = echo_backend();
    let chrf = ChrfMetric::default();
    let err = maps_translate(&docs[0], &backend, &chrf, SelectorMode::Qe, &demos, &PipelineConfig::default())
        .unwrap_err();
    assert!(matches!(err, BaselineError::Selector(_)), "{err}");
    assert_eq!(backend.request_count(), 0);
}

#[test]
fn reference_mode_uses_the_reference() {
    let docs = common::small_docs();
    let demos = MapsDemos::from_toml(DEMOS).unwrap();
    let backend = echo_backend();
    let chrf = ChrfMetric::default();
    let set = maps_translate(&docs[0], &backend, &chrf, SelectorMode::Reference, &demos, &PipelineConfig::default())
        .unwrap();
    assert!(set.selector_scores.iter().all(|s| (0.0..=100.0).contains(s)));

    let mut no_ref = docs[0].clone();
    no_ref.reference_text = None;
    let err = maps_translate(&no_ref, &backend, &chrf, SelectorMode::Reference, &demos, &PipelineConfig::default())
        .unwrap_err();
    assert!(matches!(err, BaselineError::Selector(MetricError::MissingReference(_))), "{err}");
}

#[test]
fn missing_demonstrations_fail_per_document() {
    let docs = common::small_docs();
    let demos = MapsDemos::from_toml("[pairs.en-fr]\nkeywords = \"k\"\ntopic = \"t\"\ndemo = \"d\"\n").unwrap();
    let metric = TableMetric::new(Orientation::HigherBetter, &[]);
    let backend = echo_backend();
    let setup = MapsSetup {
        selector: &metric,
        mode: SelectorMode::Qe,
        demos: &demos,
    };
    let outcome = run_baseline_batch(
        &docs,
        BaselineMode::Maps,
        &backend,
        &PipelineConfig::default(),
        Some(&setup),
        &BatchOptions::default(),
        RunManifest::new("m", "maps"),
    );
    assert_eq!(outcome.failures().count(), docs.len());
    assert!(outcome.failures().all(|f| f.error.contains("en-de")));
    assert_eq!(backend.request_count(), 0);
}

#[test]
fn demonstrations_reject_unknown_fields() {
    assert!(MapsDemos::from_toml("[pairs.en-de]\nkeywords = \"k\"\ntopic = \"t\"\ndemo = \"d\"\nextra = 1\n").is_err());
    assert!(MapsDemos::from_toml("[pairs.en-de]\nkeywords = \"k\"\n").is_err());
}

#[test]
fn empty_replies_are_document_failures() {
    let docs = common::small_docs();
    let backend = MockBackend::new("empty").with_fallback(|_| Ok("  ".into()));
    let err = translate_baseline(&docs[0], BaselineMode::ZeroShot, &backend, &PipelineConfig::default(), None)
        .unwrap_err();
    assert!(matches!(err, BaselineError::EmptyTranslation(_)), "{err}");
}
