//! Scoring runs and rendering `report.md`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use super::layout::{hypotheses_by_system, RunDir, ScoreRow, SigtestRecord};
use super::tables::{fill_deltas, render_ablation_table, significance_marker, AblationRow, DomainSteps, TableFormat};
use super::{emit_domain_plot_data, io_err, ReportError, RunManifest};
use crate::corpus::AssembledDocument;
use crate::exec::Execution;
use crate::metrics::{score_system, Metric, MetricError, Orientation};
use crate::pipeline::StageSet;
use crate::stats::deltas::{format_signed, per_domain_deltas, DeltaTable, DomainScore, Magnitude};
use crate::stats::permutation::{paired_permutation_test_with, Alternative, PairedScores, PermutationConfig};

/// Scores every system in a run's outputs against `docs` and returns rows
/// ordered by system, then document id.
pub fn score_run(
    run: &RunDir,
    run_id: &str,
    docs: &[AssembledDocument],
    metric: &dyn Metric,
) -> Result<Vec<ScoreRow>, ReportError> {
    let outputs = run.read_outputs()?;
    let by_doc: BTreeMap<&str, &AssembledDocument> = docs.iter().map(|d| (d.id.as_str(), d)).collect();
    let references: BTreeMap<String, String> = docs
        .iter()
        .filter_map(|d| d.reference_text.clone().map(|r| (d.id.clone(), r)))
        .collect();
    let sources: BTreeMap<String, String> =
        docs.iter().map(|d| (d.id.clone(), d.source_text.clone())).collect();
    let mut rows = Vec::new();
    for (system, hyps) in hypotheses_by_system(run_id, &outputs) {
        if let Some(unknown) = hyps.keys().find(|k| !by_doc.contains_key(k.as_str())) {
            return Err(ReportError::Format {
                path: run.outputs_path().display().to_string(),
                reason: format!("document {unknown} is not in the corpus"),
            });
        }
        let scored = score_system(metric, &system, &hyps, Some(&references), Some(&sources))
            .map_err(|e: MetricError| io_err(&run.outputs_path(), e))?;
        for s in scored {
            let doc = by_doc[s.doc_id.as_str()];
            rows.push(ScoreRow {
                system: s.system,
                domain: doc.domain.to_string(),
                lang_pair: doc.lang_pair(),
                doc_id: s.doc_id,
                metric: s.metric,
                value: s.value,
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportOptions {
    pub metric: String,
    pub orientation: Orientation,
    /// System every other system is compared with. Defaults to the system
    /// whose stage set is all-off.
    pub baseline: Option<String>,
    pub alpha: f64,
    pub alternative: Alternative,
    pub n_resamples: u64,
    pub seed: u64,
    pub execution: Execution,
}

impl Default for ReportOptions {
    fn default() -> Self {
        ReportOptions {
            metric: "chrf".into(),
            orientation: Orientation::HigherBetter,
            baseline: None,
            alpha: 0.05,
            alternative: Alternative::TwoSided,
            n_resamples: crate::stats::permutation::DEFAULT_RESAMPLES,
            seed: 17,
            execution: Execution::default(),
        }
    }
}

/// Stage set each system stands for, derived from run manifests.
fn system_stage_sets(manifests: &[RunManifest]) -> BTreeMap<String, StageSet> {
    let mut out = BTreeMap::new();
    for m in manifests {
        let stages = match (m.mode.as_str(), m.stage_set) {
            ("zero-shot", _) => StageSet::ZERO_SHOT,
            ("sbys", Some(s)) => s,
            _ => continue,
        };
        out.insert(m.run_id.clone(), stages);
        if m.mode != "sbys" {
            continue;
        }
        out.insert(format!("{}@zero_shot", m.run_id), StageSet::ZERO_SHOT);
        let draft = StageSet {
            research: stages.research,
            draft: true,
            refine: false,
            proofread: false,
        };
        out.insert(format!("{}@draft", m.run_id), draft);
        out.insert(
            format!("{}@refined", m.run_id),
            StageSet {
                refine: true,
                ..draft
            },
        );
    }
    out
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Everything a report is rendered from, as read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportInputs {
    pub manifests: Vec<RunManifest>,
    pub scores: Vec<ScoreRow>,
    pub sigtests: Vec<SigtestRecord>,
    pub baseline: Option<String>,
    pub orientation: Orientation,
    pub metric: String,
}

/// Runs the comparisons, writes `sigtests/`, `domain_deltas.csv`,
/// `domain_plot.csv` and `report.md` into `out`, and returns the report.
pub fn build_report(runs: &[RunDir], out: &RunDir, opts: &ReportOptions) -> Result<String, ReportError> {
    let mut manifests = Vec::new();
    let mut scores: Vec<ScoreRow> = Vec::new();
    let mut seen = BTreeSet::new();
    for run in runs {
        manifests.push(run.read_manifest()?);
        for row in run.read_scores()? {
            if row.metric == opts.metric && seen.insert((row.system.clone(), row.doc_id.clone())) {
                scores.push(row);
            }
        }
    }
    let stage_sets = system_stage_sets(&manifests);
    let systems: BTreeSet<&str> = scores.iter().map(|r| r.system.as_str()).collect();
    let baseline = opts.baseline.clone().or_else(|| {
        // Prefer a dedicated zero-shot run over an intermediate output.
        let zero: Vec<&str> = systems
            .iter()
            .copied()
            .filter(|s| stage_sets.get(*s) == Some(&StageSet::ZERO_SHOT))
            .collect();
        zero.iter()
            .find(|s| !s.contains('@'))
            .or(zero.first())
            .map(|s| s.to_string())
    });

    let sig_dir = out.sigtests_dir();
    if sig_dir.exists() {
        std::fs::remove_dir_all(&sig_dir).map_err(|e| io_err(&sig_dir, e))?;
    }
    if let Some(base) = baseline.as_deref().filter(|b| systems.contains(b)) {
        let cfg = PermutationConfig {
            alternative: opts.alternative,
            n_resamples: opts.n_resamples,
            seed: opts.seed,
            execution: opts.execution,
            ..Default::default()
        };
        let mut by_key: BTreeMap<(&str, &str), BTreeMap<String, f64>> = BTreeMap::new();
        for r in &scores {
            by_key
                .entry((r.system.as_str(), r.lang_pair.as_str()))
                .or_default()
                .insert(r.doc_id.clone(), r.value);
        }
        let langs: BTreeSet<&str> = scores.iter().map(|r| r.lang_pair.as_str()).collect();
        for sys in systems.iter().filter(|s| **s != base) {
            for lang in &langs {
                let (Some(a), Some(b)) = (by_key.get(&(*sys, *lang)), by_key.get(&(base, *lang))) else {
                    continue;
                };
                let Ok(paired) = PairedScores::from_maps(sys, a, base, b, opts.orientation) else {
                    continue;
                };
                if paired.per_doc.len() < 2 {
                    continue;
                }
                let result = paired_permutation_test_with(&paired, &cfg)?;
                let record = SigtestRecord {
                    metric: opts.metric.clone(),
                    lang_pair: Some(lang.to_string()),
                    result,
                };
                out.write_sigtest(&format!("{sys}__vs__{base}__{lang}"), &record)?;
            }
        }

        if let Some(table) = domain_delta_table(&scores, base) {
            std::fs::write(out.domain_deltas_path(), table.to_csv())
                .map_err(|e| io_err(&out.domain_deltas_path(), e))?;
            if let Some(steps) = domain_steps(&stage_sets, &table) {
                std::fs::write(out.domain_plot_path(), emit_domain_plot_data(&table, &steps))
                    .map_err(|e| io_err(&out.domain_plot_path(), e))?;
            }
        }
    }

    let inputs = ReportInputs {
        manifests,
        scores,
        sigtests: out.read_sigtests()?,
        baseline,
        orientation: opts.orientation,
        metric: opts.metric.clone(),
    };
    let md = render_report(&inputs)?;
    std::fs::write(out.report_path(), &md).map_err(|e| io_err(&out.report_path(), e))?;
    Ok(md)
}

/// Per-domain deltas against `base` for every system that covers exactly
/// the baseline's documents.
fn domain_delta_table(scores: &[ScoreRow], base: &str) -> Option<DeltaTable> {
    let mut per_system: BTreeMap<String, Vec<DomainScore>> = BTreeMap::new();
    for r in scores {
        per_system.entry(r.system.clone()).or_default().push(DomainScore {
            doc_id: r.doc_id.clone(),
            domain: r.domain.clone(),
            value: r.value,
        });
    }
    let base_docs: BTreeSet<&str> = per_system.get(base)?.iter().map(|s| s.doc_id.as_str()).collect();
    let others: Vec<&str> = per_system
        .iter()
        .filter(|(name, v)| {
            name.as_str() != base && v.iter().map(|s| s.doc_id.as_str()).collect::<BTreeSet<_>>() == base_docs
        })
        .map(|(name, _)| name.as_str())
        .collect();
    if others.is_empty() {
        return None;
    }
    per_domain_deltas(base, &others, &per_system).ok()
}

fn domain_steps(stage_sets: &BTreeMap<String, StageSet>, table: &DeltaTable) -> Option<DomainSteps> {
    let rows = StageSet::ablation_rows();
    let find = |target: StageSet| {
        let candidates: Vec<&String> = table
            .systems
            .iter()
            .filter(|s| stage_sets.get(*s) == Some(&target))
            .collect();
        candidates
            .iter()
            .find(|s| !s.contains('@'))
            .or(candidates.first())
            .map(|s| s.to_string())
    };
    Some(DomainSteps {
        draft: find(rows[4])?,
        refine: find(rows[5])?,
        proofread: find(rows[6])?,
    })
}

fn format_p(p: f64) -> String {
    if p < 1e-4 {
        format!("{p:.1e}")
    } else {
        format!("{p:.4}")
    }
}

/// Renders `report.md` from run artifacts.
pub fn render_report(inputs: &ReportInputs) -> Result<String, ReportError> {
    let mut md = String::new();
    let direction = match inputs.orientation {
        Orientation::HigherBetter => "higher is better",
        Orientation::LowerBetter => "lower is better",
    };
    let _ = writeln!(md, "# Evaluation report\n");
    let _ = writeln!(md, "Metric: `{}` ({direction}).", inputs.metric);
    if let Some(b) = &inputs.baseline {
        let _ = writeln!(md, "Baseline: `{b}`.");
    }
    md.push('\n');

    let _ = writeln!(md, "## Runs\n");
    let _ = writeln!(md, "| run | mode | stages | model | documents | failures | seed |");
    let _ = writeln!(md, "|---|---|---|---|--:|--:|--:|");
    let mut manifests: Vec<&RunManifest> = inputs.manifests.iter().collect();
    manifests.sort_by(|a, b| a.run_id.cmp(&b.run_id));
    for m in &manifests {
        let stages = m.stage_set.map(|s| s.label()).unwrap_or_else(|| "-".into());
        let _ = writeln!(
            md,
            "| {} | {} | {} | {} | {} | {} | {} |",
            m.run_id, m.mode, stages, m.model_id, m.documents, m.failures, m.seed
        );
    }
    let notes: BTreeSet<&str> = manifests.iter().flat_map(|m| m.notes.iter().map(String::as_str)).collect();
    if !notes.is_empty() {
        md.push('\n');
        for n in notes {
            let _ = writeln!(md, "* {n}");
        }
    }
    md.push('\n');

    // system -> lang -> mean
    let mut means: BTreeMap<&str, BTreeMap<&str, (f64, usize)>> = BTreeMap::new();
    for r in &inputs.scores {
        let e = means
            .entry(r.system.as_str())
            .or_default()
            .entry(r.lang_pair.as_str())
            .or_insert((0.0, 0));
        e.0 += r.value;
        e.1 += 1;
    }
    let _ = writeln!(md, "## System scores\n");
    let _ = writeln!(md, "| system | language pair | documents | mean |");
    let _ = writeln!(md, "|---|---|--:|--:|");
    for (sys, per_lang) in &means {
        for (lang, (sum, n)) in per_lang {
            let _ = writeln!(md, "| {sys} | {lang} | {n} | {:.2} |", sum / *n as f64);
        }
    }
    md.push('\n');

    let p_values: BTreeMap<(&str, &str, &str), f64> = inputs
        .sigtests
        .iter()
        .filter_map(|t| {
            t.lang_pair
                .as_deref()
                .map(|l| ((t.result.system_a.as_str(), t.result.system_b.as_str(), l), t.result.p_value))
        })
        .collect();

    if let Some(base) = inputs.baseline.as_deref() {
        let stage_sets = system_stage_sets(&inputs.manifests);
        // One row per stage set; dedicated runs win over intermediate outputs.
        let mut chosen: BTreeMap<usize, &str> = BTreeMap::new();
        for sys in means.keys().copied() {
            let Some(idx) = stage_sets.get(sys).and_then(|s| s.ablation_index()) else {
                continue;
            };
            if idx == 0 && sys != base {
                continue;
            }
            match chosen.get(&idx) {
                Some(prev) if !prev.contains('@') => {}
                _ => {
                    chosen.insert(idx, sys);
                }
            }
        }
        if chosen.contains_key(&0) && chosen.len() > 1 {
            let mut rows = Vec::new();
            for (&idx, &sys) in &chosen {
                let per_lang = &means[sys];
                let mut scores: BTreeMap<String, f64> = per_lang
                    .iter()
                    .map(|(l, (s, n))| (l.to_string(), s / *n as f64))
                    .collect();
                if scores.len() > 1 {
                    scores.insert("average".into(), mean(scores.values().copied()));
                }
                let mut row = AblationRow::new(StageSet::ablation_rows()[idx], scores);
                for l in per_lang.keys() {
                    if let Some(p) = p_values.get(&(sys, base, *l)) {
                        row.significance.insert(l.to_string(), significance_marker(*p).to_string());
                    }
                }
                rows.push(row);
            }
            fill_deltas(&mut rows)?;
            let _ = writeln!(md, "## Stage ablation\n");
            md.push_str(&render_ablation_table(&rows, TableFormat::Markdown)?);
            let _ = writeln!(
                md,
                "\nΔ is the difference from the all-off row; S < 0.3 ≤ M < 0.5 ≤ L < 1.0 ≤ XL. \
                 Markers: \\* p < 0.05, \\*\\* p < 0.001, \\*\\*\\* p < 0.0001.\n"
            );
        }

        if !inputs.sigtests.is_empty() {
            let _ = writeln!(md, "## Significance tests\n");
            let _ = writeln!(md, "| system | baseline | language pair | documents | mean Δ | p | resamples |");
            let _ = writeln!(md, "|---|---|---|--:|--:|--:|--:|");
            for t in &inputs.sigtests {
                let r = &t.result;
                let resamples = match r.n_resamples {
                    crate::stats::Resamples::Exact => "exact".to_string(),
                    crate::stats::Resamples::MonteCarlo(n) => n.to_string(),
                };
                let _ = writeln!(
                    md,
                    "| {} | {} | {} | {} | {} | {} | {resamples} |",
                    r.system_a,
                    r.system_b,
                    t.lang_pair.as_deref().unwrap_or("all"),
                    r.n_docs,
                    format_signed(r.observed_stat),
                    format_p(r.p_value)
                );
            }
            md.push('\n');
        }

        if let Some(table) = domain_delta_table(&inputs.scores, base) {
            let _ = writeln!(md, "## Domain deltas vs `{base}`\n");
            let _ = writeln!(md, "| domain | system | Δ | class |");
            let _ = writeln!(md, "|---|---|--:|:-:|");
            for (domain, per_system) in &table.rows {
                for s in &table.systems {
                    if let Some(d) = per_system.get(s) {
                        let _ = writeln!(md, "| {domain} | {s} | {} | {} |", format_signed(*d), Magnitude::classify(*d));
                    }
                }
            }
            md.push('\n');
        }
    }
    Ok(md)
}
