//! Ablation tables and domain plot data.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ReportError;
use crate::pipeline::StageSet;
use crate::stats::deltas::{format_signed, DeltaTable, Magnitude};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableFormat {
    Markdown,
    Csv,
}

/// `*` for p < 0.05, `**` for p < 0.001, `***` for p < 0.0001.
pub fn significance_marker(p: f64) -> &'static str {
    if p < 0.0001 {
        "***"
    } else if p < 0.001 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub stages: StageSet,
    /// language -> score
    pub scores: BTreeMap<String, f64>,
    /// language -> score minus the all-off row's score; empty on that row
    pub deltas: BTreeMap<String, f64>,
    /// language -> significance marker of the comparison with the all-off row
    pub significance: BTreeMap<String, String>,
}

impl AblationRow {
    pub fn new(stages: StageSet, scores: BTreeMap<String, f64>) -> Self {
        AblationRow {
            stages,
            scores,
            deltas: BTreeMap::new(),
            significance: BTreeMap::new(),
        }
    }
}

fn baseline_index(rows: &[AblationRow]) -> Result<usize, ReportError> {
    let found: Vec<usize> = rows
        .iter()
        .enumerate()
        .filter(|(_, r)| r.stages.is_zero_shot())
        .map(|(i, _)| i)
        .collect();
    match found.as_slice() {
        [i] => Ok(*i),
        other => Err(ReportError::MissingBaselineRow(other.len())),
    }
}

/// Fills `deltas` of every non-baseline row from the all-off row.
pub fn fill_deltas(rows: &mut [AblationRow]) -> Result<(), ReportError> {
    let base = rows[baseline_index(rows)?].scores.clone();
    for r in rows.iter_mut() {
        r.deltas = if r.stages.is_zero_shot() {
            BTreeMap::new()
        } else {
            r.scores
                .iter()
                .filter_map(|(lang, v)| base.get(lang).map(|b| (lang.clone(), v - b)))
                .collect()
        };
    }
    Ok(())
}

/// Languages in sorted order with `average` moved last.
fn languages(rows: &[AblationRow]) -> Vec<String> {
    let mut langs: Vec<String> = rows
        .iter()
        .flat_map(|r| r.scores.keys().cloned())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    if let Some(i) = langs.iter().position(|l| l == "average") {
        let avg = langs.remove(i);
        langs.push(avg);
    }
    langs
}

fn ordered(rows: &[AblationRow]) -> Vec<&AblationRow> {
    let mut out: Vec<&AblationRow> = rows.iter().collect();
    out.sort_by_key(|r| r.stages.ablation_index().unwrap_or(usize::MAX));
    out
}

fn dot(on: bool) -> &'static str {
    if on {
        "●"
    } else {
        "○"
    }
}

pub fn render_ablation_table(rows: &[AblationRow], format: TableFormat) -> Result<String, ReportError> {
    baseline_index(rows)?;
    let langs = languages(rows);
    let rows = ordered(rows);
    Ok(match format {
        TableFormat::Markdown => {
            let mut out = String::from("| # | Research | Draft | Refinement | Proofreading |");
            for l in &langs {
                out.push_str(&format!(" {l} | Δ {l} |"));
            }
            out.push('\n');
            out.push_str("|---|:-:|:-:|:-:|:-:|");
            for _ in &langs {
                out.push_str("--:|:--|");
            }
            out.push('\n');
            for (i, r) in rows.iter().enumerate() {
                let s = r.stages;
                let num = s.ablation_index().map(|k| k + 1).unwrap_or(i + 1);
                out.push_str(&format!(
                    "| {num} | {} | {} | {} | {} |",
                    dot(s.research),
                    dot(s.draft),
                    dot(s.refine),
                    dot(s.proofread)
                ));
                for l in &langs {
                    let score = r.scores.get(l).map(|v| format!("{v:.2}")).unwrap_or_default();
                    let delta = if s.is_zero_shot() {
                        "–".to_string()
                    } else {
                        match r.deltas.get(l) {
                            Some(d) => {
                                let marker = r.significance.get(l).map(String::as_str).unwrap_or("");
                                let marker = marker.replace('*', "\\*");
                                format!("{} {} {marker}", format_signed(*d), Magnitude::classify(*d))
                                    .trim_end()
                                    .to_string()
                            }
                            None => String::new(),
                        }
                    };
                    out.push_str(&format!(" {score} | {delta} |"));
                }
                out.push('\n');
            }
            out
        }
        TableFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record([
                "research",
                "draft",
                "refine",
                "proofread",
                "language",
                "score",
                "delta",
                "delta_display",
                "magnitude",
                "significance",
            ])
            .expect("in-memory write");
            for r in rows {
                let s = r.stages;
                for l in langs.iter().filter(|l| r.scores.contains_key(*l)) {
                    let (delta, display, class) = match r.deltas.get(l) {
                        Some(d) if !s.is_zero_shot() => (
                            d.to_string(),
                            format_signed(*d),
                            Magnitude::classify(*d).to_string(),
                        ),
                        _ => (String::new(), "-".to_string(), String::new()),
                    };
                    w.write_record([
                        s.research.to_string(),
                        s.draft.to_string(),
                        s.refine.to_string(),
                        s.proofread.to_string(),
                        l.clone(),
                        r.scores[l].to_string(),
                        delta,
                        display,
                        class,
                        r.significance.get(l).cloned().unwrap_or_default(),
                    ])
                    .expect("in-memory write");
                }
            }
            String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
        }
    })
}

/// Inverse of the CSV rendering.
pub fn parse_ablation_csv(text: &str) -> Result<Vec<AblationRow>, ReportError> {
    let bad = |reason: String| ReportError::Format {
        path: "<ablation csv>".into(),
        reason,
    };
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let mut rows: Vec<AblationRow> = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        if rec.len() != 10 {
            return Err(bad(format!("expected 10 fields, got {}", rec.len())));
        }
        let flag = |i: usize| rec[i].parse::<bool>().map_err(|e| bad(e.to_string()));
        let stages = StageSet {
            research: flag(0)?,
            draft: flag(1)?,
            refine: flag(2)?,
            proofread: flag(3)?,
        };
        let lang = rec[4].to_string();
        let score: f64 = rec[5].parse().map_err(|e| bad(format!("score: {e}")))?;
        let row = match rows.iter_mut().find(|r| r.stages == stages) {
            Some(r) => r,
            None => {
                rows.push(AblationRow::new(stages, BTreeMap::new()));
                rows.last_mut().expect("just pushed")
            }
        };
        row.scores.insert(lang.clone(), score);
        if !rec[6].is_empty() {
            let d: f64 = rec[6].parse().map_err(|e| bad(format!("delta: {e}")))?;
            row.deltas.insert(lang.clone(), d);
        }
        if !rec[9].is_empty() {
            row.significance.insert(lang, rec[9].to_string());
        }
    }
    Ok(rows)
}

/// Systems standing for the draft, refine and proofread steps in a
/// [`DeltaTable`] whose baseline is the zero-shot system.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DomainSteps {
    pub draft: String,
    pub refine: String,
    pub proofread: String,
}

/// Long-form `domain,step,delta` with steps `0`, `D`, `R`, `P`. Step `0` is
/// the baseline itself and always has delta 0. Steps whose system is absent
/// from the table are skipped.
pub fn emit_domain_plot_data(table: &DeltaTable, steps: &DomainSteps) -> String {
    let mut out = String::from("domain,step,delta\n");
    for (domain, per_system) in &table.rows {
        out.push_str(&format!("{domain},0,{:.4}\n", 0.0));
        for (label, system) in [("D", &steps.draft), ("R", &steps.refine), ("P", &steps.proofread)] {
            if let Some(d) = per_system.get(system) {
                out.push_str(&format!("{domain},{label},{d:.4}\n"));
            }
        }
    }
    out
}
