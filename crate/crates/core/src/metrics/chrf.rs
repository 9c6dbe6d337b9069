//! Character n-gram F-score (chrF).
//!
//! Whitespace is removed before n-gram extraction and no word n-grams are
//! used (chrF, not chrF++). For each order n the clipped match count gives
//! precision and recall. Two ways of combining orders are offered (see
//! [`Averaging`]); the default matches sacreBLEU's chrF. Corpus scores
//! aggregate match and total counts across all pairs before combining.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ChrfError {
    #[error("corpus is empty")]
    EmptyCorpus,
}

/// How per-order statistics become one score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    /// Average precision and recall over orders where both hypothesis and
    /// reference have n-grams, then take one F-beta (Popović's chrF,
    /// sacreBLEU's default).
    #[default]
    PrecisionRecall,
    /// Average per-order F-beta scores over orders whose reference n-gram
    /// set is non-empty; an order without hypothesis n-grams counts as 0.
    FScore,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChrfParams {
    pub max_order: usize,
    pub beta: f64,
    pub eps: f64,
    #[serde(default)]
    pub averaging: Averaging,
}

impl Default for ChrfParams {
    fn default() -> Self {
        ChrfParams {
            max_order: 6,
            beta: 2.0,
            eps: 1e-16,
            averaging: Averaging::PrecisionRecall,
        }
    }
}

impl ChrfParams {
    pub fn with_beta(beta: f64) -> Self {
        ChrfParams {
            beta,
            ..Default::default()
        }
    }
}

/// Per-order `(matches, hypothesis total, reference total)`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct NgramStats {
    pub orders: Vec<[u64; 3]>,
}

impl NgramStats {
    fn zeros(max_order: usize) -> Self {
        NgramStats {
            orders: vec![[0; 3]; max_order],
        }
    }

    pub fn add(&mut self, other: &NgramStats) {
        for (a, b) in self.orders.iter_mut().zip(&other.orders) {
            for k in 0..3 {
                a[k] += b[k];
            }
        }
    }
}

fn strip_whitespace(s: &str) -> Vec<char> {
    s.chars().filter(|c| !c.is_whitespace()).collect()
}

fn ngram_counts(chars: &[char], n: usize) -> HashMap<&[char], u64> {
    let mut counts = HashMap::new();
    if chars.len() >= n {
        for w in chars.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

pub fn ngram_stats(hypothesis: &str, reference: &str, max_order: usize) -> NgramStats {
    let hyp = strip_whitespace(hypothesis);
    let refr = strip_whitespace(reference);
    let mut stats = NgramStats::zeros(max_order);
    for n in 1..=max_order {
        let h = ngram_counts(&hyp, n);
        let r = ngram_counts(&refr, n);
        let matches: u64 = h
            .iter()
            .map(|(g, &c)| c.min(r.get(g).copied().unwrap_or(0)))
            .sum();
        stats.orders[n - 1] = [
            matches,
            hyp.len().saturating_sub(n - 1) as u64,
            refr.len().saturating_sub(n - 1) as u64,
        ];
    }
    stats
}

/// chrF from accumulated counts.
pub fn score_from_stats(stats: &NgramStats, params: &ChrfParams) -> f64 {
    match params.averaging {
        Averaging::PrecisionRecall => averaged_pr_score(stats, params),
        Averaging::FScore => averaged_f_score(stats, params),
    }
}

fn f_beta(precision: f64, recall: f64, beta: f64, eps: f64) -> f64 {
    let b2 = beta * beta;
    (1.0 + b2) * precision * recall / (b2 * precision + recall + eps)
}

fn averaged_pr_score(stats: &NgramStats, params: &ChrfParams) -> f64 {
    let (mut p, mut r, mut effective) = (0.0, 0.0, 0usize);
    for &[m, h, rf] in &stats.orders {
        if h > 0 && rf > 0 {
            p += m as f64 / h as f64;
            r += m as f64 / rf as f64;
            effective += 1;
        }
    }
    if effective == 0 || p + r == 0.0 {
        return 0.0;
    }
    let n = effective as f64;
    100.0 * f_beta(p / n, r / n, params.beta, 0.0)
}

fn averaged_f_score(stats: &NgramStats, params: &ChrfParams) -> f64 {
    let mut total = 0.0;
    let mut effective = 0usize;
    for &[m, h, r] in &stats.orders {
        if r == 0 {
            continue;
        }
        effective += 1;
        let precision = if h == 0 { 0.0 } else { m as f64 / h as f64 };
        let recall = m as f64 / r as f64;
        total += f_beta(precision, recall, params.beta, params.eps);
    }
    if effective == 0 {
        0.0
    } else {
        100.0 * total / effective as f64
    }
}

pub fn chrf_sentence(hypothesis: &str, reference: &str, params: &ChrfParams) -> f64 {
    assert!(params.max_order >= 1, "max_order must be at least 1");
    assert!(params.beta > 0.0, "beta must be positive");
    score_from_stats(&ngram_stats(hypothesis, reference, params.max_order), params)
}

/// Corpus chrF over globally aggregated n-gram counts.
pub fn chrf_corpus<H, R>(pairs: &[(H, R)], params: &ChrfParams) -> Result<f64, ChrfError>
where
    H: AsRef<str>,
    R: AsRef<str>,
{
    if pairs.is_empty() {
        return Err(ChrfError::EmptyCorpus);
    }
    let mut acc = NgramStats::zeros(params.max_order);
    for (h, r) in pairs {
        acc.add(&ngram_stats(h.as_ref(), r.as_ref(), params.max_order));
    }
    Ok(score_from_stats(&acc, params))
}
