//! Independent oracles and fixtures shared by the integration tests.

#![allow(dead_code)]

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stepmt_core::corpus::{assemble_documents, Domain, Segment, DEFAULT_JOINER};
use stepmt_core::AssembledDocument;

// ---------------------------------------------------------------- chrF

/// All character n-grams of `text` (whitespace removed) as owned strings.
fn char_ngrams(text: &str, n: usize) -> Vec<String> {
    let chars: Vec<char> = text.chars().filter(|c| !c.is_whitespace()).collect();
    if chars.len() < n {
        return Vec::new();
    }
    (0..=chars.len() - n)
        .map(|i| chars[i..i + n].iter().collect())
        .collect()
}

/// Multiset intersection size by repeated removal.
fn clipped_matches(hyp: &[String], reference: &[String]) -> usize {
    let mut pool: Vec<&String> = reference.iter().collect();
    let mut matched = 0;
    for g in hyp {
        if let Some(pos) = pool.iter().position(|r| *r == g) {
            pool.remove(pos);
            matched += 1;
        }
    }
    matched
}

/// `(matches, hypothesis n-grams, reference n-grams)` for orders 1..=6,
/// summed over all pairs.
pub fn oracle_counts(pairs: &[(String, String)]) -> Vec<(usize, usize, usize)> {
    (1..=6)
        .map(|n| {
            pairs.iter().fold((0, 0, 0), |(m, h, r), (hyp, rf)| {
                let hg = char_ngrams(hyp, n);
                let rg = char_ngrams(rf, n);
                (m + clipped_matches(&hg, &rg), h + hg.len(), r + rg.len())
            })
        })
        .collect()
}

/// chrF with precision and recall averaged over orders where both sides
/// have n-grams, then one F-beta (beta = 2).
pub fn oracle_chrf_pr(pairs: &[(String, String)]) -> f64 {
    let counts = oracle_counts(pairs);
    let usable: Vec<_> = counts.iter().filter(|(_, h, r)| *h > 0 && *r > 0).collect();
    if usable.is_empty() {
        return 0.0;
    }
    let k = usable.len() as f64;
    let p: f64 = usable.iter().map(|(m, h, _)| *m as f64 / *h as f64).sum::<f64>() / k;
    let r: f64 = usable.iter().map(|(m, _, r)| *m as f64 / *r as f64).sum::<f64>() / k;
    if p + r == 0.0 {
        return 0.0;
    }
    100.0 * 5.0 * p * r / (4.0 * p + r)
}

/// chrF as the mean of per-order F-beta scores over orders with reference
/// n-grams (beta = 2, eps = 1e-16).
pub fn oracle_chrf_f(pairs: &[(String, String)]) -> f64 {
    let counts = oracle_counts(pairs);
    let usable: Vec<_> = counts.iter().filter(|(_, _, r)| *r > 0).collect();
    if usable.is_empty() {
        return 0.0;
    }
    let total: f64 = usable
        .iter()
        .map(|(m, h, r)| {
            let p = if *h == 0 { 0.0 } else { *m as f64 / *h as f64 };
            let rc = *m as f64 / *r as f64;
            5.0 * p * rc / (4.0 * p + rc + 1e-16)
        })
        .sum();
    100.0 * total / usable.len() as f64
}

pub fn random_text(rng: &mut ChaCha8Rng, max_len: usize) -> String {
    const ALPHABET: &[char] = &['a', 'b', 'c', 'd', 'e', 'é', '中', ' ', ' ', '.'];
    let len = rng.random_range(0..=max_len);
    (0..len)
        .map(|_| ALPHABET[rng.random_range(0..ALPHABET.len())])
        .collect()
}

pub fn random_pairs(seed: u64, n: usize, max_len: usize) -> Vec<(String, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| (random_text(&mut rng, max_len), random_text(&mut rng, max_len)))
        .collect()
}

// ----------------------------------------------------- permutation test

/// Exact two-sided p-value by recursive enumeration of every sign pattern.
pub fn exact_two_sided_p(diffs: &[f64]) -> f64 {
    fn walk(diffs: &[f64], i: usize, sum: f64, observed: f64, hits: &mut u64, total: &mut u64) {
        if i == diffs.len() {
            *total += 1;
            let tol = 1e-9 * (1.0 + observed);
            if (sum / diffs.len() as f64).abs() >= observed - tol {
                *hits += 1;
            }
            return;
        }
        walk(diffs, i + 1, sum + diffs[i], observed, hits, total);
        walk(diffs, i + 1, sum - diffs[i], observed, hits, total);
    }
    let observed = (diffs.iter().sum::<f64>() / diffs.len() as f64).abs();
    let (mut hits, mut total) = (0, 0);
    walk(diffs, 0, 0.0, observed, &mut hits, &mut total);
    hits as f64 / total as f64
}

// ---------------------------------------------------------------- corpora

const WORDS: &[&str] = &[
    "river", "stone", "light", "paper", "the", "a", "of", "quick", "dog", "mountain", "rain",
    "Tür", "café", "東京", "…", "42",
];

fn random_sentence(rng: &mut ChaCha8Rng, max_tokens: usize) -> String {
    let n = rng.random_range(1..=max_tokens);
    let mut words: Vec<&str> = (0..n).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect();
    if rng.random_bool(0.2) {
        words.insert(rng.random_range(0..=words.len()), "  ");
    }
    words.join(" ")
}

/// Random segment corpus, already in loader order: each document's
/// segments are contiguous with indices from 0. Occasional segments are
/// longer than `cap` tokens.
pub fn random_corpus(seed: u64, cap: usize) -> Vec<Segment> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let domains = ["literary", "news", "social", "speech"];
    let mut out = Vec::new();
    for d in 0..rng.random_range(1..8) {
        let domain = Domain::from(domains[rng.random_range(0..domains.len())]);
        for i in 0..rng.random_range(1..25) {
            let long = rng.random_bool(0.05);
            let text = random_sentence(&mut rng, if long { cap + 30 } else { cap / 3 + 1 });
            out.push(Segment {
                doc_id: format!("doc{d:02}"),
                domain: domain.clone(),
                index: i,
                source_text: text.clone(),
                reference_text: Some(text.to_uppercase()),
                source_lang: "en".into(),
                target_lang: "de".into(),
            });
        }
    }
    out
}

/// Greedy blob spans `(doc_id, start, end)` computed from token counts.
pub fn greedy_spans(segments: &[Segment], cap: usize) -> Vec<(String, usize, usize)> {
    let mut spans = Vec::new();
    let mut i = 0;
    while i < segments.len() {
        let doc = &segments[i].doc_id;
        let start = i;
        let mut tokens = segments[i].source_text.split_whitespace().count();
        i += 1;
        while i < segments.len() && &segments[i].doc_id == doc {
            let t = segments[i].source_text.split_whitespace().count();
            if tokens + t > cap {
                break;
            }
            tokens += t;
            i += 1;
        }
        spans.push((doc.clone(), segments[start].index, segments[i - 1].index));
    }
    spans
}

// ------------------------------------------------------------- pipelines

fn seg(doc: &str, domain: &str, index: usize, src: &str, reference: &str) -> Segment {
    Segment {
        doc_id: doc.into(),
        domain: Domain::from(domain),
        index,
        source_text: src.into(),
        reference_text: Some(reference.into()),
        source_lang: "en".into(),
        target_lang: "de".into(),
    }
}

/// Three small documents in two domains.
pub fn small_docs() -> Vec<AssembledDocument> {
    let segments = vec![
        seg("lit1", "literary", 0, "It was raining cats and dogs.", "Es regnete in Strömen."),
        seg("lit1", "literary", 1, "She kept her cards close to her chest.", "Sie hielt sich bedeckt."),
        seg("news1", "news", 0, "The council met on Tuesday.", "Der Rat tagte am Dienstag."),
        seg("news1", "news", 1, "A decision is expected soon.", "Eine Entscheidung wird bald erwartet."),
        seg("news1", "news", 2, "Residents remain hopeful.", "Die Anwohner bleiben zuversichtlich."),
        seg("news2", "news", 0, "Prices rose sharply last month.", "Die Preise stiegen letzten Monat stark."),
    ];
    assemble_documents(&segments, 250)
}

/// Source-to-reference pairs at document and segment level.
pub fn reference_map(docs: &[AssembledDocument]) -> HashMap<String, String> {
    let mut out = HashMap::new();
    for d in docs {
        let Some(r) = &d.reference_text else { continue };
        out.insert(d.source_text.clone(), r.clone());
        let refs: Vec<&str> = r.split(DEFAULT_JOINER).collect();
        if refs.len() == d.segments.len() {
            for (s, r) in d.segments.iter().zip(refs) {
                out.insert(s.clone(), r.to_string());
            }
        }
    }
    out
}
