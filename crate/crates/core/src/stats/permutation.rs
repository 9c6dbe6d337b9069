//! Paired permutation (sign-flip) test on per-document score differences.
//!
//! The statistic is the mean of `a - b`. Under the null hypothesis each
//! document's difference is equally likely to carry either sign. For up to
//! [`EXACT_THRESHOLD`] documents all `2^n` sign patterns are enumerated and
//! the p-value is the exact fraction at least as extreme as the observed
//! statistic. Larger inputs use Monte Carlo resampling with add-one
//! smoothing: `p = (1 + hits) / (1 + resamples)`.
//!
//! Monte Carlo work is split into fixed shards of [`SHARD_SIZE`] resamples.
//! Shard `k` draws from `ChaCha8Rng::seed_from_u64(seed)` on stream `k`, so
//! the result depends only on `(seed, resamples)` and never on how many
//! threads ran the shards.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::StatsError;
use crate::exec::Execution;
use crate::metrics::Orientation;

pub const EXACT_THRESHOLD: usize = 20;
pub const DEFAULT_RESAMPLES: u64 = 100_000;
pub const SHARD_SIZE: u64 = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alternative {
    #[default]
    TwoSided,
    ABetter,
    BBetter,
}

impl FromStr for Alternative {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").as_str() {
            "two_sided" => Ok(Alternative::TwoSided),
            "a_better" => Ok(Alternative::ABetter),
            "b_better" => Ok(Alternative::BBetter),
            _ => Err(format!(
                "unknown alternative '{s}' (expected two-sided, a-better or b-better)"
            )),
        }
    }
}

impl fmt::Display for Alternative {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Alternative::TwoSided => "two_sided",
            Alternative::ABetter => "a_better",
            Alternative::BBetter => "b_better",
        })
    }
}

/// Resample count: either exact enumeration or a Monte Carlo count.
/// Serialized as the string `"exact"` or an integer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resamples {
    Exact,
    MonteCarlo(u64),
}

impl Serialize for Resamples {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Resamples::Exact => s.serialize_str("exact"),
            Resamples::MonteCarlo(n) => s.serialize_u64(*n),
        }
    }
}

impl<'de> Deserialize<'de> for Resamples {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Count(u64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Count(n) => Ok(Resamples::MonteCarlo(n)),
            Raw::Text(t) if t == "exact" => Ok(Resamples::Exact),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("invalid n_resamples '{t}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedScores {
    pub system_a: String,
    pub system_b: String,
    pub per_doc: Vec<(String, f64, f64)>,
    pub orientation: Orientation,
}

impl PairedScores {
    pub fn new(
        system_a: impl Into<String>,
        system_b: impl Into<String>,
        per_doc: Vec<(String, f64, f64)>,
        orientation: Orientation,
    ) -> Result<Self, StatsError> {
        let mut seen = HashSet::new();
        for (id, a, b) in &per_doc {
            if !seen.insert(id.as_str()) {
                return Err(StatsError::DuplicateDocument(id.clone()));
            }
            if !a.is_finite() || !b.is_finite() {
                return Err(StatsError::NonFinite(id.clone()));
            }
        }
        Ok(PairedScores {
            system_a: system_a.into(),
            system_b: system_b.into(),
            per_doc,
            orientation,
        })
    }

    /// Pairs two per-document score maps; both must cover the same ids.
    pub fn from_maps(
        system_a: &str,
        a: &BTreeMap<String, f64>,
        system_b: &str,
        b: &BTreeMap<String, f64>,
        orientation: Orientation,
    ) -> Result<Self, StatsError> {
        if let Some(id) = a.keys().find(|k| !b.contains_key(*k)) {
            return Err(StatsError::Unpaired(id.clone()));
        }
        if let Some(id) = b.keys().find(|k| !a.contains_key(*k)) {
            return Err(StatsError::Unpaired(id.clone()));
        }
        let per_doc = a
            .iter()
            .map(|(id, va)| (id.clone(), *va, b[id]))
            .collect();
        Self::new(system_a, system_b, per_doc, orientation)
    }

    pub fn differences(&self) -> Vec<f64> {
        self.per_doc.iter().map(|(_, a, b)| a - b).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationResult {
    pub system_a: String,
    pub system_b: String,
    pub p_value: f64,
    /// Mean of `a - b`.
    pub observed_stat: f64,
    pub n_resamples: Resamples,
    pub seed: u64,
    pub alternative: Alternative,
    pub n_docs: usize,
    /// All differences were zero; p is reported as 1.
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PermutationConfig {
    pub alternative: Alternative,
    pub n_resamples: u64,
    pub seed: u64,
    pub exact_threshold: usize,
    pub execution: Execution,
}

impl Default for PermutationConfig {
    fn default() -> Self {
        PermutationConfig {
            alternative: Alternative::TwoSided,
            n_resamples: DEFAULT_RESAMPLES,
            seed: 0,
            exact_threshold: EXACT_THRESHOLD,
            execution: Execution::default(),
        }
    }
}

/// Maps a statistic so that larger means more extreme in the direction of
/// the alternative.
fn extremity(alternative: Alternative, orientation: Orientation, stat: f64) -> f64 {
    let a_better_sign = match orientation {
        Orientation::HigherBetter => 1.0,
        Orientation::LowerBetter => -1.0,
    };
    match alternative {
        Alternative::TwoSided => stat.abs(),
        Alternative::ABetter => a_better_sign * stat,
        Alternative::BBetter => -a_better_sign * stat,
    }
}

pub fn paired_permutation_test(
    scores: &PairedScores,
    alternative: Alternative,
    n_resamples: u64,
    seed: u64,
) -> Result<PermutationResult, StatsError> {
    paired_permutation_test_with(
        scores,
        &PermutationConfig {
            alternative,
            n_resamples,
            seed,
            ..Default::default()
        },
    )
}

pub fn paired_permutation_test_with(
    scores: &PairedScores,
    cfg: &PermutationConfig,
) -> Result<PermutationResult, StatsError> {
    let diffs = scores.differences();
    let n = diffs.len();
    if n < 2 {
        return Err(StatsError::InsufficientData(n));
    }
    let exact = n <= cfg.exact_threshold.min(63);
    if !exact && cfg.n_resamples == 0 {
        return Err(StatsError::InvalidConfig("n_resamples must be positive".into()));
    }
    let resamples = if exact {
        Resamples::Exact
    } else {
        Resamples::MonteCarlo(cfg.n_resamples)
    };
    let base = PermutationResult {
        system_a: scores.system_a.clone(),
        system_b: scores.system_b.clone(),
        p_value: 1.0,
        observed_stat: 0.0,
        n_resamples: resamples,
        seed: cfg.seed,
        alternative: cfg.alternative,
        n_docs: n,
        degenerate: false,
    };
    if diffs.iter().all(|d| *d == 0.0) {
        return Ok(PermutationResult {
            degenerate: true,
            ..base
        });
    }

    let observed = diffs.iter().sum::<f64>() / n as f64;
    let scale = diffs.iter().map(|d| d.abs()).sum::<f64>() / n as f64;
    let threshold = extremity(cfg.alternative, scores.orientation, observed) - 1e-10 * scale;
    let hit = |stat: f64| extremity(cfg.alternative, scores.orientation, stat) >= threshold;

    let p_value = if exact {
        let total = 1u64 << n;
        let hits = cfg.execution.sum_range(total, |mask| {
            let s: f64 = diffs
                .iter()
                .enumerate()
                .map(|(i, d)| if mask >> i & 1 == 1 { -d } else { *d })
                .sum();
            u64::from(hit(s / n as f64))
        });
        hits as f64 / total as f64
    } else {
        let shards = cfg.n_resamples.div_ceil(SHARD_SIZE);
        let hits = cfg.execution.sum_range(shards, |shard| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(shard);
            let count = SHARD_SIZE.min(cfg.n_resamples - shard * SHARD_SIZE);
            let mut hits = 0;
            for _ in 0..count {
                let mut s = 0.0;
                for chunk in diffs.chunks(64) {
                    let bits = rng.next_u64();
                    for (i, d) in chunk.iter().enumerate() {
                        s += if bits >> i & 1 == 1 { -d } else { *d };
                    }
                }
                hits += u64::from(hit(s / n as f64));
            }
            hits
        });
        (1 + hits) as f64 / (1 + cfg.n_resamples) as f64
    };

    Ok(PermutationResult {
        p_value,
        observed_stat: observed,
        ..base
    })
}
