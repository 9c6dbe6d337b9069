//! Greedy significance clustering.
//!
//! Systems are sorted best-first by mean score. Each system is tested
//! against the best member of the current cluster; it joins when
//! `p >= alpha` and otherwise opens a new cluster.

use std::collections::BTreeMap;

use super::permutation::{paired_permutation_test_with, PairedScores, PermutationConfig};
use super::StatsError;
use crate::metrics::Orientation;

#[derive(Debug, Clone, PartialEq)]
pub struct SystemScores {
    pub name: String,
    pub scores: BTreeMap<String, f64>,
}

impl SystemScores {
    pub fn new(name: impl Into<String>, scores: BTreeMap<String, f64>) -> Self {
        SystemScores {
            name: name.into(),
            scores,
        }
    }

    pub fn mean(&self) -> f64 {
        if self.scores.is_empty() {
            return 0.0;
        }
        self.scores.values().sum::<f64>() / self.scores.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterConfig {
    pub alpha: f64,
    pub test: PermutationConfig,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            alpha: 0.05,
            test: PermutationConfig::default(),
        }
    }
}

/// Ordered clusters of system names, best cluster first.
pub fn significance_clusters(
    systems: &[SystemScores],
    orientation: Orientation,
    cfg: &ClusterConfig,
) -> Result<Vec<Vec<String>>, StatsError> {
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        return Err(StatsError::InvalidConfig(format!("alpha {} not in (0,1)", cfg.alpha)));
    }
    if let Some(first) = systems.first() {
        for s in &systems[1..] {
            if let Some(id) = s
                .scores
                .keys()
                .find(|k| !first.scores.contains_key(*k))
                .or_else(|| first.scores.keys().find(|k| !s.scores.contains_key(*k)))
            {
                return Err(StatsError::Unpaired(id.clone()));
            }
        }
    }
    let mut order: Vec<&SystemScores> = systems.iter().collect();
    // Stable sort keeps input order among equal means.
    order.sort_by(|a, b| orientation.cmp_best_first(a.mean(), b.mean()));

    let mut clusters: Vec<Vec<String>> = Vec::new();
    let mut leader: Option<&SystemScores> = None;
    for sys in order {
        let joins = match leader {
            None => false,
            Some(best) => {
                let paired =
                    PairedScores::from_maps(&best.name, &best.scores, &sys.name, &sys.scores, orientation)?;
                paired_permutation_test_with(&paired, &cfg.test)?.p_value >= cfg.alpha
            }
        };
        if joins {
            clusters.last_mut().expect("leader implies a cluster").push(sys.name.clone());
        } else {
            clusters.push(vec![sys.name.clone()]);
            leader = Some(sys);
        }
    }
    Ok(clusters)
}
