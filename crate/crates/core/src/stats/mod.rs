//! Significance testing and delta summaries over per-document scores.

pub mod cluster;
pub mod deltas;
pub mod permutation;

use thiserror::Error;

pub use cluster::{significance_clusters, ClusterConfig, SystemScores};
pub use deltas::{format_delta, per_domain_deltas, DeltaTable, DomainScore, Magnitude};
pub use permutation::{
    paired_permutation_test, paired_permutation_test_with, Alternative, PairedScores,
    PermutationConfig, PermutationResult, Resamples,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("need at least 2 paired documents, got {0}")]
    InsufficientData(usize),
    #[error("duplicate document id {0}")]
    DuplicateDocument(String),
    #[error("non-finite score for document {0}")]
    NonFinite(String),
    #[error("document {0} is not scored by both systems")]
    Unpaired(String),
    #[error("system {system} has no documents in domain {domain}")]
    MissingDomain { system: String, domain: String },
    #[error("unknown system {0}")]
    UnknownSystem(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}
