//! Staged document-level machine translation over chat LLMs.
//!
//! The crate covers the whole experimental loop:
//!
//! * [`corpus`]: segment ingestion and token-capped document assembly
//! * [`prompts`]: the stage and baseline prompt templates
//! * [`llm`]: chat backends (HTTP, scripted mock, record/replay cache)
//! * [`pipeline`]: research, draft, refine and proofread orchestration
//! * [`baselines`]: zero-shot, segment-level and MAPS comparison systems
//! * [`metrics`]: chrF and external metric plugins
//! * [`stats`]: paired permutation tests, significance clusters, domain deltas
//! * [`report`]: run manifests, tables and the run directory layout
//!
//! Data-parallel inner loops (batch translation, Monte Carlo resampling,
//! exact sign-flip enumeration, batch chrF) run on rayon when the `parallel`
//! feature is enabled and fall back to plain iteration otherwise. See
//! [`exec::Execution`].

#![forbid(unsafe_code)]

pub mod baselines;
pub mod config;
pub mod corpus;
pub mod digest;
pub mod exec;
pub mod llm;
pub mod metrics;
pub mod pipeline;
pub mod prompts;
pub mod report;
pub mod stats;

pub use corpus::{AssembledDocument, Domain, Segment};
pub use exec::Execution;
pub use llm::{ChatBackend, ChatMessage, Conversation, GenerationConfig, Role};
pub use metrics::Orientation;
pub use pipeline::{StageOutputs, StageSet};
pub use prompts::{TemplateId, TemplateRegistry};
