//! Document-quality curation toolkit.
//!
//! The crate covers the full desk-scale curation workflow: consolidating
//! multi-vote quality annotations into labels, training lightweight MLP
//! regression heads on frozen document embeddings, computing per-head
//! percentile thresholds, and streaming corpora through an ensemble filter
//! that keeps a document only when every head rates it above its own
//! threshold.
//!
//! Modules map onto the pipeline stages:
//!
//! * [`corpus`] — JSONL document model, shard streaming, token accounting.
//! * [`annotations`] — vote validation, majority/mean aggregation, agreement
//!   statistics, balanced sampling.
//! * [`metrics`] — Spearman correlation with tie handling, significance,
//!   macro-F1 and confusion matrices.
//! * [`embeddings`] — embedding providers (mock, binary store, remote HTTP)
//!   behind one trait.
//! * [`regressor`] — the scoring head: forward pass, from-scratch training
//!   (backprop, AdamW, cosine schedule, Spearman early stopping), head files.
//! * [`thresholds`] — exact quantiles and persisted threshold specs.
//! * [`pipeline`] — the streaming ensemble filter with shard checkpointing
//!   and retention statistics.
//! * [`cli`] — the `curator` command-line front end.

pub mod annotations;
pub mod cli;
pub mod corpus;
pub mod embeddings;
pub mod metrics;
pub mod pipeline;
pub mod regressor;
pub mod rng;
pub mod thresholds;
