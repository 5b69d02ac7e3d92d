//! Honeypot detection pipeline for Ethereum smart contracts.
//!
//! The crate classifies contracts into honeypots and non-honeypots from
//! three feature families: source-code metadata, aggregated transaction
//! statistics, and fund-flow case frequencies. It ships its own gradient
//! boosted tree learner, the evaluation protocols (stratified
//! cross-validation, leave-one-technique-out recall, ensemble triage
//! ranking) and a deterministic synthetic corpus generator for offline
//! testing.
//!
//! Module map:
//!
//! - [`chain_data`] — raw contract/transaction records, Etherscan-style
//!   ingestion, label propagation, JSONL persistence.
//! - [`fundflow`] — the 244-case fund-flow model: enumeration, per-event
//!   classification, frequency vectors and partial-assignment queries.
//! - [`features`] — feature extraction, matrix assembly and preprocessing
//!   (filtering, zero-fill, dead-column removal, min-max scaling).
//! - [`gbdt`] — gradient boosted decision trees for weighted binary
//!   classification with gain-based feature importance.
//! - [`eval`] — AUROC, stratified k-fold CV, leave-one-technique-out,
//!   triage ranking.
//! - [`synth`] — synthetic labeled corpora with planted behavioral
//!   archetypes.

pub mod chain_data;
pub mod eval;
pub mod features;
pub mod fundflow;
pub mod gbdt;
pub mod synth;
