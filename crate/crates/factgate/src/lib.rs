//! Factual-consistency gate for machine-generated summaries.
//!
//! The pipeline decomposes a source document and its summary into atomic
//! facts, cross-compares every summary-fact/source-fact pair against an
//! eight-way factuality taxonomy using yes/no next-token probabilities from
//! a pluggable backend, aggregates the pair scores into one feature vector
//! per summary fact, and classifies with a Gaussian Naive Bayes model. A
//! summary is judged by its worst-scoring atomic fact.
//!
//! Modules follow the processing order:
//!
//! * [`taxonomy`] / [`types`] — categories, facts, feature vectors, verdicts
//! * [`dataset`] — benchmark ingestion, sampling, val/test splits
//! * [`backend`] — scoring backends (remote HTTP, deterministic heuristic)
//!   plus a content-addressed response cache
//! * [`facts`] — atomic-fact extraction and manual fact files
//! * [`scoring`] — pairwise cross-comparison and feature aggregation
//! * [`classifier`] — Naive Bayes training, posteriors, worst-fact verdicts
//! * [`analysis`] — AUC, threshold metrics, feature correlation, PCA
//! * [`synth`] — deterministic synthetic corpus with known ground truth
//! * [`pipeline`] — end-to-end command orchestration and run artifacts

pub mod analysis;
pub mod backend;
pub mod classifier;
pub mod dataset;
pub mod facts;
pub mod pipeline;
pub mod scoring;
pub mod synth;
pub mod taxonomy;
pub mod types;

pub use taxonomy::FactualityCategory;
pub use types::{AtomicFact, ClassLabel, FactOrigin, FeatureVector, Provenance, Verdict};
