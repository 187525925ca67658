//! Recovering missing issue-commit traceability links.
//!
//! `linkrec` is a batch pipeline that mines ground-truth links from
//! repository exports, builds temporally filtered candidate commit pools per
//! issue, retrieves top-K candidates with sparse (BM25 family) and dense
//! (flat / HNSW / LSH / random-projection-forest) indexes, fuses ranked lists
//! with Reciprocal Rank Fusion, reranks short candidate lists with trainable
//! and remote scorers, and evaluates everything with standard ranking
//! metrics.
//!
//! The stages are exposed both as library modules and through the `linkrec`
//! CLI:
//!
//! - [`corpus`] — ingest exported issues/commits, filter commits, mine true
//!   links, build scrubbed retrieval documents and queries.
//! - [`temporal`] — window policies over issue timestamps, per-issue
//!   candidate pools, true-link coverage reports.
//! - [`retrieval`] — tokenization, sparse and vector indexes, RRF fusion.
//! - [`rerank`] — feature extraction, a from-scratch random forest, a TF-IDF
//!   threshold scorer, and remote (LLM / pairwise-scoring) rerankers.
//! - [`eval`] — chronological splits, test sampling, Precision/Hit/Recall/
//!   MRR/NDCG at K, and run reports.
//! - [`pipeline`] — declarative run configuration, stage orchestration, and
//!   artifact persistence.

pub mod corpus;
pub mod error;
pub mod eval;
pub mod pipeline;
#[cfg(feature = "remote")]
pub mod remote;
pub mod rerank;
pub mod retrieval;
pub mod temporal;
pub mod time;
mod util;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
