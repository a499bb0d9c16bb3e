//! Hybrid word and entity pseudo-relevance feedback for document retrieval.
//!
//! The crate covers the whole path from a pre-linked corpus to evaluated
//! runs:
//!
//! - [`corpus`]: JSONL ingestion, topics, sentence-window passage sharding.
//! - [`index`]: word and entity inverted indexes with exhaustive BM25.
//! - [`rerank`]: pluggable passage scorers and max-passage aggregation.
//! - [`expansion`]: relevance models over word and entity vocabularies, the
//!   entity co-occurrence model, and duet (word + entity) retrieval.
//! - [`adaptive`]: adaptive expansion that alternates re-ranking batches
//!   between the first-stage run and a refreshed expansion frontier.
//! - [`eval`]: NDCG, MAP, recall and paired t-tests.
//! - [`pipeline`] and [`sweep`]: end-to-end pipelines, configuration, and
//!   cross-validated grid search.
//!
//! See the `examples/` directory for one runnable program per capability.

pub mod adaptive;
pub mod analysis;
pub mod collection;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod expansion;
pub mod index;
pub mod pipeline;
pub mod rerank;
pub mod run;
pub mod sweep;
pub mod synthetic;

pub use error::{Error, Result};
