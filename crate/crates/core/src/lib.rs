//! Measure how factual QA accuracy relates to entity co-occurrence counts in
//! a text corpus.
//!
//! The pipeline: ingest a sharded corpus ([`corpus`]), resolve entity
//! mentions per document ([`linker`]), build an entity-to-document-id index
//! with fast occurrence and co-occurrence counts ([`index`]), resolve QA
//! examples to salient entity pairs and their relevant-document counts
//! ([`qa`]), then score external model predictions against those counts
//! ([`eval`], [`stats`]). [`counterfactual`] emits a corpus with the
//! relevant documents of sampled questions removed, and [`retrieval`]
//! provides BM25 retrieval, recall curves, and few-shot prompt construction
//! for retrieval-augmented runs.

pub mod corpus;
pub mod counterfactual;
pub mod error;
pub mod eval;
pub mod index;
pub mod linker;
pub mod qa;
pub mod retrieval;
pub mod stats;
pub mod util;

pub use error::{Error, Result};
