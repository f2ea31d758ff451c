//! Hybrid-vector retrieval over visually rich documents.
//!
//! Pages carry a pooled single-vector embedding and a multi-vector patch
//! embedding. Retrieval first scores visually-summarized pages (VS-pages,
//! title crops from windows of consecutive pages) with the cheap pooled
//! vectors, narrows to candidate pages, then reranks a small set with
//! late-interaction MaxSim over the query's key tokens.
//!
//! Retrieval methods implement [`retriever::Retriever`] and are looked up by
//! name in a [`retriever::Registry`].

pub mod cli;
pub mod error;
pub mod eval;
pub mod keytoken;
pub mod pipeline;
pub mod retriever;
pub mod scoring;
pub mod store;
pub mod synth;
pub mod variants;
pub mod vspage;

pub use error::{Error, Result};
pub use pipeline::{run_query, PipelineConfig, StageTrace};
pub use retriever::{MethodParams, Registry, Retrieval, Retriever};
pub use store::{build_index, load_queries, CorpusIndex, PageId, QueryRecord};
