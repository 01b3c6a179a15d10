//! Trustworthiness scoring of LLM answers against a curated body of
//! knowledge.
//!
//! The *truster* is built from a text corpus: triplets are extracted by an
//! LLM, assembled into a graph that a subject matter expert reviews, and the
//! validated triplets are rendered as sentences and embedded into an exact
//! cosine index. The *validator* extracts triplets from an answer, embeds
//! them with the same provider and scores each sentence against the index.

pub mod compatibility;
pub mod config;
pub mod corpus;
pub mod embedding;
pub mod knowledge_graph;
pub mod llm_gateway;
pub mod pipeline;
pub mod prompts;
pub mod review;
pub mod triplet;
pub mod vector_index;
