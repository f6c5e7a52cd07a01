//! Knowledge-base augmented triplet extraction.
//!
//! The pipeline builds a knowledge base (KB) from labeled training and
//! validation sentences, retrieves either context triplets or
//! (sentence, triplets) examples for each input sentence by embedding
//! similarity, renders a prompt, asks a generator for triplets, parses the
//! answer and scores it with micro-averaged F1.
//!
//! Alongside the pipeline sit the analysis tools used to study it: the
//! context hit probability `P(N_KB)` curve, a random extraction baseline with
//! Monte Carlo, exhaustive and closed-form estimates, and least-squares fits
//! for KB-scale and model-size trends.

pub mod analysis;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod extraction;
pub mod http;
pub mod parsing;
pub mod prompting;
pub mod retriever;
pub mod vector_index;

pub use corpus::{AnnotatedSentence, Dataset, DatasetStats, KnowledgeBase, Triplet};
pub use encoder::{EmbeddingVector, Encoder, EncoderConfig};
pub use error::{Error, Result};
pub use evaluation::EvalReport;
pub use retriever::RetrievedContext;
pub use vector_index::VectorIndex;
