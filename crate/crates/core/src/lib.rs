//! Location-type-conditioned next-word prediction for geo-tagged micro-blog
//! text: corpus ingestion and enrichment, divergence statistics, an n-gram
//! baseline, and a bidirectional-LSTM classifier with optional place input.

pub mod corpus;
pub mod divergence;
pub mod embeddings;
pub mod eval;
pub mod neural;
pub mod ngram;
pub mod runcfg;
pub mod sampler;
pub mod vocab;
