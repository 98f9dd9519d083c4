//! Chunk-wise machine translation with masked-span infilling models.

pub mod analysis;
pub mod backend;
pub mod chunking;
pub mod cli;
pub mod corpus_io;
pub mod engine;
pub mod metrics;
pub mod templates;
