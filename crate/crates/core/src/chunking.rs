//! Whitespace tokenization and fixed-size word chunking.
//!
//! A token is a whitespace-delimited unit of text. Tokens are opaque: no
//! Unicode normalization or script-specific segmentation is applied, so a
//! prompt built from them reproduces the source bytes exactly.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChunkError {
    #[error("cannot segment an empty sentence")]
    EmptySentence,
    #[error("chunk size must be at least 1 (got {0})")]
    InvalidChunkSize(usize),
}

/// A sentence split on runs of whitespace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedSentence {
    pub raw: String,
    pub tokens: Vec<String>,
}

impl TokenizedSentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Tokens joined with single spaces.
    pub fn normalized(&self) -> String {
        self.tokens.join(" ")
    }
}

/// A consecutive run of source tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub index: usize,
    pub tokens: Vec<String>,
}

impl Chunk {
    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// A sentence cut into chunks of `m` tokens. Only the last chunk may be short.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkedSentence {
    pub m: usize,
    pub chunks: Vec<Chunk>,
}

impl ChunkedSentence {
    /// Number of chunks.
    pub fn beta(&self) -> usize {
        self.chunks.len()
    }

    pub fn token_count(&self) -> usize {
        self.chunks.iter().map(Chunk::len).sum()
    }

    /// All tokens in their original order.
    pub fn flatten(&self) -> Vec<String> {
        self.chunks
            .iter()
            .flat_map(|c| c.tokens.iter().cloned())
            .collect()
    }
}

pub fn tokenize(text: &str) -> TokenizedSentence {
    TokenizedSentence {
        raw: text.to_string(),
        tokens: text.split_whitespace().map(str::to_string).collect(),
    }
}

/// Splits `sentence` into `ceil(n / m)` chunks; the remainder stays as a
/// short final chunk and is never merged into its predecessor.
pub fn segment(sentence: &TokenizedSentence, m: usize) -> Result<ChunkedSentence, ChunkError> {
    if m < 1 {
        return Err(ChunkError::InvalidChunkSize(m));
    }
    if sentence.is_empty() {
        return Err(ChunkError::EmptySentence);
    }
    let chunks = sentence
        .tokens
        .chunks(m)
        .enumerate()
        .map(|(index, tokens)| Chunk {
            index,
            tokens: tokens.to_vec(),
        })
        .collect();
    Ok(ChunkedSentence { m, chunks })
}

pub fn chunk_count(tokens: usize, m: usize) -> usize {
    tokens.div_ceil(m)
}
