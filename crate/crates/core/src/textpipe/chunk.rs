use serde::{Deserialize, Serialize};

use crate::error::{ApceError, Result};

/// A contiguous slice of the document, the unit of selection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub chunk_index: usize,
    pub tokens: Vec<u32>,
    /// Index of the first token in the full sequence.
    pub doc_token_offset: usize,
}

impl Chunk {
    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn positions(&self) -> std::ops::Range<usize> {
        self.doc_token_offset..self.doc_token_offset + self.size()
    }
}

pub fn n_chunks(n_tokens: usize, chunk_size: usize) -> usize {
    n_tokens.div_ceil(chunk_size)
}

/// Partitions `tokens` into `ceil(N / m)` chunks; only the last may be short.
pub fn chunk(tokens: &[u32], chunk_size: usize) -> Result<Vec<Chunk>> {
    if chunk_size == 0 {
        return Err(ApceError::invalid("chunk_size must be >= 1"));
    }
    Ok(tokens
        .chunks(chunk_size)
        .enumerate()
        .map(|(i, slice)| Chunk {
            chunk_index: i,
            tokens: slice.to_vec(),
            doc_token_offset: i * chunk_size,
        })
        .collect())
}
