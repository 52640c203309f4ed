//! Chunk and query embeddings.
//!
//! The built-in provider is a signed feature-hashing bag of tokens. Any other
//! embedder can be plugged in through [`EmbeddingProvider`], or its output
//! loaded offline from a JSON-lines file with [`load_external_embeddings`].

mod file;
mod hashing;
mod store;

pub use file::{load_external_embeddings, EmbeddingRecord};
pub use hashing::HashEmbedder;
pub use store::{embedding_store_bytes, EmbeddingStore};

use serde::{Deserialize, Serialize};

use crate::error::{ApceError, Result};
use crate::textpipe::{Chunk, Tokenizer};

pub const DEFAULT_DIM: usize = 384;

/// A dense real vector. Provider outputs are unit-norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    /// Wraps raw values, rejecting empty or non-finite input.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(ApceError::invalid("embedding must have d >= 1"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(ApceError::invalid(format!("non-finite entry at index {i}")));
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    /// L2 norm, accumulated in index order.
    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm();
        if n == 0.0 {
            return Err(ApceError::invalid("cannot normalize a zero vector"));
        }
        Ok(Self(self.0.iter().map(|x| x / n).collect()))
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self(self.0.iter().map(|x| x * factor).collect())
    }
}

/// The projection from token sequences to `d`-dimensional embeddings.
pub trait EmbeddingProvider: Send + Sync {
    fn dim(&self) -> usize;

    /// Embeds a non-empty token sequence into a unit-norm vector.
    fn embed_tokens(&self, tokens: &[u32]) -> Result<Embedding>;
}

pub fn embed_chunk(provider: &dyn EmbeddingProvider, chunk: &Chunk) -> Result<Embedding> {
    if chunk.tokens.is_empty() {
        return Err(ApceError::invalid(format!(
            "chunk {} is empty",
            chunk.chunk_index
        )));
    }
    provider.embed_tokens(&chunk.tokens)
}

/// Tokenizes `text` and embeds it with the same provider used for chunks.
pub fn embed_query_text(
    provider: &dyn EmbeddingProvider,
    tokenizer: &Tokenizer,
    text: &str,
) -> Result<Embedding> {
    let toks = tokenizer.tokenize(text);
    if toks.is_empty() {
        return Err(ApceError::invalid("query text has no tokens"));
    }
    provider.embed_tokens(&toks.tokens)
}
