use std::collections::BTreeMap;

use super::{embed_chunk, Embedding, EmbeddingProvider};
use crate::error::{ApceError, Result};
use crate::exec::Execution;
use crate::textpipe::Chunk;

/// Chunk embeddings computed once at prefill, plus the current query.
///
/// Chunk entries can only be inserted, never replaced.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    chunks: BTreeMap<usize, Embedding>,
    query: Option<Embedding>,
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            chunks: BTreeMap::new(),
            query: None,
        }
    }

    /// Embeds every chunk with `provider`. Chunks are independent, so they
    /// are spread over `exec`; accumulation inside a chunk stays serial.
    pub fn build(
        provider: &dyn EmbeddingProvider,
        chunks: &[Chunk],
        exec: Execution,
    ) -> Result<Self> {
        let embedded = exec.map(chunks, |c| embed_chunk(provider, c));
        let mut store = Self::new(provider.dim());
        for (c, e) in chunks.iter().zip(embedded) {
            store.insert_chunk(c.chunk_index, e?)?;
        }
        Ok(store)
    }

    pub fn from_fragment(dim: usize, fragment: BTreeMap<usize, Embedding>) -> Result<Self> {
        let mut store = Self::new(dim);
        for (i, e) in fragment {
            store.insert_chunk(i, e)?;
        }
        Ok(store)
    }

    pub fn insert_chunk(&mut self, chunk_index: usize, e: Embedding) -> Result<()> {
        self.check_dim(&e)?;
        if self.chunks.contains_key(&chunk_index) {
            return Err(ApceError::invalid(format!(
                "chunk {chunk_index} already has an embedding"
            )));
        }
        self.chunks.insert(chunk_index, e);
        Ok(())
    }

    pub fn set_query(&mut self, q: Embedding) -> Result<()> {
        self.check_dim(&q)?;
        self.query = Some(q);
        Ok(())
    }

    pub fn query(&self) -> Option<&Embedding> {
        self.query.as_ref()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn get(&self, chunk_index: usize) -> Option<&Embedding> {
        self.chunks.get(&chunk_index)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &Embedding)> {
        self.chunks.iter().map(|(i, e)| (*i, e))
    }

    pub fn bytes(&self, bytes_per_element: u64) -> u64 {
        embedding_store_bytes(self.len() as u64, self.dim as u64, bytes_per_element)
    }

    fn check_dim(&self, e: &Embedding) -> Result<()> {
        if e.dim() != self.dim {
            return Err(ApceError::DimensionMismatch {
                expected: self.dim,
                actual: e.dim(),
            });
        }
        Ok(())
    }
}

/// Bytes needed to hold `n_chunks` embeddings of width `d`.
pub fn embedding_store_bytes(n_chunks: u64, d: u64, bytes_per_element: u64) -> u64 {
    n_chunks * d * bytes_per_element
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::HashEmbedder;
    use crate::textpipe::chunk;

    #[test]
    fn store_bytes() {
        assert_eq!(embedding_store_bytes(1, 384, 2), 768);
        assert_eq!(embedding_store_bytes(37, 384, 2), 28_416);
        assert_eq!(embedding_store_bytes(0, 384, 2), 0);
    }

    #[test]
    fn build_is_stable_and_write_once() {
        let toks: Vec<u32> = (0..100).map(|i| i * 31 % 977).collect();
        let chunks = chunk(&toks, 16).unwrap();
        let p = HashEmbedder::new(64).unwrap();
        let a = EmbeddingStore::build(&p, &chunks, Execution::Sequential).unwrap();
        let mut b = EmbeddingStore::build(&p, &chunks, Execution::Parallel).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 7);
        let first = a.get(3).unwrap().clone();
        assert!(b.insert_chunk(3, first.clone()).is_err());
        assert_eq!(a.get(3).unwrap(), &first);
        let wrong = Embedding::new(vec![1.0; 8]).unwrap();
        assert!(matches!(
            b.insert_chunk(99, wrong),
            Err(ApceError::DimensionMismatch { .. })
        ));
    }
}
