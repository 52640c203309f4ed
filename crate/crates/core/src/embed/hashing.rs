use super::{Embedding, EmbeddingProvider};
use crate::error::{ApceError, Result};

const SIGN_SALT: u32 = 0x9e37_79b9;

fn fmix32(mut h: u32) -> u32 {
    h ^= h >> 16;
    h = h.wrapping_mul(0x85eb_ca6b);
    h ^= h >> 13;
    h = h.wrapping_mul(0xc2b2_ae35);
    h ^= h >> 16;
    h
}

/// Signed feature hashing: each token adds ±1 to one of `d` buckets, and the
/// result is L2-normalized. Token order does not matter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashEmbedder {
    dim: usize,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(ApceError::invalid("embedding dim must be >= 1"));
        }
        Ok(Self { dim })
    }

    fn bucket(&self, token: u32) -> usize {
        fmix32(token) as usize % self.dim
    }

    fn sign(token: u32) -> f64 {
        if fmix32(token ^ SIGN_SALT) & 1 == 1 {
            -1.0
        } else {
            1.0
        }
    }
}

impl EmbeddingProvider for HashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_tokens(&self, tokens: &[u32]) -> Result<Embedding> {
        if tokens.is_empty() {
            return Err(ApceError::invalid("cannot embed an empty token sequence"));
        }
        let mut acc = vec![0.0f64; self.dim];
        for &t in tokens {
            acc[self.bucket(t)] += Self::sign(t);
        }
        // Signs can cancel exactly; fall back to unsigned counts.
        if acc.iter().all(|&x| x == 0.0) {
            for &t in tokens {
                acc[self.bucket(t)] += 1.0;
            }
        }
        Embedding::new(acc)?.normalized()
    }
}
