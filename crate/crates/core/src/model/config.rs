use serde::{Deserialize, Serialize};

use crate::error::{ApceError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_head: usize,
    /// Aggregate K (or V) width across key/value heads.
    pub d_kv_total: usize,
    pub vocab_size: usize,
    pub rope_theta: f64,
    pub init_seed: u64,
    pub max_position: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_layers: 4,
            n_heads: 4,
            d_model: 128,
            d_head: 32,
            d_kv_total: 64,
            vocab_size: 32768,
            rope_theta: 10_000.0,
            init_seed: 0,
            max_position: 1 << 16,
        }
    }
}

impl ModelConfig {
    /// One layer, one head, four-wide: just enough for counter measurements
    /// at long sequence lengths.
    pub fn micro(vocab_size: usize, max_position: usize) -> Self {
        Self {
            n_layers: 1,
            n_heads: 1,
            d_model: 4,
            d_head: 4,
            d_kv_total: 4,
            vocab_size,
            rope_theta: 10_000.0,
            init_seed: 0,
            max_position,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.init_seed = seed;
        self
    }

    pub fn n_kv_heads(&self) -> usize {
        self.d_kv_total / self.d_head
    }

    pub fn d_ff(&self) -> usize {
        2 * self.d_model
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("d_model", self.d_model),
            ("d_head", self.d_head),
            ("d_kv_total", self.d_kv_total),
            ("vocab_size", self.vocab_size),
            ("max_position", self.max_position),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(ApceError::invalid(format!("model.{name} must be positive")));
        }
        if self.n_heads * self.d_head != self.d_model {
            return Err(ApceError::invalid("d_model must equal n_heads * d_head"));
        }
        if !self.d_head.is_multiple_of(2) {
            return Err(ApceError::invalid(
                "d_head must be even for rotary embeddings",
            ));
        }
        if !self.d_kv_total.is_multiple_of(self.d_head)
            || !self.n_heads.is_multiple_of(self.n_kv_heads())
        {
            return Err(ApceError::invalid(
                "d_kv_total must be a multiple of d_head dividing the query heads",
            ));
        }
        if !(self.rope_theta.is_finite() && self.rope_theta > 1.0) {
            return Err(ApceError::invalid("rope_theta must be > 1"));
        }
        Ok(())
    }
}
