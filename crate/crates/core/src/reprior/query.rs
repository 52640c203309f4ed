use serde::{Deserialize, Serialize};

use crate::embed::{embed_query_text, Embedding, EmbeddingProvider};
use crate::error::{ApceError, Result};
use crate::textpipe::Tokenizer;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QueryConfig {
    /// Trailing characters of the instruction that are embedded.
    pub tail_chars: usize,
    /// Most recent generated tokens blended in.
    pub recent_tokens: usize,
    /// Weight of the instruction term.
    pub alpha: f64,
}

impl Default for QueryConfig {
    fn default() -> Self {
        Self {
            tail_chars: 100,
            recent_tokens: 50,
            alpha: 0.5,
        }
    }
}

impl QueryConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(ApceError::invalid("query.alpha must be in [0, 1]"));
        }
        if self.tail_chars == 0 {
            return Err(ApceError::invalid("query.tail_chars must be >= 1"));
        }
        Ok(())
    }
}

/// Query embedding that follows the generation. Only refreshed at
/// reprioritization boundaries.
#[derive(Debug, Clone, PartialEq)]
pub struct EnhancedQueryState {
    pub instruction_text: String,
    pub cfg: QueryConfig,
    instruction_embedding: Embedding,
    current: Embedding,
}

fn tail(text: &str, n: usize) -> &str {
    let count = text.chars().count();
    match text.char_indices().nth(count.saturating_sub(n)) {
        Some((i, _)) if count > n => &text[i..],
        _ => text,
    }
}

impl EnhancedQueryState {
    pub fn new(
        instruction: &str,
        cfg: QueryConfig,
        provider: &dyn EmbeddingProvider,
        tokenizer: &Tokenizer,
    ) -> Result<Self> {
        cfg.validate()?;
        if instruction.trim().is_empty() {
            return Err(ApceError::invalid("instruction text is empty"));
        }
        let tail_text = tail(instruction, cfg.tail_chars);
        // a tail made only of separators falls back to the full instruction
        let e = embed_query_text(provider, tokenizer, tail_text)
            .or_else(|_| embed_query_text(provider, tokenizer, instruction))?;
        Ok(Self {
            instruction_text: instruction.to_string(),
            cfg,
            instruction_embedding: e.clone(),
            current: e,
        })
    }

    pub fn current(&self) -> &Embedding {
        &self.current
    }

    pub fn instruction_embedding(&self) -> &Embedding {
        &self.instruction_embedding
    }
}

/// `normalize(α·f(instruction tail) + (1−α)·f(last generated tokens))`; just
/// the instruction term while nothing has been generated.
pub fn update_enhanced_query(
    state: &mut EnhancedQueryState,
    generated: &[u32],
    provider: &dyn EmbeddingProvider,
) -> Result<Embedding> {
    let a = &state.instruction_embedding;
    let window = &generated[generated.len().saturating_sub(state.cfg.recent_tokens)..];
    if window.is_empty() || state.cfg.recent_tokens == 0 {
        state.current = a.clone();
        return Ok(state.current.clone());
    }
    let b = provider.embed_tokens(window)?;
    let alpha = state.cfg.alpha;
    let mixed: Vec<f64> = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| alpha * x + (1.0 - alpha) * y)
        .collect();
    state.current = match Embedding::new(mixed)?.normalized() {
        Ok(e) => e,
        Err(_) => a.clone(),
    };
    Ok(state.current.clone())
}
