//! Cosine scoring of chunks against the query and top-k selection.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::embed::{Embedding, EmbeddingStore};
use crate::error::{ApceError, Result};
use crate::exec::Execution;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChunkScore {
    pub chunk_index: usize,
    pub score: f64,
}

/// Outcome of a top-k selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    /// Selected chunk indices in document order.
    pub selected: Vec<usize>,
    pub scores: Vec<ChunkScore>,
    pub k_effective: usize,
}

/// `qᵀc / (‖q‖‖c‖)`, clamped to `[-1, 1]`.
pub fn cosine(q: &Embedding, c: &Embedding) -> Result<f64> {
    if q.dim() != c.dim() {
        return Err(ApceError::DimensionMismatch {
            expected: q.dim(),
            actual: c.dim(),
        });
    }
    let (qn, cn) = (q.norm(), c.norm());
    if qn == 0.0 || cn == 0.0 {
        return Err(ApceError::invalid("cosine of a zero-norm vector"));
    }
    let dot: f64 = q.values().iter().zip(c.values()).map(|(a, b)| a * b).sum();
    Ok((dot / (qn * cn)).clamp(-1.0, 1.0))
}

/// Ranking order: higher score first, then smaller chunk index.
pub fn rank_order(a: &ChunkScore, b: &ChunkScore) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.chunk_index.cmp(&b.chunk_index))
}

/// Scores every chunk in `store`, or only `pool` when given.
pub fn score_chunks(
    query: &Embedding,
    store: &EmbeddingStore,
    pool: Option<&[usize]>,
    exec: Execution,
) -> Result<Vec<ChunkScore>> {
    let indices: Vec<usize> = match pool {
        Some(p) => p.to_vec(),
        None => store.iter().map(|(i, _)| i).collect(),
    };
    exec.map(&indices, |&i| {
        let c = store
            .get(i)
            .ok_or_else(|| ApceError::invalid(format!("no embedding for chunk {i}")))?;
        Ok(ChunkScore {
            chunk_index: i,
            score: cosine(query, c)?,
        })
    })
    .into_iter()
    .collect()
}

/// Picks the `k` best scores (ties go to the smaller chunk index) and returns
/// them in document order. `k > n` selects everything.
pub fn select_top_k(scores: &[ChunkScore], k: usize) -> Result<SelectionResult> {
    if k == 0 {
        return Err(ApceError::invalid("k must be >= 1"));
    }
    if let Some(s) = scores.iter().find(|s| !s.score.is_finite()) {
        return Err(ApceError::invalid(format!(
            "non-finite score for chunk {}",
            s.chunk_index
        )));
    }
    let k_effective = k.min(scores.len());
    let mut ranked = scores.to_vec();
    if k_effective < ranked.len() {
        ranked.select_nth_unstable_by(k_effective - 1, rank_order);
        ranked.truncate(k_effective);
    }
    let mut selected: Vec<usize> = ranked.iter().map(|s| s.chunk_index).collect();
    selected.sort_unstable();
    Ok(SelectionResult {
        selected,
        scores: scores.to_vec(),
        k_effective,
    })
}
