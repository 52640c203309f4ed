use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::embed::{Embedding, EmbeddingStore};
use crate::error::{ApceError, Result};
use crate::exec::Execution;
use crate::model::{KvCache, Model, PrefillCost};
use crate::select::{score_chunks, select_top_k, ChunkScore};
use crate::textpipe::Chunk;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BufferEntry {
    pub chunk_index: usize,
    pub score: f64,
    pub kv_resident: bool,
    pub admitted_at: usize,
}

/// The chunks currently selected, at most `capacity` of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkBuffer {
    capacity: usize,
    entries: BTreeMap<usize, BufferEntry>,
    pub generation_step: usize,
}

impl ChunkBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(ApceError::invalid("buffer capacity must be >= 1"));
        }
        Ok(Self {
            capacity,
            entries: BTreeMap::new(),
            generation_step: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, chunk_index: usize) -> bool {
        self.entries.contains_key(&chunk_index)
    }

    pub fn entry(&self, chunk_index: usize) -> Option<&BufferEntry> {
        self.entries.get(&chunk_index)
    }

    pub fn entries(&self) -> impl Iterator<Item = &BufferEntry> {
        self.entries.values()
    }

    /// Buffered chunk indices in document order.
    pub fn indices(&self) -> Vec<usize> {
        self.entries.keys().copied().collect()
    }

    pub fn min_score(&self) -> Option<f64> {
        self.entries
            .values()
            .map(|e| e.score)
            .min_by(f64::total_cmp)
    }

    /// Records chunks admitted outside a plan (the initial selection). Their
    /// K/V is expected to be built by the caller.
    pub fn admit_initial(&mut self, scores: &[ChunkScore], selected: &[usize]) -> Result<()> {
        if self.entries.len() + selected.len() > self.capacity {
            return Err(ApceError::Consistency(
                "initial selection exceeds capacity".into(),
            ));
        }
        for &i in selected {
            let score = scores
                .iter()
                .find(|s| s.chunk_index == i)
                .map_or(f64::NAN, |s| s.score);
            self.entries.insert(
                i,
                BufferEntry {
                    chunk_index: i,
                    score,
                    kv_resident: true,
                    admitted_at: self.generation_step,
                },
            );
        }
        Ok(())
    }
}

/// How to turn the current buffer into the fresh top-k.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ReplacementPlan {
    pub evict: Vec<usize>,
    pub admit: Vec<usize>,
    /// Retained chunks whose K/V went stale because an admitted or evicted
    /// chunk precedes them in the document.
    pub recompute: Vec<usize>,
    /// Fresh scores of the candidate pool.
    pub scores: Vec<ChunkScore>,
}

impl ReplacementPlan {
    pub fn is_empty(&self) -> bool {
        self.admit.is_empty() && self.evict.is_empty()
    }

    fn score_of(&self, i: usize) -> Option<f64> {
        self.scores
            .iter()
            .find(|s| s.chunk_index == i)
            .map(|s| s.score)
    }

    /// Mean admitted score minus mean evicted score; infinite when nothing
    /// is evicted.
    pub fn score_gain(&self) -> f64 {
        let mean = |xs: &[usize]| {
            xs.iter().filter_map(|&i| self.score_of(i)).sum::<f64>() / xs.len() as f64
        };
        if self.evict.is_empty() {
            f64::INFINITY
        } else {
            mean(&self.admit) - mean(&self.evict)
        }
    }
}

/// Re-scores every chunk in `pool` (all of `store` when `None`) and plans the
/// move from the buffer to the new top-`capacity` set.
pub fn reprioritize(
    buffer: &ChunkBuffer,
    store: &EmbeddingStore,
    query: &Embedding,
    pool: Option<&[usize]>,
    exec: Execution,
) -> Result<ReplacementPlan> {
    let scores = score_chunks(query, store, pool, exec)?;
    if scores.is_empty() {
        return Ok(ReplacementPlan::default());
    }
    let target: BTreeSet<usize> = select_top_k(&scores, buffer.capacity())?
        .selected
        .into_iter()
        .collect();
    let current: BTreeSet<usize> = buffer.indices().into_iter().collect();
    let admit: Vec<usize> = target.difference(&current).copied().collect();
    if admit.is_empty() {
        return Ok(ReplacementPlan {
            scores,
            ..ReplacementPlan::default()
        });
    }
    let evict: Vec<usize> = current.difference(&target).copied().collect();
    // evicting a chunk changes the causal context of everything after it,
    // just as admitting one does
    let boundary = admit[0].min(evict.first().copied().unwrap_or(usize::MAX));
    let recompute = current
        .intersection(&target)
        .copied()
        .filter(|&i| i > boundary)
        .collect();
    Ok(ReplacementPlan {
        evict,
        admit,
        recompute,
        scores,
    })
}

/// Where a plan's K/V work lands.
pub trait KvBackend {
    fn evict(&mut self, chunk_index: usize) -> Result<()>;

    /// Builds or rebuilds K/V for `chunk_indices`, given in document order.
    fn load(&mut self, chunk_indices: &[usize]) -> Result<()>;
}

/// [`KvBackend`] over a model and its cache.
pub struct ModelKv<'a> {
    pub model: &'a Model,
    pub cache: &'a mut KvCache,
    pub chunks: &'a [Chunk],
    pub exec: Execution,
    /// Accumulated work of every `load`.
    pub cost: PrefillCost,
}

impl<'a> ModelKv<'a> {
    pub fn new(
        model: &'a Model,
        cache: &'a mut KvCache,
        chunks: &'a [Chunk],
        exec: Execution,
    ) -> Self {
        Self {
            model,
            cache,
            chunks,
            exec,
            cost: PrefillCost::default(),
        }
    }
}

impl KvBackend for ModelKv<'_> {
    fn evict(&mut self, chunk_index: usize) -> Result<()> {
        if self.cache.evict(chunk_index) {
            Ok(())
        } else {
            Err(ApceError::NotResident(chunk_index))
        }
    }

    fn load(&mut self, chunk_indices: &[usize]) -> Result<()> {
        let picked = chunk_indices
            .iter()
            .map(|&i| {
                self.chunks
                    .iter()
                    .find(|c| c.chunk_index == i)
                    .ok_or_else(|| {
                        ApceError::Consistency(format!("no tokens for admitted chunk {i}"))
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        self.cost += self.model.rebuild(self.cache, &picked, self.exec)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReplacementPolicy {
    /// Rebuild stale retained chunks after an admission.
    pub recompute: bool,
    /// Apply a plan only when [`ReplacementPlan::score_gain`] reaches this.
    pub min_score_gain: f64,
}

impl Default for ReplacementPolicy {
    fn default() -> Self {
        Self {
            recompute: true,
            min_score_gain: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplacementEvent {
    pub step: usize,
    pub evicted: Vec<usize>,
    pub admitted: Vec<usize>,
    pub recomputed: Vec<usize>,
    pub applied: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ReplacementStats {
    pub replacements_taken: usize,
    pub replacements_available: usize,
    pub events: Vec<ReplacementEvent>,
}

/// Carries out `plan`: evicts, then (re)builds admitted and stale chunks
/// together in document order so each sees its final causal context.
/// Returns whether the plan was applied.
pub fn apply_plan(
    buffer: &mut ChunkBuffer,
    plan: &ReplacementPlan,
    backend: &mut dyn KvBackend,
    policy: &ReplacementPolicy,
    stats: &mut ReplacementStats,
) -> Result<bool> {
    if plan.is_empty() {
        return Ok(false);
    }
    if let Some(i) = plan.evict.iter().find(|i| !buffer.contains(**i)) {
        return Err(ApceError::Consistency(format!(
            "evicting chunk {i} that is not buffered"
        )));
    }
    if let Some(i) = plan.admit.iter().find(|i| buffer.contains(**i)) {
        return Err(ApceError::Consistency(format!(
            "admitting chunk {i} that is already buffered"
        )));
    }
    if buffer.len() - plan.evict.len() + plan.admit.len() > buffer.capacity() {
        return Err(ApceError::Consistency(
            "plan overflows buffer capacity".into(),
        ));
    }
    stats.replacements_available += 1;
    let applied = plan.score_gain() >= policy.min_score_gain;
    let recomputed = if policy.recompute {
        plan.recompute.clone()
    } else {
        Vec::new()
    };
    stats.events.push(ReplacementEvent {
        step: buffer.generation_step,
        evicted: plan.evict.clone(),
        admitted: plan.admit.clone(),
        recomputed: if applied {
            recomputed.clone()
        } else {
            Vec::new()
        },
        applied,
    });
    if !applied {
        return Ok(false);
    }

    for &i in &plan.evict {
        backend.evict(i)?;
        buffer.entries.remove(&i);
    }
    let mut rebuild: Vec<usize> = plan.admit.iter().chain(&recomputed).copied().collect();
    rebuild.sort_unstable();
    rebuild.dedup();
    for &i in &plan.admit {
        buffer.entries.insert(
            i,
            BufferEntry {
                chunk_index: i,
                score: plan.score_of(i).unwrap_or(f64::NAN),
                kv_resident: false,
                admitted_at: buffer.generation_step,
            },
        );
    }
    backend.load(&rebuild)?;
    for e in buffer.entries.values_mut() {
        e.kv_resident = true;
        if let Some(s) = plan.score_of(e.chunk_index) {
            e.score = s;
        }
    }
    stats.replacements_taken += 1;
    Ok(true)
}

/// True at every positive multiple of `interval`.
pub fn reprioritization_due(generation_step: usize, interval: usize) -> Result<bool> {
    if interval == 0 {
        return Err(ApceError::invalid("reprioritization interval must be >= 1"));
    }
    Ok(generation_step > 0 && generation_step.is_multiple_of(interval))
}
