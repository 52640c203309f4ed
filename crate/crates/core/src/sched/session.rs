use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::trace::{EventKind, GenerationTrace, TraceEvent};
use crate::embed::{Embedding, EmbeddingProvider, EmbeddingStore};
use crate::error::{ApceError, Result};
use crate::exec::Execution;
use crate::model::{Model, PrefillCost};
use crate::reprior::{
    apply_plan, reprioritization_due, reprioritize, update_enhanced_query, ChunkBuffer,
    EnhancedQueryState, ModelKv, QueryConfig, ReplacementPolicy, ReplacementStats,
};
use crate::select::{score_chunks, select_top_k, ChunkScore};
use crate::textpipe::{Chunk, Tokenizer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Dense,
    Apce,
}

impl std::str::FromStr for Mode {
    type Err = ApceError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dense" => Ok(Mode::Dense),
            "apce" => Ok(Mode::Apce),
            other => Err(ApceError::invalid(format!("unknown mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Dense => "dense",
            Mode::Apce => "apce",
        })
    }
}

/// Simulated I/O and compute speeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoadModel {
    pub per_chunk_load_latency: f64,
    pub async_start_chunks: usize,
    pub decode_latency: f64,
    /// Seconds charged per attention-score element computed.
    pub cost_per_score_element: f64,
}

impl Default for LoadModel {
    fn default() -> Self {
        Self {
            per_chunk_load_latency: 0.0,
            async_start_chunks: 4,
            decode_latency: 0.0,
            cost_per_score_element: 1e-9,
        }
    }
}

impl LoadModel {
    pub fn validate(&self) -> Result<()> {
        let lat = [
            self.per_chunk_load_latency,
            self.decode_latency,
            self.cost_per_score_element,
        ];
        if lat.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(ApceError::invalid("latencies must be finite and >= 0"));
        }
        if self.async_start_chunks == 0 {
            return Err(ApceError::invalid("async_start_chunks must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReprioritizationConfig {
    pub enabled: bool,
    pub interval: usize,
    pub policy: ReplacementPolicy,
}

impl Default for ReprioritizationConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            interval: 50,
            policy: ReplacementPolicy::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionConfig {
    /// Buffer capacity `k`.
    pub max_chunks: usize,
    pub max_new_tokens: usize,
    pub reprioritization: ReprioritizationConfig,
    pub query: QueryConfig,
    pub load: LoadModel,
    pub exec: Execution,
    /// Teacher-forced continuation: step `i` emits `forced_tokens[i]`
    /// instead of the greedy choice while it lasts.
    pub forced_tokens: Option<Vec<u32>>,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            max_chunks: 4,
            max_new_tokens: 32,
            reprioritization: ReprioritizationConfig::default(),
            query: QueryConfig::default(),
            load: LoadModel::default(),
            exec: Execution::default(),
            forced_tokens: None,
        }
    }
}

pub struct SessionInputs<'a> {
    pub chunks: &'a [Chunk],
    /// Chunk embeddings, computed once up front.
    pub store: &'a EmbeddingStore,
    pub query_text: &'a str,
    pub provider: &'a dyn EmbeddingProvider,
    pub tokenizer: &'a Tokenizer,
    /// Fixed query embedding (offline providers cannot embed new text).
    pub static_query: Option<&'a Embedding>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionSnapshot {
    pub step: usize,
    pub selected: Vec<usize>,
    pub scores: Vec<ChunkScore>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunCounters {
    pub prefill: PrefillCost,
    pub recompute: PrefillCost,
    /// Attention-score elements of each decode step.
    pub decode_score_elements: Vec<u64>,
    pub reprioritization_events: usize,
    pub max_resident_tokens: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationOutcome {
    pub mode: Mode,
    pub n_chunks: usize,
    pub n_tokens: usize,
    pub tokens: Vec<u32>,
    pub trace: GenerationTrace,
    pub stats: ReplacementStats,
    pub selections: Vec<SelectionSnapshot>,
    pub counters: RunCounters,
    pub final_resident: Vec<usize>,
    /// Wall-clock seconds; profiling only.
    #[serde(skip)]
    pub wall_seconds: f64,
}

fn seed_token(tokenizer: &Tokenizer, query: &str, vocab: usize) -> u32 {
    tokenizer
        .tokenize(query)
        .tokens
        .last()
        .map_or(0, |&t| t % vocab as u32)
}

/// Runs one generation session and records its virtual-time trace.
pub fn simulate_generation(
    model: &Model,
    inputs: &SessionInputs<'_>,
    mode: Mode,
    cfg: &SessionConfig,
) -> Result<GenerationOutcome> {
    let wall = Instant::now();
    cfg.load.validate()?;
    let chunks = inputs.chunks;
    let n = chunks.len();
    if n == 0 {
        return Err(ApceError::invalid("document has no tokens"));
    }
    if cfg.max_chunks == 0 {
        return Err(ApceError::invalid("max_chunks must be >= 1"));
    }
    let exec = cfg.exec;
    let load = cfg.load;
    let c = load.cost_per_score_element;
    let n_tokens: usize = chunks.iter().map(Chunk::size).sum();
    let arrival = |i: usize| (i + 1) as f64 * load.per_chunk_load_latency;

    let mut events: Vec<TraceEvent> = (0..n)
        .map(|i| TraceEvent {
            chunk: Some(i),
            ..TraceEvent::new(arrival(i), EventKind::ChunkLoaded)
        })
        .collect();
    let mut counters = RunCounters::default();
    let mut stats = ReplacementStats::default();
    let mut selections = Vec::new();
    let mut cache = model.new_cache();

    let mut query_state = match (mode, inputs.static_query) {
        (Mode::Apce, None) => Some(EnhancedQueryState::new(
            inputs.query_text,
            cfg.query,
            inputs.provider,
            inputs.tokenizer,
        )?),
        _ => None,
    };
    let current_query = |state: &Option<EnhancedQueryState>| -> Result<Embedding> {
        match (inputs.static_query, state) {
            (Some(q), _) => Ok(q.clone()),
            (None, Some(s)) => Ok(s.current().clone()),
            (None, None) => Err(ApceError::invalid("no query embedding")),
        }
    };

    let mut t;
    let mut buffer = ChunkBuffer::new(cfg.max_chunks)?;
    match mode {
        Mode::Dense => {
            t = arrival(n - 1);
            counters.prefill = model.dense_prefill(&mut cache, chunks, exec)?;
            t += counters.prefill.score_matrix_elements as f64 * c;
            selections.push(SelectionSnapshot {
                step: 0,
                selected: (0..n).collect(),
                scores: Vec::new(),
            });
        }
        Mode::Apce => {
            let mut start = load.async_start_chunks;
            if start > n {
                events.push(TraceEvent {
                    detail: Some(format!(
                        "async_start_chunks {start} exceeds {n} chunks; clamped"
                    )),
                    ..TraceEvent::new(0.0, EventKind::Warning)
                });
                start = n;
            }
            t = arrival(start - 1);
            let pool: Vec<usize> = (0..n).filter(|&i| arrival(i) <= t).collect();
            let q = current_query(&query_state)?;
            let scores = score_chunks(&q, inputs.store, Some(&pool), exec)?;
            let sel = select_top_k(&scores, cfg.max_chunks)?;
            buffer.admit_initial(&scores, &sel.selected)?;
            let picked: Vec<&Chunk> = sel.selected.iter().map(|&i| &chunks[i]).collect();
            counters.prefill = model.prefill(&mut cache, &picked, exec)?;
            t += counters.prefill.score_matrix_elements as f64 * c;
            selections.push(SelectionSnapshot {
                step: 0,
                selected: sel.selected,
                scores,
            });
        }
    }
    counters.max_resident_tokens = cache.resident_tokens();

    let vocab = model.config().vocab_size;
    let mut last = seed_token(inputs.tokenizer, inputs.query_text, vocab);
    let mut generated: Vec<u32> = Vec::with_capacity(cfg.max_new_tokens);
    let forced = cfg.forced_tokens.as_deref().unwrap_or(&[]);
    for step in 0..cfg.max_new_tokens {
        let out = model.decode_step(&mut cache, last, n_tokens + step, exec)?;
        t += load.decode_latency + out.score_elements as f64 * c;
        counters.decode_score_elements.push(out.score_elements);
        let token = forced.get(step).map_or(out.token, |&f| f % vocab as u32);
        events.push(TraceEvent {
            token: Some(token),
            step: Some(step),
            ..TraceEvent::new(t, EventKind::TokenEmitted)
        });
        generated.push(token);
        last = token;
        buffer.generation_step = step + 1;

        let rp = &cfg.reprioritization;
        if mode != Mode::Apce || !rp.enabled || !reprioritization_due(step + 1, rp.interval)? {
            continue;
        }
        counters.reprioritization_events += 1;
        if let Some(state) = query_state.as_mut() {
            update_enhanced_query(state, &generated, inputs.provider)?;
        }
        let q = current_query(&query_state)?;
        let pool: Vec<usize> = (0..n).filter(|&i| arrival(i) <= t).collect();
        let plan = reprioritize(&buffer, inputs.store, &q, Some(&pool), exec)?;
        events.push(TraceEvent {
            step: Some(step + 1),
            detail: Some(format!("admit {:?} evict {:?}", plan.admit, plan.evict)),
            ..TraceEvent::new(t, EventKind::Reprioritization)
        });
        let mut backend = ModelKv::new(model, &mut cache, chunks, exec);
        let applied = apply_plan(&mut buffer, &plan, &mut backend, &rp.policy, &mut stats)?;
        let cost = backend.cost;
        if applied {
            counters.recompute += cost;
            t += cost.score_matrix_elements as f64 * c;
            if rp.policy.recompute && !plan.recompute.is_empty() {
                events.push(TraceEvent {
                    step: Some(step + 1),
                    detail: Some(format!("recompute {:?}", plan.recompute)),
                    ..TraceEvent::new(t, EventKind::Recompute)
                });
            }
            selections.push(SelectionSnapshot {
                step: step + 1,
                selected: buffer.indices(),
                scores: plan.scores.clone(),
            });
        }
        counters.max_resident_tokens = counters.max_resident_tokens.max(cache.resident_tokens());
    }

    Ok(GenerationOutcome {
        mode,
        n_chunks: n,
        n_tokens,
        tokens: generated,
        trace: GenerationTrace::from_events(events),
        stats,
        selections,
        counters,
        final_resident: cache.resident_chunks(),
        wall_seconds: wall.elapsed().as_secs_f64(),
    })
}
