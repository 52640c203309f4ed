//! One generation session per corpus record, and the report it produces.

use std::path::Path;

use apce_core::embed::{load_external_embeddings, Embedding, EmbeddingStore, HashEmbedder};
use apce_core::metrics::{embedding_cosine_proxy, rouge_l_text, RougeLScore};
use apce_core::model::Model;
use apce_core::reprior::ReplacementEvent;
use apce_core::sched::{
    simulate_generation, GenerationOutcome, GenerationTrace, Mode, RunCounters, SelectionSnapshot,
    SessionConfig, SessionInputs,
};
use apce_core::textpipe::{chunk, load_corpus, CorpusRecord, Tokenizer, Vocabulary};
use apce_core::{ApceError, Execution};
use serde::Serialize;

use crate::config::{ProviderKind, RunConfig};
use crate::error::{CliError, CliResult};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize)]
pub struct DocumentInfo {
    pub n_tokens: usize,
    pub n_chunks: usize,
    pub chunk_size: usize,
    pub k: usize,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct StatsInfo {
    pub replacements_taken: usize,
    pub replacements_available: usize,
    pub reprioritization_events: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct OutputInfo {
    pub tokens: Vec<u32>,
    pub text: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricsInfo {
    pub rouge_l: Option<RougeLScore>,
    /// Cosine of hashed embeddings of output and reference; not BERTScore.
    pub embedding_cosine_proxy: Option<f64>,
}

/// Everything about one run except wall-clock timings.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub run_id: String,
    pub record_id: String,
    pub mode: Mode,
    pub seed: u64,
    pub document: DocumentInfo,
    pub selection_history: Vec<SelectionSnapshot>,
    pub replacement_log: Vec<ReplacementEvent>,
    pub replacement_stats: StatsInfo,
    pub trace: GenerationTrace,
    pub counters: RunCounters,
    pub final_resident: Vec<usize>,
    pub output: OutputInfo,
    pub metrics: MetricsInfo,
    pub config: RunConfig,
}

#[derive(Debug, Clone, Serialize)]
pub struct Profile {
    pub run_id: String,
    pub wall_seconds: f64,
    pub finished_unix_ms: u128,
}

pub struct RunOutput {
    pub report: RunReport,
    pub profile: Profile,
}

/// Loads the configured corpus, narrowed to `input.record` when set.
pub fn load_records(cfg: &RunConfig) -> CliResult<Vec<CorpusRecord>> {
    let path = cfg
        .input
        .corpus
        .as_deref()
        .ok_or_else(|| CliError::input("no corpus given (--input or input.corpus)"))?;
    if !path.exists() {
        return Err(CliError::input(format!(
            "{} does not exist",
            path.display()
        )));
    }
    let query = cfg.input.query.as_deref().unwrap_or("");
    let mut records = load_corpus(path, query).map_err(|e| match e {
        ApceError::Io { .. } => CliError::Input(e.into()),
        other => CliError::Runtime(other.into()),
    })?;
    if let Some(id) = &cfg.input.record {
        records.retain(|r| &r.id == id);
        if records.is_empty() {
            return Err(CliError::input(format!(
                "no record with id {id:?} in {}",
                path.display()
            )));
        }
    }
    if records.is_empty() {
        return Err(CliError::input(format!(
            "{} holds no records",
            path.display()
        )));
    }
    Ok(records)
}

fn external_embeddings(
    path: &Path,
    dim: usize,
) -> CliResult<std::collections::BTreeMap<usize, Embedding>> {
    if !path.exists() {
        return Err(CliError::input(format!(
            "{} does not exist",
            path.display()
        )));
    }
    let (file_dim, map) =
        load_external_embeddings(path).map_err(|e| CliError::Runtime(e.into()))?;
    if file_dim != dim {
        return Err(CliError::config(format!(
            "{}: vectors have dimension {file_dim}, embedding.dim is {dim}",
            path.display()
        )));
    }
    Ok(map)
}

pub fn run_id(record_id: &str, tag: &str, mode: Mode, seed: u64) -> String {
    let clean: String = record_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect();
    if tag.is_empty() {
        format!("{clean}__{mode}__s{seed}")
    } else {
        format!("{clean}__{tag}__{mode}__s{seed}")
    }
}

/// Runs one record through a session under `cfg`.
pub fn run_record(
    cfg: &RunConfig,
    model: &Model,
    record: &CorpusRecord,
    run_id: String,
    exec: Execution,
) -> CliResult<RunOutput> {
    let tokenizer = Tokenizer::new(model.config().vocab_size as u32)?;
    let mut vocab = Vocabulary::default();
    let doc = tokenizer.tokenize_recording(&record.text, &mut vocab);
    if doc.is_empty() {
        return Err(CliError::input(format!(
            "record {:?} has no text",
            record.id
        )));
    }
    if cfg.mode == Mode::Apce && tokenizer.tokenize(&record.query).is_empty() {
        return Err(CliError::input(format!(
            "record {:?} has no query",
            record.id
        )));
    }
    tokenizer.tokenize_recording(&record.query, &mut vocab);
    let forced = cfg
        .generation
        .forced_text
        .as_deref()
        .map(|t| tokenizer.tokenize_recording(t, &mut vocab).tokens);

    let chunks = chunk(doc.as_slice(), cfg.chunk_size)?;
    let hasher = HashEmbedder::new(cfg.embedding.dim)?;
    let (store, static_query) = match cfg.embedding.provider {
        ProviderKind::Hash => (EmbeddingStore::build(&hasher, &chunks, exec)?, None),
        ProviderKind::File => {
            let file = cfg.embedding.file.as_deref().expect("validated");
            let map = external_embeddings(file, cfg.embedding.dim)?;
            if let Some(missing) = (0..chunks.len()).find(|i| !map.contains_key(i)) {
                return Err(CliError::input(format!(
                    "{} has no embedding for chunk {missing}",
                    file.display()
                )));
            }
            let map = map.into_iter().filter(|(i, _)| *i < chunks.len()).collect();
            let store = EmbeddingStore::from_fragment(cfg.embedding.dim, map)?;
            let query = match cfg.embedding.query_file.as_deref() {
                Some(q) => external_embeddings(q, cfg.embedding.dim)?
                    .into_values()
                    .next(),
                None => None,
            };
            (store, query)
        }
    };
    if cfg.embedding.provider == ProviderKind::File
        && cfg.mode == Mode::Apce
        && static_query.is_none()
    {
        return Err(CliError::input("query embedding file holds no vector"));
    }

    let k = cfg.k_for(chunks.len());
    let session = SessionConfig {
        max_chunks: k,
        max_new_tokens: cfg.generation.max_new_tokens,
        reprioritization: cfg.reprioritization_config(),
        query: cfg.query,
        load: cfg.load_model(),
        exec,
        forced_tokens: forced,
    };
    let inputs = SessionInputs {
        chunks: &chunks,
        store: &store,
        query_text: &record.query,
        provider: &hasher,
        tokenizer: &tokenizer,
        static_query: static_query.as_ref(),
    };
    let outcome = simulate_generation(model, &inputs, cfg.mode, &session)?;
    let text = vocab.render(&outcome.tokens);
    let metrics = if record.reference.trim().is_empty() {
        MetricsInfo {
            rouge_l: None,
            embedding_cosine_proxy: None,
        }
    } else {
        MetricsInfo {
            rouge_l: Some(rouge_l_text(&text, &record.reference)),
            embedding_cosine_proxy: embedding_cosine_proxy(
                &hasher,
                &tokenizer,
                &text,
                &record.reference,
            )
            .ok(),
        }
    };
    Ok(build_output(
        cfg,
        record,
        run_id,
        doc.len(),
        k,
        outcome,
        text,
        metrics,
    ))
}

#[allow(clippy::too_many_arguments)]
fn build_output(
    cfg: &RunConfig,
    record: &CorpusRecord,
    run_id: String,
    n_tokens: usize,
    k: usize,
    outcome: GenerationOutcome,
    text: String,
    metrics: MetricsInfo,
) -> RunOutput {
    let finished_unix_ms = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_millis());
    let profile = Profile {
        run_id: run_id.clone(),
        wall_seconds: outcome.wall_seconds,
        finished_unix_ms,
    };
    let report = RunReport {
        schema_version: SCHEMA_VERSION,
        run_id,
        record_id: record.id.clone(),
        mode: outcome.mode,
        seed: cfg.seed,
        document: DocumentInfo {
            n_tokens,
            n_chunks: outcome.n_chunks,
            chunk_size: cfg.chunk_size,
            k,
        },
        selection_history: outcome.selections,
        replacement_stats: StatsInfo {
            replacements_taken: outcome.stats.replacements_taken,
            replacements_available: outcome.stats.replacements_available,
            reprioritization_events: outcome.counters.reprioritization_events,
        },
        replacement_log: outcome.stats.events,
        trace: outcome.trace,
        counters: outcome.counters,
        final_resident: outcome.final_resident,
        output: OutputInfo {
            tokens: outcome.tokens,
            text,
        },
        metrics,
        config: cfg.clone(),
    };
    RunOutput { report, profile }
}
