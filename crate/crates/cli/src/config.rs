//! Run configuration: a TOML file with namespaced keys, then command-line
//! overrides on top.
//!
//! ```toml
//! mode = "apce"
//! seed = 7
//! chunk_size = 800
//! max_chunks = 24            # or: fraction = 0.7
//! input.corpus = "books.jsonl"
//! reprioritization.interval = 50
//! load.per_chunk_latency = 0.05
//! ```

use std::path::{Path, PathBuf};

use apce_core::memmodel::{MemConfig, MemRow};
use apce_core::model::ModelConfig;
use apce_core::reprior::{QueryConfig, ReplacementPolicy};
use apce_core::sched::{LoadModel, Mode, ReprioritizationConfig};
use apce_core::Execution;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    #[default]
    Hash,
    File,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputSection {
    pub corpus: Option<PathBuf>,
    /// Restrict a run to one record id.
    pub record: Option<String>,
    /// Query for plain-text inputs, which carry none of their own.
    pub query: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingSection {
    pub dim: usize,
    pub provider: ProviderKind,
    /// Chunk embeddings for the `file` provider.
    pub file: Option<PathBuf>,
    /// Query embedding for the `file` provider.
    pub query_file: Option<PathBuf>,
}

impl Default for EmbeddingSection {
    fn default() -> Self {
        Self {
            dim: apce_core::embed::DEFAULT_DIM,
            provider: ProviderKind::Hash,
            file: None,
            query_file: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReprioritizationSection {
    pub enabled: bool,
    pub interval: usize,
    pub recompute: bool,
    pub min_score_gain: f64,
}

impl Default for ReprioritizationSection {
    fn default() -> Self {
        Self {
            enabled: true,
            interval: 50,
            recompute: true,
            min_score_gain: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoadSection {
    pub per_chunk_latency: f64,
    pub async_start: usize,
    pub decode_latency: f64,
    pub cost_per_element: f64,
}

impl Default for LoadSection {
    fn default() -> Self {
        let d = LoadModel::default();
        Self {
            per_chunk_latency: d.per_chunk_load_latency,
            async_start: d.async_start_chunks,
            decode_latency: d.decode_latency,
            cost_per_element: d.cost_per_score_element,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationSection {
    pub max_new_tokens: usize,
    /// Teacher-forced continuation, tokenized like the document.
    pub forced_text: Option<String>,
    pub parallel: bool,
}

impl Default for GenerationSection {
    fn default() -> Self {
        Self {
            max_new_tokens: 64,
            forced_text: None,
            parallel: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("apce-out"),
        }
    }
}

/// A `[[memtable.rows]]` entry; dims default to the 3B reference model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemRowSpec {
    pub label: String,
    pub seq_len: u64,
    pub n_chunks_selected: u64,
    pub chunk_size: u64,
    #[serde(default)]
    pub d_q: Option<u64>,
    #[serde(default)]
    pub d_kv: Option<u64>,
    #[serde(default)]
    pub bytes_per_element: Option<u64>,
}

impl MemRowSpec {
    pub fn to_row(&self) -> MemRow {
        let base = MemConfig::llama_3b(self.seq_len, self.n_chunks_selected, self.chunk_size);
        MemRow::new(
            self.label.clone(),
            MemConfig {
                d_q: self.d_q.unwrap_or(base.d_q),
                d_kv: self.d_kv.unwrap_or(base.d_kv),
                bytes_per_element: self.bytes_per_element.unwrap_or(base.bytes_per_element),
                ..base
            },
        )
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MemtableSection {
    pub rows: Vec<MemRowSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    pub seed: u64,
    pub chunk_size: usize,
    pub max_chunks: Option<usize>,
    pub fraction: Option<f64>,
    pub input: InputSection,
    pub embedding: EmbeddingSection,
    pub reprioritization: ReprioritizationSection,
    pub query: QueryConfig,
    pub load: LoadSection,
    pub model: ModelConfig,
    pub generation: GenerationSection,
    // where results go does not change them; kept out of reports
    #[serde(skip_serializing)]
    pub output: OutputSection,
    #[serde(skip_serializing)]
    pub memtable: MemtableSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Apce,
            seed: 0,
            chunk_size: 800,
            max_chunks: None,
            fraction: None,
            input: InputSection::default(),
            embedding: EmbeddingSection::default(),
            reprioritization: ReprioritizationSection::default(),
            query: QueryConfig::default(),
            load: LoadSection::default(),
            model: ModelConfig::default(),
            generation: GenerationSection::default(),
            output: OutputSection::default(),
            memtable: MemtableSection::default(),
        }
    }
}

/// Selection fraction used when neither `max_chunks` nor `fraction` is set.
pub const DEFAULT_FRACTION: f64 = 0.7;

/// `round(fraction · n)` with halves rounded up, kept within `1..=n`.
pub fn k_from_fraction(fraction: f64, n_chunks: usize) -> usize {
    let k = (fraction * n_chunks as f64 + 0.5).floor() as usize;
    k.clamp(1, n_chunks.max(1))
}

fn resolve(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p.as_mut() {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::config(e.to_string().trim_end()))
    }

    /// Parses a config file; relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        let mut cfg: Self = toml::from_str(&text).map_err(|e| {
            CliError::config(format!("{}: {}", path.display(), e.to_string().trim_end()))
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        resolve(base, &mut cfg.input.corpus);
        resolve(base, &mut cfg.embedding.file);
        resolve(base, &mut cfg.embedding.query_file);
        if cfg.output.dir.is_relative() && cfg.output.dir != OutputSection::default().dir {
            cfg.output.dir = base.join(&cfg.output.dir);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: &str| Err(CliError::config(m));
        if self.chunk_size == 0 {
            return bad("chunk_size must be >= 1");
        }
        match (self.max_chunks, self.fraction) {
            (Some(_), Some(_)) => return bad("set only one of max_chunks and fraction"),
            (Some(0), None) => return bad("max_chunks must be >= 1"),
            (None, Some(f)) if !(f > 0.0 && f <= 1.0) => {
                return bad("fraction must be in (0, 1]");
            }
            _ => {}
        }
        if self.reprioritization.interval == 0 {
            return bad("reprioritization.interval must be >= 1");
        }
        if !self.reprioritization.min_score_gain.is_finite() {
            return bad("reprioritization.min_score_gain must be finite");
        }
        if self.generation.max_new_tokens == 0 {
            return bad("generation.max_new_tokens must be >= 1");
        }
        if self.embedding.dim == 0 {
            return bad("embedding.dim must be >= 1");
        }
        if self.embedding.provider == ProviderKind::File {
            if self.embedding.file.is_none() {
                return bad("embedding.provider = \"file\" needs embedding.file");
            }
            if self.mode == Mode::Apce && self.embedding.query_file.is_none() {
                return bad("embedding.provider = \"file\" needs embedding.query_file");
            }
        }
        self.query.validate()?;
        self.load_model().validate()?;
        let mut model = self.model;
        model.init_seed = self.seed;
        model.validate()?;
        Ok(())
    }

    /// Buffer capacity for a document of `n_chunks`.
    pub fn k_for(&self, n_chunks: usize) -> usize {
        match (self.max_chunks, self.fraction) {
            (Some(k), _) => k,
            (None, f) => k_from_fraction(f.unwrap_or(DEFAULT_FRACTION), n_chunks),
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        self.model.with_seed(self.seed)
    }

    pub fn load_model(&self) -> LoadModel {
        LoadModel {
            per_chunk_load_latency: self.load.per_chunk_latency,
            async_start_chunks: self.load.async_start,
            decode_latency: self.load.decode_latency,
            cost_per_score_element: self.load.cost_per_element,
        }
    }

    pub fn reprioritization_config(&self) -> ReprioritizationConfig {
        ReprioritizationConfig {
            enabled: self.reprioritization.enabled,
            interval: self.reprioritization.interval,
            policy: ReplacementPolicy {
                recompute: self.reprioritization.recompute,
                min_score_gain: self.reprioritization.min_score_gain,
            },
        }
    }

    pub fn execution(&self) -> Execution {
        if self.generation.parallel {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }

    pub fn memtable_rows(&self) -> Vec<MemRow> {
        if self.memtable.rows.is_empty() {
            apce_core::memmodel::table3_rows()
        } else {
            self.memtable.rows.iter().map(MemRowSpec::to_row).collect()
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub mode: Option<Mode>,
    pub chunk_size: Option<usize>,
    pub max_chunks: Option<usize>,
    pub fraction: Option<f64>,
    pub interval: Option<usize>,
    pub no_recompute: bool,
    pub async_start: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub record: Option<String>,
    pub max_new_tokens: Option<usize>,
    pub sequential: bool,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) -> CliResult<()> {
        if self.max_chunks.is_some() && self.fraction.is_some() {
            return Err(CliError::config(
                "--max-chunks and --fraction are exclusive",
            ));
        }
        if let Some(k) = self.max_chunks {
            cfg.max_chunks = Some(k);
            cfg.fraction = None;
        }
        if let Some(f) = self.fraction {
            cfg.fraction = Some(f);
            cfg.max_chunks = None;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(m) = self.mode {
            cfg.mode = m;
        }
        if let Some(m) = self.chunk_size {
            cfg.chunk_size = m;
        }
        if let Some(i) = self.interval {
            cfg.reprioritization.interval = i;
        }
        if self.no_recompute {
            cfg.reprioritization.recompute = false;
        }
        if let Some(a) = self.async_start {
            cfg.load.async_start = a;
        }
        if let Some(d) = &self.out_dir {
            cfg.output.dir = d.clone();
        }
        if let Some(p) = &self.input {
            cfg.input.corpus = Some(p.clone());
        }
        if let Some(r) = &self.record {
            cfg.input.record = Some(r.clone());
        }
        if let Some(t) = self.max_new_tokens {
            cfg.generation.max_new_tokens = t;
        }
        if self.sequential {
            cfg.generation.parallel = false;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dotted_keys_parse() {
        let cfg = RunConfig::from_toml_str(
            "mode = \"dense\"\nmax_chunks = 3\nreprioritization.interval = 10\nload.per_chunk_latency = 0.5\nmodel.n_layers = 1\n",
        )
        .unwrap();
        assert_eq!(cfg.mode, Mode::Dense);
        assert_eq!(cfg.reprioritization.interval, 10);
        assert_eq!(cfg.load.per_chunk_latency, 0.5);
        assert_eq!(cfg.model.n_layers, 1);
        assert_eq!(cfg.model.d_model, ModelConfig::default().d_model);
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let e = RunConfig::from_toml_str("reprioritization.intervall = 3\n").unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn k_and_fraction_are_exclusive() {
        let cfg = RunConfig::from_toml_str("max_chunks = 3\nfraction = 0.5\n").unwrap();
        assert_eq!(cfg.validate().unwrap_err().exit_code(), 2);
        let o = Overrides {
            fraction: Some(0.5),
            ..Overrides::default()
        };
        let mut cfg = RunConfig::from_toml_str("max_chunks = 3\n").unwrap();
        o.apply(&mut cfg).unwrap();
        assert_eq!((cfg.max_chunks, cfg.fraction), (None, Some(0.5)));
        cfg.validate().unwrap();
    }

    #[test]
    fn fraction_rounds_half_up() {
        assert_eq!(k_from_fraction(0.5, 5), 3);
        assert_eq!(k_from_fraction(0.7, 38), 27);
        assert_eq!(k_from_fraction(0.7, 10), 7);
        assert_eq!(k_from_fraction(0.01, 10), 1);
        assert_eq!(k_from_fraction(1.0, 10), 10);
    }

    #[test]
    fn custom_memtable_rows() {
        let cfg = RunConfig::from_toml_str(
            "[[memtable.rows]]\nlabel = \"tiny\"\nseq_len = 1000\nn_chunks_selected = 1\nchunk_size = 500\nd_q = 64\n",
        )
        .unwrap();
        let rows = cfg.memtable_rows();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].cfg.d_q, 64);
        assert_eq!(rows[0].cfg.d_kv, 1024);
        assert!(rows[0].published_dense.is_none());
    }
}
