//! Analytical per-layer memory footprint of self-attention, dense vs chunk
//! selection.
//!
//! All quantities are element counts times `bytes_per_element`; MB means
//! 2^20 bytes. Rounding to two decimals is done on exact integers with
//! round-half-to-even.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{ApceError, Result};

pub const LLAMA_3B_D_Q: u64 = 3072;
pub const LLAMA_3B_D_KV: u64 = 1024;
pub const FP16_BYTES: u64 = 2;
const MIB: u128 = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemConfig {
    /// Full input length `L` used by the dense rows.
    pub seq_len: u64,
    pub n_chunks_selected: u64,
    pub chunk_size: u64,
    pub d_q: u64,
    pub d_kv: u64,
    pub bytes_per_element: u64,
}

impl MemConfig {
    pub fn llama_3b(seq_len: u64, n_chunks_selected: u64, chunk_size: u64) -> Self {
        Self {
            seq_len,
            n_chunks_selected,
            chunk_size,
            d_q: LLAMA_3B_D_Q,
            d_kv: LLAMA_3B_D_KV,
            bytes_per_element: FP16_BYTES,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("seq_len", self.seq_len),
            ("n_chunks_selected", self.n_chunks_selected),
            ("chunk_size", self.chunk_size),
            ("d_q", self.d_q),
            ("d_kv", self.d_kv),
            ("bytes_per_element", self.bytes_per_element),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(ApceError::invalid(format!("{name} must be positive")));
        }
        Ok(())
    }

    /// Tokens kept by chunk selection, `k·m`.
    pub fn selected_tokens(&self) -> u64 {
        self.n_chunks_selected * self.chunk_size
    }
}

/// `L · 2 · d_kv` elements.
pub fn kv_cache_bytes(l_effective: u64, cfg: &MemConfig) -> u64 {
    l_effective * 2 * cfg.d_kv * cfg.bytes_per_element
}

/// `2·L·d_kv + 2·L·d_q + L²` elements.
pub fn prefill_attn_bytes(l_effective: u64, cfg: &MemConfig) -> u64 {
    let l = l_effective;
    (2 * l * cfg.d_kv + 2 * l * cfg.d_q + l * l) * cfg.bytes_per_element
}

/// `2·L·d_kv + L + 2·d_q` elements; the `L` term is the attention vector.
pub fn decode_attn_bytes(l_effective: u64, cfg: &MemConfig) -> u64 {
    let l = l_effective;
    (2 * l * cfg.d_kv + l + 2 * cfg.d_q) * cfg.bytes_per_element
}

/// Recovers `L` from a KV-cache byte count, if it divides exactly.
pub fn invert_kv_cache_bytes(bytes: u64, cfg: &MemConfig) -> Option<u64> {
    let per_token = 2 * cfg.d_kv * cfg.bytes_per_element;
    bytes.is_multiple_of(per_token).then_some(bytes / per_token)
}

/// Nearest `L` whose KV cache matches a printed MB figure.
pub fn seq_len_from_kv_mb(mb: f64, cfg: &MemConfig) -> u64 {
    let per_token = (2 * cfg.d_kv * cfg.bytes_per_element) as f64;
    (mb * MIB as f64 / per_token).round() as u64
}

/// Bytes in hundredths of a MiB, rounded half to even.
pub fn mib_hundredths(bytes: u64) -> u64 {
    let num = u128::from(bytes) * 100;
    let q = num / MIB;
    let r = num % MIB;
    let up = match (2 * r).cmp(&MIB) {
        std::cmp::Ordering::Greater => true,
        std::cmp::Ordering::Equal => q % 2 == 1,
        std::cmp::Ordering::Less => false,
    };
    (q + u128::from(up)) as u64
}

pub fn format_mb(bytes: u64) -> String {
    let h = mib_hundredths(bytes);
    format!("{}.{:02}", h / 100, h % 100)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Footprint {
    pub kv_cache_bytes: u64,
    pub prefill_attn_bytes: u64,
    pub decode_attn_bytes: u64,
}

impl Footprint {
    pub fn at(l_effective: u64, cfg: &MemConfig) -> Self {
        Self {
            kv_cache_bytes: kv_cache_bytes(l_effective, cfg),
            prefill_attn_bytes: prefill_attn_bytes(l_effective, cfg),
            decode_attn_bytes: decode_attn_bytes(l_effective, cfg),
        }
    }

    /// Whole-model figure for `n_layers` identical layers.
    pub fn times_layers(&self, n_layers: u64) -> Self {
        Self {
            kv_cache_bytes: self.kv_cache_bytes * n_layers,
            prefill_attn_bytes: self.prefill_attn_bytes * n_layers,
            decode_attn_bytes: self.decode_attn_bytes * n_layers,
        }
    }

    fn get(&self, col: Column) -> u64 {
        match col {
            Column::KvCache => self.kv_cache_bytes,
            Column::PrefillAttn => self.prefill_attn_bytes,
            Column::DecodeAttn => self.decode_attn_bytes,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Column {
    KvCache,
    PrefillAttn,
    DecodeAttn,
}

impl Column {
    pub const ALL: [Column; 3] = [Column::KvCache, Column::PrefillAttn, Column::DecodeAttn];

    pub fn title(self) -> &'static str {
        match self {
            Column::KvCache => "KV-cache (MB)",
            Column::PrefillAttn => "Prefill Attn (MB)",
            Column::DecodeAttn => "Decode Attn (MB)",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Dense,
    Apce,
}

/// Published MB values for one row, used to flag cells that disagree.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PublishedCells {
    pub kv_cache_mb: f64,
    pub prefill_attn_mb: f64,
    pub decode_attn_mb: f64,
}

impl PublishedCells {
    fn get(&self, col: Column) -> f64 {
        match col {
            Column::KvCache => self.kv_cache_mb,
            Column::PrefillAttn => self.prefill_attn_mb,
            Column::DecodeAttn => self.decode_attn_mb,
        }
    }
}

/// One context-length group: a dense row and a selection row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemRow {
    pub label: String,
    pub cfg: MemConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub published_dense: Option<PublishedCells>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub published_apce: Option<PublishedCells>,
}

impl MemRow {
    pub fn new(label: impl Into<String>, cfg: MemConfig) -> Self {
        Self {
            label: label.into(),
            cfg,
            published_dense: None,
            published_apce: None,
        }
    }
}

/// The three context-length groups with 70% selection at 800-token chunks.
/// Dense lengths come from inverting the printed dense KV-cache figures.
pub fn table3_rows() -> Vec<MemRow> {
    let cell = |kv, pre, dec| PublishedCells {
        kv_cache_mb: kv,
        prefill_attn_mb: pre,
        decode_attn_mb: dec,
    };
    vec![
        MemRow {
            label: "8k".into(),
            cfg: MemConfig::llama_3b(8294, 7, 800),
            published_dense: Some(cell(32.40, 260.80, 32.43)),
            published_apce: Some(cell(21.88, 147.31, 21.90)),
        },
        MemRow {
            label: "20k".into(),
            cfg: MemConfig::llama_3b(20111, 18, 800),
            published_dense: Some(cell(78.56, 1060.0, 78.61)),
            published_apce: Some(cell(56.25, 620.51, 56.29)),
        },
        MemRow {
            label: "30k".into(),
            cfg: MemConfig::llama_3b(29924, 24, 800),
            published_dense: Some(cell(116.89, 2120.0, 116.96)),
            published_apce: Some(cell(75.00, 1003.12, 75.05)),
        },
    ]
}

/// A computed cell that disagrees with its published value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlaggedCell {
    pub label: String,
    pub method: Method,
    pub column: Column,
    pub computed_mb: String,
    pub published_mb: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryReportRow {
    pub label: String,
    pub cfg: MemConfig,
    pub dense: Footprint,
    pub apce: Footprint,
    pub dense_mb: [String; 3],
    pub apce_mb: [String; 3],
    /// `1 − apce/dense` per column, in percent.
    pub savings_pct: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub published_dense: Option<PublishedCells>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub published_apce: Option<PublishedCells>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryReport {
    pub rows: Vec<MemoryReportRow>,
    pub flagged: Vec<FlaggedCell>,
}

impl MemoryReport {
    pub fn row(&self, label: &str) -> Option<&MemoryReportRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    pub fn is_flagged(&self, label: &str, method: Method, column: Column) -> bool {
        self.flagged
            .iter()
            .any(|f| f.label == label && f.method == method && f.column == column)
    }

    /// Number of published cells that the formulas reproduce to 2 decimals.
    pub fn matched_cells(&self) -> usize {
        self.rows
            .iter()
            .flat_map(|r| {
                [
                    r.published_dense.map(|_| Method::Dense),
                    r.published_apce.map(|_| Method::Apce),
                ]
                .into_iter()
                .flatten()
                .flat_map(move |m| Column::ALL.map(|c| (r.label.as_str(), m, c)))
            })
            .filter(|(l, m, c)| !self.is_flagged(l, *m, *c))
            .count()
    }
}

fn published_hundredths(mb: f64) -> u64 {
    (mb * 100.0).round() as u64
}

pub fn table3_report(rows: &[MemRow]) -> Result<MemoryReport> {
    let mut out = Vec::with_capacity(rows.len());
    let mut flagged = Vec::new();
    for row in rows {
        row.cfg.validate()?;
        let km = row.cfg.selected_tokens();
        if km > row.cfg.seq_len {
            return Err(ApceError::invalid(format!(
                "row {}: k·m = {km} exceeds seq_len {}",
                row.label, row.cfg.seq_len
            )));
        }
        let dense = Footprint::at(row.cfg.seq_len, &row.cfg);
        let apce = Footprint::at(km, &row.cfg);
        let fmt = |f: &Footprint| Column::ALL.map(|c| format_mb(f.get(c)));
        let savings = Column::ALL.map(|c| {
            let (d, a) = (dense.get(c) as f64, apce.get(c) as f64);
            100.0 * (1.0 - a / d)
        });
        for (method, fp, published) in [
            (Method::Dense, &dense, row.published_dense),
            (Method::Apce, &apce, row.published_apce),
        ] {
            let Some(p) = published else { continue };
            for c in Column::ALL {
                if mib_hundredths(fp.get(c)) != published_hundredths(p.get(c)) {
                    flagged.push(FlaggedCell {
                        label: row.label.clone(),
                        method,
                        column: c,
                        computed_mb: format_mb(fp.get(c)),
                        published_mb: p.get(c),
                    });
                }
            }
        }
        out.push(MemoryReportRow {
            label: row.label.clone(),
            cfg: row.cfg,
            dense,
            apce,
            dense_mb: fmt(&dense),
            apce_mb: fmt(&apce),
            savings_pct: savings,
            published_dense: row.published_dense,
            published_apce: row.published_apce,
        });
    }
    Ok(MemoryReport { rows: out, flagged })
}

impl MemoryReport {
    /// Aligned text table; `mark_flagged` stars cells that disagree with
    /// their published value and lists them underneath.
    pub fn write_text(&self, f: &mut impl fmt::Write, mark_flagged: bool) -> fmt::Result {
        writeln!(
            f,
            "{:<8} {:<7} {:>14} {:>18} {:>17}",
            "Context",
            "Method",
            Column::KvCache.title(),
            Column::PrefillAttn.title(),
            Column::DecodeAttn.title()
        )?;
        for r in &self.rows {
            let mark = |m: Method, c: Column| {
                if mark_flagged && self.is_flagged(&r.label, m, c) {
                    "*"
                } else {
                    " "
                }
            };
            for (m, name, cells) in [
                (Method::Dense, "Dense", &r.dense_mb),
                (Method::Apce, "APCE", &r.apce_mb),
            ] {
                writeln!(
                    f,
                    "{:<8} {:<7} {:>13}{} {:>17}{} {:>16}{}",
                    r.label,
                    name,
                    cells[0],
                    mark(m, Column::KvCache),
                    cells[1],
                    mark(m, Column::PrefillAttn),
                    cells[2],
                    mark(m, Column::DecodeAttn),
                )?;
            }
            writeln!(
                f,
                "{:<8} {:<7} {:>13.1}% {:>16.1}% {:>15.1}%",
                r.label, "saving", r.savings_pct[0], r.savings_pct[1], r.savings_pct[2]
            )?;
        }
        for c in self.flagged.iter().filter(|_| mark_flagged) {
            writeln!(
                f,
                "* {} {:?} {}: formula gives {} MB, published {} MB",
                c.label,
                c.method,
                c.column.title(),
                c.computed_mb,
                c.published_mb
            )?;
        }
        Ok(())
    }
}

impl fmt::Display for MemoryReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.write_text(f, true)
    }
}
