use apce_core::embed::embedding_store_bytes;
use apce_core::memmodel::{table3_report, Column, MemoryReport, Method};
use serde::Serialize;

use crate::error::{CliError, CliResult};
use crate::output::Format;
use crate::runner::SCHEMA_VERSION;

/// Chunk-embedding overhead of the 30k group: 37 chunks of 384 FP16 values.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct EmbeddingStoreNote {
    pub n_chunks: u64,
    pub dim: u64,
    pub bytes_per_element: u64,
    pub bytes: u64,
    pub kib: f64,
    /// The printed figure, which is in MB rather than KB.
    pub published_mb: f64,
}

pub fn embedding_store_note() -> EmbeddingStoreNote {
    let bytes = embedding_store_bytes(37, 384, 2);
    EmbeddingStoreNote {
        n_chunks: 37,
        dim: 384,
        bytes_per_element: 2,
        bytes,
        kib: bytes as f64 / 1024.0,
        published_mb: 28.0,
    }
}

#[derive(Debug, Serialize)]
struct MemtableJson<'a> {
    schema_version: u32,
    kind: &'static str,
    matched_cells: usize,
    embedding_store: EmbeddingStoreNote,
    #[serde(flatten)]
    report: &'a MemoryReport,
}

pub fn build(rows: &[apce_core::memmodel::MemRow]) -> CliResult<MemoryReport> {
    table3_report(rows).map_err(|e| CliError::Config(e.into()))
}

pub fn render(report: &MemoryReport, format: Format, flag_inconsistent: bool) -> CliResult<String> {
    match format {
        Format::Text => {
            let mut s = String::new();
            report
                .write_text(&mut s, flag_inconsistent)
                .expect("writing to a String cannot fail");
            let e = embedding_store_note();
            s.push_str(&format!(
                "embedding store ({} chunks x {} dims, {} bytes each): {} bytes = {:.2} KB",
                e.n_chunks, e.dim, e.bytes_per_element, e.bytes, e.kib
            ));
            if flag_inconsistent {
                s.push_str(&format!(" (published as {} MB)", e.published_mb));
            }
            s.push('\n');
            Ok(s)
        }
        Format::Json => {
            let doc = MemtableJson {
                schema_version: SCHEMA_VERSION,
                kind: "memtable",
                matched_cells: report.matched_cells(),
                embedding_store: embedding_store_note(),
                report,
            };
            let mut s =
                serde_json::to_string_pretty(&doc).map_err(|e| CliError::Runtime(e.into()))?;
            s.push('\n');
            Ok(s)
        }
        Format::Csv => csv_table(report, flag_inconsistent),
    }
}

fn csv_table(report: &MemoryReport, flag_inconsistent: bool) -> CliResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| CliError::Runtime(e.into());
    let mut header = vec![
        "context",
        "method",
        "tokens",
        "kv_cache_mb",
        "prefill_attn_mb",
        "decode_attn_mb",
    ];
    if flag_inconsistent {
        header.push("inconsistent");
    }
    w.write_record(&header).map_err(err)?;
    for r in &report.rows {
        for (method, name, tokens, cells) in [
            (Method::Dense, "dense", r.cfg.seq_len, &r.dense_mb),
            (Method::Apce, "apce", r.cfg.selected_tokens(), &r.apce_mb),
        ] {
            let mut rec = vec![
                r.label.clone(),
                name.to_string(),
                tokens.to_string(),
                cells[0].clone(),
                cells[1].clone(),
                cells[2].clone(),
            ];
            if flag_inconsistent {
                let flagged: Vec<&str> = Column::ALL
                    .into_iter()
                    .filter(|&c| report.is_flagged(&r.label, method, c))
                    .map(|c| match c {
                        Column::KvCache => "kv_cache_mb",
                        Column::PrefillAttn => "prefill_attn_mb",
                        Column::DecodeAttn => "decode_attn_mb",
                    })
                    .collect();
                rec.push(flagged.join(";"));
            }
            w.write_record(&rec).map_err(err)?;
        }
    }
    let bytes = w
        .into_inner()
        .map_err(|e| CliError::Runtime(anyhow::anyhow!("{e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
