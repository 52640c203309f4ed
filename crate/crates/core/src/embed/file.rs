use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;

use super::Embedding;
use crate::error::{ApceError, Result};

/// One line of an external embedding file.
#[derive(Debug, Clone, Deserialize)]
pub struct EmbeddingRecord {
    pub chunk_index: usize,
    pub vector: Vec<f64>,
}

#[derive(Deserialize)]
struct RawRecord {
    chunk_index: usize,
    vector: Vec<serde_json::Value>,
}

/// Python-style writers emit bare `NaN`/`Infinity`; quote them so the line
/// still parses and the entry can be reported as non-finite.
fn quote_non_finite_literals(line: &str) -> String {
    let mut out = String::with_capacity(line.len() + 8);
    let mut in_str = false;
    let mut rest = line;
    while let Some(c) = rest.chars().next() {
        if in_str {
            if c == '\\' {
                let n = rest.chars().take(2).map(char::len_utf8).sum::<usize>();
                out.push_str(&rest[..n]);
                rest = &rest[n..];
                continue;
            }
            in_str = c != '"';
        } else if c == '"' {
            in_str = true;
        } else {
            let lit = ["-Infinity", "Infinity", "NaN"]
                .into_iter()
                .find(|l| rest.starts_with(l));
            if let Some(lit) = lit {
                out.push('"');
                out.push_str(lit);
                out.push('"');
                rest = &rest[lit.len()..];
                continue;
            }
        }
        out.push(c);
        rest = &rest[c.len_utf8()..];
    }
    out
}

fn value_to_f64(v: &serde_json::Value) -> Option<f64> {
    match v {
        serde_json::Value::Number(n) => n.as_f64(),
        serde_json::Value::String(s) => match s.as_str() {
            "NaN" => Some(f64::NAN),
            "Infinity" => Some(f64::INFINITY),
            "-Infinity" => Some(f64::NEG_INFINITY),
            _ => None,
        },
        _ => None,
    }
}

/// Loads precomputed `{"chunk_index", "vector"}` JSON lines. Every vector is
/// checked for dimension and finiteness, then L2-normalized.
///
/// Returns the common dimension and the embeddings keyed by chunk index.
pub fn load_external_embeddings(path: &Path) -> Result<(usize, BTreeMap<usize, Embedding>)> {
    let raw = std::fs::read_to_string(path).map_err(|e| ApceError::io(path, e))?;
    let parse_err = |line: usize, message: String| ApceError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut dim = None;
    let mut out = BTreeMap::new();
    for (i, text) in raw.lines().enumerate() {
        let line = i + 1;
        if text.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(&quote_non_finite_literals(text))
            .map_err(|e| parse_err(line, e.to_string()))?;
        let vector = raw
            .vector
            .iter()
            .enumerate()
            .map(|(j, v)| {
                value_to_f64(v).ok_or_else(|| parse_err(line, format!("entry {j} is not a number")))
            })
            .collect::<Result<Vec<f64>>>()?;
        let rec = EmbeddingRecord {
            chunk_index: raw.chunk_index,
            vector,
        };
        let d = *dim.get_or_insert(rec.vector.len());
        if rec.vector.len() != d {
            return Err(parse_err(
                line,
                format!("dimension mismatch: expected {d}, got {}", rec.vector.len()),
            ));
        }
        if let Some(j) = rec.vector.iter().position(|v| !v.is_finite()) {
            return Err(parse_err(line, format!("non-finite entry at index {j}")));
        }
        let e = Embedding::new(rec.vector)
            .and_then(|e| e.normalized())
            .map_err(|e| parse_err(line, e.to_string()))?;
        if out.insert(rec.chunk_index, e).is_some() {
            return Err(parse_err(
                line,
                format!("duplicate chunk_index {}", rec.chunk_index),
            ));
        }
    }
    let dim = dim.ok_or_else(|| parse_err(0, "no embedding records".into()))?;
    Ok((dim, out))
}
