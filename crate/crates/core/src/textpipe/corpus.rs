use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ApceError, Result};

/// One evaluation input: a document, its query and an optional reference.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub id: String,
    pub text: String,
    #[serde(default)]
    pub query: String,
    #[serde(default)]
    pub reference: String,
}

/// Reads JSON-lines records. Blank lines are skipped.
pub fn load_jsonl(path: &Path) -> Result<Vec<CorpusRecord>> {
    let raw = std::fs::read_to_string(path).map_err(|e| ApceError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: CorpusRecord = serde_json::from_str(line).map_err(|e| ApceError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Loads `.jsonl`/`.json` as records; anything else as one plain-text
/// document whose id is the file stem and whose query is `default_query`.
pub fn load_corpus(path: &Path, default_query: &str) -> Result<Vec<CorpusRecord>> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("jsonl") | Some("json") => load_jsonl(path),
        _ => {
            let text = std::fs::read_to_string(path).map_err(|e| ApceError::io(path, e))?;
            let id = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("doc")
                .to_string();
            Ok(vec![CorpusRecord {
                id,
                text,
                query: default_query.to_string(),
                reference: String::new(),
            }])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn reads_jsonl_and_plain_text() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        let mut f = std::fs::File::create(&p).unwrap();
        writeln!(
            f,
            r#"{{"id":"a","text":"x y","query":"q","reference":"r"}}"#
        )
        .unwrap();
        writeln!(f).unwrap();
        writeln!(f, r#"{{"id":"b","text":"z"}}"#).unwrap();
        let recs = load_jsonl(&p).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[1].query, "");

        let t = dir.path().join("book.txt");
        std::fs::write(&t, "once upon a time").unwrap();
        let recs = load_corpus(&t, "summarize").unwrap();
        assert_eq!(recs[0].id, "book");
        assert_eq!(recs[0].query, "summarize");
    }

    #[test]
    fn bad_line_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        std::fs::write(&p, "{\"id\":\"a\",\"text\":\"x\"}\nnot json\n").unwrap();
        match load_jsonl(&p) {
            Err(ApceError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }
}
