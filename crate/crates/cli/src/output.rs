use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context as _;
use serde::Serialize;

use crate::error::{CliError, CliResult};
use crate::runner::{RunOutput, RunReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Json,
    Csv,
    Text,
}

fn runtime(e: anyhow::Error) -> CliError {
    CliError::Runtime(e)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)
            .with_context(|| format!("creating {}", dir.display()))
            .map_err(runtime)?;
    }
    let mut text = serde_json::to_string_pretty(value).map_err(|e| runtime(e.into()))?;
    text.push('\n');
    fs::write(path, text)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(runtime)
}

pub fn report_path(out_dir: &Path, run_id: &str) -> PathBuf {
    out_dir.join("runs").join(format!("{run_id}.json"))
}

/// Writes `<run_id>.json` and the wall-clock `<run_id>.profile.json`.
pub fn write_run(out_dir: &Path, run: &RunOutput) -> CliResult<()> {
    let id = &run.report.run_id;
    write_json(&report_path(out_dir, id), &run.report)?;
    write_json(
        &out_dir.join("runs").join(format!("{id}.profile.json")),
        &run.profile,
    )
}

pub const SUMMARY_HEADER: [&str; 5] = ["run_id", "mode", "ttft", "total_time", "tokens"];

pub fn summary_csv(reports: &[&RunReport]) -> CliResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| runtime(e.into());
    w.write_record(SUMMARY_HEADER).map_err(err)?;
    for r in reports {
        w.write_record([
            r.run_id.clone(),
            r.mode.to_string(),
            r.trace.ttft.to_string(),
            r.trace.total_time.to_string(),
            r.trace.output_tokens.to_string(),
        ])
        .map_err(err)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| runtime(anyhow::anyhow!("{e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)
            .with_context(|| format!("creating {}", dir.display()))
            .map_err(runtime)?;
    }
    fs::write(path, text)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(runtime)
}
