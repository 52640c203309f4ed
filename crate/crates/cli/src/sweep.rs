//! Parameter sweeps and the reprioritization-interval ablation.
//!
//! Every (value, record) pair is one independent session; sessions run on
//! the rayon pool and are aggregated per value into mean±std rows.

use apce_core::metrics::MeanStd;
use apce_core::model::Model;
use apce_core::sched::Mode;
use apce_core::textpipe::CorpusRecord;
use apce_core::Execution;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::runner::{run_id, run_record, RunOutput, SCHEMA_VERSION};

pub const ABLATION_INTERVALS: [usize; 7] = [1, 5, 10, 25, 50, 100, 200];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Axis {
    NChunks,
    ChunkSize,
    ReprioritizationInterval,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::NChunks => "n_chunks",
            Axis::ChunkSize => "chunk_size",
            Axis::ReprioritizationInterval => "reprioritization_interval",
        }
    }

    fn apply(self, cfg: &mut RunConfig, value: usize) {
        match self {
            Axis::NChunks => {
                cfg.max_chunks = Some(value);
                cfg.fraction = None;
            }
            Axis::ChunkSize => cfg.chunk_size = value,
            Axis::ReprioritizationInterval => cfg.reprioritization.interval = value,
        }
    }

    fn label(self, mode: Mode, value: usize) -> String {
        match (mode, self) {
            (Mode::Dense, _) => "Dense".to_string(),
            (Mode::Apce, Axis::NChunks) => format!("APCE ({value} chunks)"),
            (Mode::Apce, Axis::ChunkSize) => format!("APCE ({value} token chksize)"),
            (Mode::Apce, Axis::ReprioritizationInterval) => value.to_string(),
        }
    }
}

/// One row of a Table-1/2/4 shaped aggregate.
#[derive(Debug, Clone, Serialize)]
pub struct AggregateRow {
    pub label: String,
    pub value: Option<usize>,
    pub mode: Mode,
    pub runs: usize,
    pub rouge_l_f1: Option<MeanStd>,
    pub embedding_cosine_proxy: Option<MeanStd>,
    pub ttft: MeanStd,
    pub total_time: MeanStd,
    pub replacements_taken: MeanStd,
    pub replacements_available: MeanStd,
    pub output_tokens: MeanStd,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub schema_version: u32,
    pub kind: String,
    pub axis: Axis,
    pub rows: Vec<AggregateRow>,
}

pub struct SweepOutcome {
    pub report: SweepReport,
    pub runs: Vec<RunOutput>,
}

fn stat(values: &[f64]) -> CliResult<MeanStd> {
    MeanStd::of(values).map_err(CliError::from)
}

fn optional_stat(values: Vec<Option<f64>>) -> CliResult<Option<MeanStd>> {
    let present: Vec<f64> = values.iter().flatten().copied().collect();
    if present.is_empty() || present.len() != values.len() {
        return Ok(None);
    }
    stat(&present).map(Some)
}

pub fn aggregate(
    label: String,
    value: Option<usize>,
    mode: Mode,
    runs: &[&RunOutput],
) -> CliResult<AggregateRow> {
    let col = |f: &dyn Fn(&RunOutput) -> f64| runs.iter().map(|r| f(r)).collect::<Vec<f64>>();
    Ok(AggregateRow {
        label,
        value,
        mode,
        runs: runs.len(),
        rouge_l_f1: optional_stat(
            runs.iter()
                .map(|r| r.report.metrics.rouge_l.map(|s| s.f1))
                .collect(),
        )?,
        embedding_cosine_proxy: optional_stat(
            runs.iter()
                .map(|r| r.report.metrics.embedding_cosine_proxy)
                .collect(),
        )?,
        ttft: stat(&col(&|r| r.report.trace.ttft))?,
        total_time: stat(&col(&|r| r.report.trace.total_time))?,
        replacements_taken: stat(&col(&|r| {
            r.report.replacement_stats.replacements_taken as f64
        }))?,
        replacements_available: stat(&col(&|r| {
            r.report.replacement_stats.replacements_available as f64
        }))?,
        output_tokens: stat(&col(&|r| r.report.trace.output_tokens as f64))?,
    })
}

struct Job {
    group: usize,
    value: Option<usize>,
    cfg: RunConfig,
    tag: String,
}

fn run_jobs(
    model: &Model,
    records: &[CorpusRecord],
    jobs: &[Job],
    exec: Execution,
) -> CliResult<Vec<(usize, RunOutput)>> {
    let work: Vec<(&Job, &CorpusRecord)> = jobs
        .iter()
        .flat_map(|j| records.iter().map(move |r| (j, r)))
        .collect();
    // one session per worker; the sessions themselves stay sequential
    let inner = if work.len() > 1 {
        Execution::Sequential
    } else {
        exec
    };
    work.par_iter()
        .map(|(job, rec)| {
            let id = run_id(&rec.id, &job.tag, job.cfg.mode, job.cfg.seed);
            run_record(&job.cfg, model, rec, id, inner).map(|o| (job.group, o))
        })
        .collect()
}

fn finish(
    kind: &str,
    axis: Axis,
    jobs: &[Job],
    results: Vec<(usize, RunOutput)>,
) -> CliResult<SweepOutcome> {
    let mut rows = Vec::with_capacity(jobs.len());
    for (g, job) in jobs.iter().enumerate() {
        let group: Vec<&RunOutput> = results
            .iter()
            .filter(|(i, _)| *i == g)
            .map(|(_, o)| o)
            .collect();
        let label = match job.value {
            Some(v) => axis.label(job.cfg.mode, v),
            None => "Dense".to_string(),
        };
        rows.push(aggregate(label, job.value, job.cfg.mode, &group)?);
    }
    Ok(SweepOutcome {
        report: SweepReport {
            schema_version: SCHEMA_VERSION,
            kind: kind.to_string(),
            axis,
            rows,
        },
        runs: results.into_iter().map(|(_, o)| o).collect(),
    })
}

/// One aggregate row per value, over every record.
pub fn sweep(
    base: &RunConfig,
    model: &Model,
    records: &[CorpusRecord],
    axis: Axis,
    values: &[usize],
) -> CliResult<SweepOutcome> {
    if values.is_empty() {
        return Err(CliError::config("sweep needs at least one value"));
    }
    let jobs = values
        .iter()
        .enumerate()
        .map(|(group, &v)| {
            let mut cfg = base.clone();
            axis.apply(&mut cfg, v);
            cfg.validate()?;
            Ok(Job {
                group,
                value: Some(v),
                cfg,
                tag: format!("{}-{v}", axis.name()),
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    let results = run_jobs(model, records, &jobs, base.execution())?;
    finish("sweep", axis, &jobs, results)
}

/// Interval ablation with reprioritization enabled, preceded by a dense
/// baseline row.
pub fn ablate(
    base: &RunConfig,
    model: &Model,
    records: &[CorpusRecord],
    intervals: &[usize],
) -> CliResult<SweepOutcome> {
    if intervals.is_empty() {
        return Err(CliError::config("ablation needs at least one interval"));
    }
    let mut dense = base.clone();
    dense.mode = Mode::Dense;
    let mut jobs = vec![Job {
        group: 0,
        value: None,
        cfg: dense,
        tag: "ablation-dense".to_string(),
    }];
    for (i, &v) in intervals.iter().enumerate() {
        let mut cfg = base.clone();
        cfg.mode = Mode::Apce;
        cfg.reprioritization.enabled = true;
        cfg.reprioritization.interval = v;
        cfg.validate()?;
        jobs.push(Job {
            group: i + 1,
            value: Some(v),
            cfg,
            tag: format!("ablation-interval-{v}"),
        });
    }
    let results = run_jobs(model, records, &jobs, base.execution())?;
    finish("ablation", Axis::ReprioritizationInterval, &jobs, results)
}

fn cell(m: &MeanStd) -> String {
    m.to_string()
}

pub fn aggregate_csv(report: &SweepReport) -> CliResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| CliError::Runtime(e.into());
    w.write_record([
        "label",
        "value",
        "mode",
        "runs",
        "rouge_l_f1",
        "embedding_cosine_proxy",
        "ttft",
        "total_time",
        "replacements_taken",
        "replacements_available",
        "output_tokens",
    ])
    .map_err(err)?;
    for r in &report.rows {
        w.write_record([
            r.label.clone(),
            r.value.map(|v| v.to_string()).unwrap_or_default(),
            r.mode.to_string(),
            r.runs.to_string(),
            r.rouge_l_f1.as_ref().map(cell).unwrap_or_default(),
            r.embedding_cosine_proxy
                .as_ref()
                .map(cell)
                .unwrap_or_default(),
            cell(&r.ttft),
            cell(&r.total_time),
            cell(&r.replacements_taken),
            cell(&r.replacements_available),
            cell(&r.output_tokens),
        ])
        .map_err(err)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| CliError::Runtime(anyhow::anyhow!("{e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn aggregate_text(report: &SweepReport) -> String {
    let mut out = format!(
        "{:<26} {:>16} {:>16} {:>16} {:>14} {:>16}\n",
        "Method", "ROUGE-L F1", "TTFT (s)", "Total (s)", "Taken", "Available"
    );
    for r in &report.rows {
        let rouge = r
            .rouge_l_f1
            .as_ref()
            .map(cell)
            .unwrap_or_else(|| "-".into());
        out.push_str(&format!(
            "{:<26} {:>16} {:>16} {:>16} {:>14} {:>16}\n",
            r.label,
            rouge,
            cell(&r.ttft),
            cell(&r.total_time),
            format!(
                "{:.1}±{:.1}",
                r.replacements_taken.mean, r.replacements_taken.std
            ),
            format!(
                "{:.1}±{:.1}",
                r.replacements_available.mean, r.replacements_available.std
            ),
        ));
    }
    out
}
