use std::path::Path;

use apce_core::model::Model;
use log::info;

use crate::config::{Overrides, RunConfig};
use crate::error::{CliError, CliResult};
use crate::memtable;
use crate::output::{self, Format};
use crate::runner::{self, RunOutput, RunReport};
use crate::sweep::{self, Axis, SweepOutcome};

/// Loads the config file (if any), applies overrides and validates.
pub fn resolve_config(path: Option<&Path>, overrides: &Overrides) -> CliResult<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    overrides.apply(&mut cfg)?;
    cfg.validate()?;
    Ok(cfg)
}

fn build_model(cfg: &RunConfig) -> CliResult<Model> {
    Ok(Model::new(cfg.model_config())?)
}

fn write_runs(cfg: &RunConfig, runs: &[RunOutput]) -> CliResult<()> {
    for r in runs {
        output::write_run(&cfg.output.dir, r)?;
    }
    let reports: Vec<&RunReport> = runs.iter().map(|r| &r.report).collect();
    output::write_text(
        &cfg.output.dir.join("summary.csv"),
        &output::summary_csv(&reports)?,
    )
}

pub fn cmd_run(cfg: &RunConfig, format: Format) -> CliResult<String> {
    let records = runner::load_records(cfg)?;
    let model = build_model(cfg)?;
    let mut runs = Vec::with_capacity(records.len());
    for rec in &records {
        let id = runner::run_id(&rec.id, "", cfg.mode, cfg.seed);
        info!("running {id}");
        runs.push(runner::run_record(cfg, &model, rec, id, cfg.execution())?);
    }
    write_runs(cfg, &runs)?;
    let reports: Vec<&RunReport> = runs.iter().map(|r| &r.report).collect();
    match format {
        Format::Csv => output::summary_csv(&reports),
        Format::Json => {
            let mut s = String::new();
            for r in &reports {
                s.push_str(&serde_json::to_string(r).map_err(|e| CliError::Runtime(e.into()))?);
                s.push('\n');
            }
            Ok(s)
        }
        Format::Text => Ok(reports
            .iter()
            .map(|r| {
                let rouge = r
                    .metrics
                    .rouge_l
                    .map_or_else(|| "-".to_string(), |s| format!("{:.4}", s.f1));
                format!(
                    "{} mode={} chunks={}/{} ttft={:.6} total={:.6} tokens={} taken={} available={} rouge_l={}\n",
                    r.run_id,
                    r.mode,
                    r.document.k.min(r.document.n_chunks),
                    r.document.n_chunks,
                    r.trace.ttft,
                    r.trace.total_time,
                    r.trace.output_tokens,
                    r.replacement_stats.replacements_taken,
                    r.replacement_stats.replacements_available,
                    rouge
                )
            })
            .collect()),
    }
}

fn emit_aggregate(
    cfg: &RunConfig,
    stem: &str,
    outcome: &SweepOutcome,
    format: Format,
) -> CliResult<String> {
    write_runs(cfg, &outcome.runs)?;
    let csv = sweep::aggregate_csv(&outcome.report)?;
    output::write_text(&cfg.output.dir.join(format!("{stem}.csv")), &csv)?;
    output::write_json(
        &cfg.output.dir.join(format!("{stem}.json")),
        &outcome.report,
    )?;
    match format {
        Format::Csv => Ok(csv),
        Format::Json => {
            let mut s = serde_json::to_string_pretty(&outcome.report)
                .map_err(|e| CliError::Runtime(e.into()))?;
            s.push('\n');
            Ok(s)
        }
        Format::Text => Ok(sweep::aggregate_text(&outcome.report)),
    }
}

pub fn cmd_sweep(
    cfg: &RunConfig,
    axis: Axis,
    values: &[usize],
    format: Format,
) -> CliResult<String> {
    let records = runner::load_records(cfg)?;
    let model = build_model(cfg)?;
    let outcome = sweep::sweep(cfg, &model, &records, axis, values)?;
    emit_aggregate(cfg, &format!("sweep_{}", axis.name()), &outcome, format)
}

pub fn cmd_ablate(cfg: &RunConfig, intervals: &[usize], format: Format) -> CliResult<String> {
    let records = runner::load_records(cfg)?;
    let model = build_model(cfg)?;
    let outcome = sweep::ablate(cfg, &model, &records, intervals)?;
    emit_aggregate(cfg, "ablation", &outcome, format)
}

/// Memory table; written under `out_dir` only when one is given.
pub fn cmd_memtable(
    cfg: &RunConfig,
    format: Format,
    flag_inconsistent: bool,
    out_dir: Option<&Path>,
) -> CliResult<String> {
    let report = memtable::build(&cfg.memtable_rows())?;
    let text = memtable::render(&report, format, flag_inconsistent)?;
    if let Some(dir) = out_dir {
        let ext = match format {
            Format::Json => "json",
            Format::Csv => "csv",
            Format::Text => "txt",
        };
        output::write_text(&dir.join(format!("memtable.{ext}")), &text)?;
    }
    Ok(text)
}
