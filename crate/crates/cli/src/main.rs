use std::path::PathBuf;
use std::process::ExitCode;

use apce_cli::commands;
use apce_cli::output::Format;
use apce_cli::sweep::{Axis, ABLATION_INTERVALS};
use apce_cli::{CliResult, Overrides};
use apce_core::sched::Mode;
use clap::{Args, Parser, Subcommand};

/// Query-aware chunk selection experiments on a toy decoder.
///
/// Exit codes: 0 success, 1 runtime failure, 2 bad config, 3 missing input.
/// Log level comes from APCE_LOG (error, warn, info, debug, trace).
#[derive(Parser)]
#[command(name = "apce", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// One generation session per corpus record.
    Run(RunArgs),
    /// Repeat runs across values of one parameter and aggregate.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum)]
        axis: Axis,
        /// Comma-separated values, e.g. 800,1000,1600.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<usize>,
    },
    /// Reprioritization-interval ablation with a dense baseline row.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',', default_values_t = ABLATION_INTERVALS)]
        intervals: Vec<usize>,
    },
    /// Analytical attention memory table.
    Memtable {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
        /// Mark computed cells that disagree with their published values.
        #[arg(long)]
        flag_inconsistent: bool,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Corpus: JSON lines ({"id","text","query","reference"}) or plain text.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Only run the record with this id.
    #[arg(long)]
    record: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_mode)]
    mode: Option<Mode>,
    #[arg(long)]
    chunk_size: Option<usize>,
    #[arg(long, conflicts_with = "fraction")]
    max_chunks: Option<usize>,
    #[arg(long)]
    fraction: Option<f64>,
    #[arg(long)]
    interval: Option<usize>,
    #[arg(long)]
    no_recompute: bool,
    #[arg(long)]
    async_start: Option<usize>,
    #[arg(long)]
    max_new_tokens: Option<usize>,
    /// Disable data-parallel kernels.
    #[arg(long)]
    sequential: bool,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse().map_err(|e: apce_core::ApceError| e.to_string())
}

impl RunArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            mode: self.mode,
            chunk_size: self.chunk_size,
            max_chunks: self.max_chunks,
            fraction: self.fraction,
            interval: self.interval,
            no_recompute: self.no_recompute,
            async_start: self.async_start,
            out_dir: self.out_dir.clone(),
            input: self.input.clone(),
            record: self.record.clone(),
            max_new_tokens: self.max_new_tokens,
            sequential: self.sequential,
        }
    }
}

fn dispatch(cli: Cli) -> CliResult<String> {
    match cli.command {
        Command::Run(args) => {
            let cfg = commands::resolve_config(args.config.as_deref(), &args.overrides())?;
            commands::cmd_run(&cfg, args.format)
        }
        Command::Sweep { run, axis, values } => {
            let cfg = commands::resolve_config(run.config.as_deref(), &run.overrides())?;
            commands::cmd_sweep(&cfg, axis, &values, run.format)
        }
        Command::Ablate { run, intervals } => {
            let cfg = commands::resolve_config(run.config.as_deref(), &run.overrides())?;
            commands::cmd_ablate(&cfg, &intervals, run.format)
        }
        Command::Memtable {
            config,
            format,
            flag_inconsistent,
            out_dir,
        } => {
            let cfg = commands::resolve_config(config.as_deref(), &Overrides::default())?;
            commands::cmd_memtable(&cfg, format, flag_inconsistent, out_dir.as_deref())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("APCE_LOG", "warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("apce: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
