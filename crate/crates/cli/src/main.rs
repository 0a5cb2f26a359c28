//! `bitextkit`: parallel-corpus filtering, synthetic-data selection,
//! ensemble reranking and chrF from the command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 adapter or backend
//! error. Diagnostics go to stderr; stdout carries only machine output.

mod commands;
mod shared;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use shared::CliError;

#[derive(Debug, Parser)]
#[command(name = "bitextkit", version, about = "Parallel-corpus filtering and translation-pipeline toolkit")]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true, value_name = "N")]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

/// Config file plus `key=value` overrides applied after it.
#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// TOML configuration file.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Override a config value, e.g. `stage.similarity.threshold=0.75`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Input file; give two (source, target) for moses-pair.
    #[arg(long = "in", value_name = "PATH", num_args = 1..=2)]
    pub input: Vec<PathBuf>,
    /// Input format: tsv, jsonl or moses-pair; inferred when omitted.
    #[arg(long, value_name = "FORMAT")]
    pub format: Option<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the filtering pipeline over a corpus.
    Filter(commands::FilterArgs),
    /// Print corpus statistics as JSON.
    Stats(commands::StatsArgs),
    /// Build a reference set of dedup keys from corpora already on file.
    DedupBuild(commands::DedupBuildArgs),
    /// Keep the best candidate translations for synthetic data.
    SelectSynth(commands::SelectSynthArgs),
    /// Translate paragraphs with the generate, correct and rerank ensemble.
    Rerank(commands::RerankArgs),
    /// Corpus chrF of a hypothesis file against a reference file.
    Chrf(commands::ChrfArgs),
    /// Check a pipeline config and print cost-ordering warnings.
    ValidateConfig(commands::ValidateConfigArgs),
    /// Parse a dataset manifest and check its files.
    ManifestCheck(commands::ManifestCheckArgs),
    /// Run the protocol conformance suite against an adapter.
    AdapterCheck(commands::AdapterCheckArgs),
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(CliError::Usage("--workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("worker pool: {e}")))?;
    }
    match cli.command {
        Command::Filter(a) => commands::filter(a),
        Command::Stats(a) => commands::stats(a),
        Command::DedupBuild(a) => commands::dedup_build(a),
        Command::SelectSynth(a) => commands::select_synth(a),
        Command::Rerank(a) => commands::rerank(a),
        Command::Chrf(a) => commands::chrf(a),
        Command::ValidateConfig(a) => commands::validate_config(a),
        Command::ManifestCheck(a) => commands::manifest_check(a),
        Command::AdapterCheck(a) => commands::adapter_check(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
