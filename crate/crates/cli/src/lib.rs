//! `kiwi` command-line front end: batch annotation, evaluation, corpus
//! statistics, cost accounting, format conversion and the demo service.
//!
//! Exit codes: 0 success; 1 I/O failure while writing; 2 configuration or
//! input error (including doc-id mismatch); 3 backend unreachable; 4 partial
//! failure (some documents failed, see the run manifest).

pub mod commands;
pub mod config;
pub mod corpus;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use kiwi_core::pipeline::ReInput;

use crate::corpus::Format;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("backend unreachable: {0}")]
    BackendUnreachable(String),
    #[error("{0}")]
    PartialFailure(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Io(_) => 1,
            CliError::Config(_) | CliError::Input(_) => 2,
            CliError::BackendUnreachable(_) => 3,
            CliError::PartialFailure(_) => 4,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "kiwi", version, about = "Clinical information extraction toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Annotate notes with the two-stage NER → RE pipeline.
    Annotate(AnnotateArgs),
    /// Score predictions against gold (exact/relaxed, optional bootstrap).
    Eval(EvalArgs),
    /// Table 1-style entity and relation counts.
    Stats(StatsArgs),
    /// Compute a cost report from a resource ledger.
    Bench(BenchArgs),
    /// Convert annotations between json, brat and bio.
    Convert(ConvertArgs),
    /// Serve the annotation HTTP API.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// TOML config file.
    #[arg(long, env = "KIWI_CONFIG")]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BackendArgs {
    /// Backend: `http(s)://…` endpoint or `mock:<lexicon.tsv>`.
    #[arg(long, env = "KIWI_BACKEND_URL")]
    pub backend: Option<String>,
    /// Maximum in-flight generation requests.
    #[arg(long, env = "KIWI_BATCH_SIZE")]
    pub batch_size: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Json,
    Brat,
}

#[derive(Debug, Args)]
pub struct AnnotateArgs {
    /// A `.txt` note or a directory of them.
    #[arg(long)]
    pub input: PathBuf,
    /// Output directory (created if missing).
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, value_enum, default_value = "json")]
    pub format: OutputFormat,
    #[command(flatten)]
    pub backend: BackendArgs,
    /// Where RE main entities come from.
    #[arg(long, default_value = "pipeline")]
    pub re_input: ReInput,
    /// Gold annotations (`<id>.kiwi.json`) for `--re-input gold`.
    #[arg(long)]
    pub gold: Option<PathBuf>,
    /// Run NER only.
    #[arg(long)]
    pub no_relations: bool,
    /// Recorded in the run manifest; generation is greedy, so the pipeline
    /// itself draws no random numbers.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskChoice {
    Ner,
    Re,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeChoice {
    Exact,
    Relaxed,
    Both,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub gold: PathBuf,
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long, value_enum, default_value = "both")]
    pub task: TaskChoice,
    #[arg(long, value_enum, default_value = "both")]
    pub mode: ModeChoice,
    /// Second system's predictions; adds a bootstrap test of pred > compare.
    #[arg(long)]
    pub compare: Option<PathBuf>,
    /// Bootstrap replicates for --compare.
    #[arg(long, default_value_t = kiwi_core::eval::DEFAULT_REPLICATES)]
    pub bootstrap: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Include the error-category breakdown.
    #[arg(long)]
    pub errors: bool,
    /// Machine-readable JSON on stdout.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// CSV of `timestamp,gpu_id,power_w,mem_gb` samples.
    #[arg(long)]
    pub ledger: PathBuf,
    /// `train` or `inference`.
    #[arg(long)]
    pub phase: kiwi_core::telemetry::Phase,
    #[arg(long)]
    pub num_gpus: u32,
    #[arg(long)]
    pub wall_seconds: f64,
    #[arg(long, default_value_t = 0)]
    pub notes: u64,
    #[arg(long)]
    pub epochs: Option<u32>,
    /// Integrate power over time instead of mean power × wall time.
    #[arg(long)]
    pub trapezoid: bool,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    #[arg(long, value_enum)]
    pub from: Format,
    #[arg(long, value_enum)]
    pub to: Format,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Directory holding `<id>.txt` notes (defaults to --input).
    #[arg(long)]
    pub text: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Listen address (defaults to the config file, then 127.0.0.1:8080).
    #[arg(long, env = "KIWI_BIND")]
    pub bind: Option<String>,
    #[command(flatten)]
    pub backend: BackendArgs,
    /// Allowed CORS origin (repeatable); none allows any origin.
    #[arg(long = "cors-origin")]
    pub cors_origins: Vec<String>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

/// Parse `args` and run; returns the process exit code.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // clap prints help/version with code 0 and usage errors with 2.
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match commands::dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("kiwi: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
