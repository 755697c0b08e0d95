//! `morphoforge` command-line interface.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or schema error, 3 external
//! service error. Diagnostics go to standard error; results go to files or
//! standard output.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand};
use morphoforge::prompts::{PromptFormat, Sampling};

use config::{parse_serde, ModelChoice};

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_EXTERNAL: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "morphoforge", version, about = "Nanomaterial morphology prediction from synthesis parameters")]
struct Cli {
    /// Worker threads for parallel fitting [default: logical cores]
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,
    /// JSON file of default settings; command-line flags take precedence
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Increase log detail on standard error (repeatable)
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load and validate a synthesis CSV, print a summary
    Ingest(IngestArgs),
    /// Screen features with Bonferroni-corrected hypothesis tests
    Stats(StatsArgs),
    /// Fit one binary classifier with grid search and threshold tuning
    Train(TrainArgs),
    /// Predict with a trained model or a few-shot LLM prompt
    #[command(subcommand)]
    Predict(PredictCommand),
    /// Rank features by mean |SHAP| for a trained model
    Importance(ImportanceArgs),
    /// Run a repeated experiment from a spec and write report tables
    #[command(subcommand)]
    Bench(BenchCommand),
    /// Compare two grayscale images (PGM or CSV matrices)
    Imgmetric(ImgmetricArgs),
    /// Polydispersity index of a diameter list
    Pdi(PdiArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Synthesis CSV
    #[arg(long)]
    pub input: PathBuf,
    /// Only check the file; write nothing
    #[arg(long, conflicts_with = "out")]
    pub validate: bool,
    /// Write the records back in canonical column order
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Synthesis CSV
    #[arg(long)]
    pub input: PathBuf,
    /// Family-wise significance level [default: 0.05]
    #[arg(long)]
    pub alpha: Option<f64>,
    /// CSV report path [default: standard output]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the aligned per-feature table here
    #[arg(long, value_name = "FILE")]
    pub table: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Synthesis CSV
    #[arg(long)]
    pub input: PathBuf,
    /// Binary task, e.g. shape:Stick or size:Cube_S
    #[arg(long)]
    pub task: String,
    /// Model family [default: rf, or the family of --grid]
    #[arg(long, value_enum)]
    pub model: Option<ModelChoice>,
    /// Hyperparameter grid JSON [default: built-in grid for the family]
    #[arg(long)]
    pub grid: Option<PathBuf>,
    /// Cross-validation folds [default: 5]
    #[arg(long)]
    pub folds: Option<usize>,
    /// Master seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Hold out this stratified fraction and report test metrics
    #[arg(long)]
    pub test_fraction: Option<f64>,
    /// Keep the columns normally excluded as non-informative
    #[arg(long)]
    pub keep_all_features: bool,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum PredictCommand {
    /// Score rows with a trained model
    Tree(PredictTreeArgs),
    /// Ask a chat model whether each query shows the target shape
    Llm(PredictLlmArgs),
}

#[derive(Debug, Args)]
pub struct PredictTreeArgs {
    /// Model JSON written by `train`
    #[arg(long)]
    pub model: PathBuf,
    /// Rows to score; label columns are optional
    #[arg(long)]
    pub input: PathBuf,
    /// Predictions CSV [default: standard output]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictLlmArgs {
    /// Labelled synthesis CSV the examples are drawn from
    #[arg(long)]
    pub train: PathBuf,
    /// Rows to ask about; label columns are optional
    #[arg(long)]
    pub query: PathBuf,
    /// Target shape, e.g. Sphere
    #[arg(long)]
    pub target: String,
    /// Endpoint preset id or endpoint JSON file [default: gpt-4]
    #[arg(long)]
    pub endpoint: Option<String>,
    /// Examples per prompt [default: 4]
    #[arg(long)]
    pub n_examples: Option<usize>,
    /// Example sampling; only at_least_one_target is allowed here [default: at_least_one_target]
    #[arg(long, value_parser = parse_serde::<Sampling>)]
    pub sampling: Option<Sampling>,
    /// textual or tabular [default: textual]
    #[arg(long, value_parser = parse_serde::<PromptFormat>)]
    pub format: Option<PromptFormat>,
    /// Master seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Answer from this transcript instead of the network
    #[arg(long)]
    pub replay: Option<PathBuf>,
    /// Append live exchanges to this transcript
    #[arg(long, conflicts_with = "replay")]
    pub record: Option<PathBuf>,
    /// Directory of synthesis templates (*.txt) replacing the built-in ones
    #[arg(long)]
    pub templates: Option<PathBuf>,
    /// Predictions CSV [default: standard output]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ImportanceArgs {
    /// Model JSON written by `train`
    #[arg(long)]
    pub model: PathBuf,
    /// Rows to explain; label columns are optional
    #[arg(long)]
    pub data: PathBuf,
    /// Features printed to standard output [default: 10]
    #[arg(long)]
    pub top: Option<usize>,
    /// Directory for the full ranking and per-row explanations
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum BenchCommand {
    /// Forest or boosting experiment
    Trees(BenchTreesArgs),
    /// Few-shot LLM sweep
    Llm(BenchLlmArgs),
}

#[derive(Debug, Args)]
pub struct BenchTreesArgs {
    /// Experiment spec JSON
    #[arg(long)]
    pub spec: PathBuf,
    /// Synthesis CSV
    #[arg(long)]
    pub input: PathBuf,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchLlmArgs {
    /// Experiment spec JSON with an llm model
    #[arg(long)]
    pub spec: PathBuf,
    /// Synthesis CSV
    #[arg(long)]
    pub input: PathBuf,
    /// Output directory; live runs also write transcript.jsonl here
    #[arg(long)]
    pub out: PathBuf,
    /// Answer from this transcript instead of the network
    #[arg(long)]
    pub replay: Option<PathBuf>,
    /// Directory of synthesis templates (*.txt) replacing the built-in ones
    #[arg(long)]
    pub templates: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ImgmetricArgs {
    /// ssim or psnr
    #[arg(value_parser = ["ssim", "psnr"])]
    pub metric: String,
    /// Reference image
    pub a: PathBuf,
    /// Compared image
    pub b: PathBuf,
    /// Peak value for CSV matrices [default: 255]
    #[arg(long)]
    pub max_value: Option<f64>,
    /// SSIM constant k1 [default: 0.01]
    #[arg(long)]
    pub k1: Option<f64>,
    /// SSIM constant k2 [default: 0.03]
    #[arg(long)]
    pub k2: Option<f64>,
}

#[derive(Debug, Args)]
pub struct PdiArgs {
    /// Single-column CSV of particle diameters
    pub diameters: PathBuf,
}

/// A failed command: message for standard error and its exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Failure {
        Failure { code: EXIT_USAGE, message: message.into() }
    }

    pub fn data(message: impl Into<String>) -> Failure {
        Failure { code: EXIT_DATA, message: message.into() }
    }
}

impl From<morphoforge::Error> for Failure {
    fn from(e: morphoforge::Error) -> Self {
        let code = match e.class() {
            morphoforge::ErrorClass::Usage => EXIT_USAGE,
            morphoforge::ErrorClass::Data => EXIT_DATA,
            morphoforge::ErrorClass::External => EXIT_EXTERNAL,
        };
        Failure { code, message: e.to_string() }
    }
}

macro_rules! via_core_error {
    ($($t:ty),* $(,)?) => {
        $(impl From<$t> for Failure {
            fn from(e: $t) -> Self {
                morphoforge::Error::from(e).into()
            }
        })*
    };
}

via_core_error!(
    morphoforge::data::DataError,
    morphoforge::stats::StatsError,
    morphoforge::trees::TreeError,
    morphoforge::attribution::AttributionError,
    morphoforge::prompts::PromptError,
    morphoforge::llm::LlmError,
    morphoforge::harness::HarnessError,
    morphoforge::img_metrics::ImageError,
);

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        2 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_env("MORPHOFORGE_LOG")
        .format_timestamp(None)
        .init();
}

fn run(cli: Cli) -> Result<(), Failure> {
    let file = match &cli.config {
        Some(path) => config::FileConfig::load(path)?,
        None => config::FileConfig::default(),
    };
    if let Some(jobs) = cli.jobs.or(file.jobs) {
        if jobs == 0 {
            return Err(Failure::usage("--jobs must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| Failure::usage(e.to_string()))?;
    }
    match cli.command {
        Command::Ingest(a) => commands::ingest(&a),
        Command::Stats(a) => commands::stats(&a, &file),
        Command::Train(a) => commands::train(&a, &file),
        Command::Predict(PredictCommand::Tree(a)) => commands::predict_tree(&a),
        Command::Predict(PredictCommand::Llm(a)) => commands::predict_llm(&a, &file),
        Command::Importance(a) => commands::importance(&a, &file),
        Command::Bench(BenchCommand::Trees(a)) => commands::bench_trees(&a),
        Command::Bench(BenchCommand::Llm(a)) => commands::bench_llm(&a, &file),
        Command::Imgmetric(a) => commands::imgmetric(&a, &file),
        Command::Pdi(a) => commands::pdi(&a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    init_logging(cli.verbose);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
