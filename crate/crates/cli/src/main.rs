use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

/// Retrieve, rerank and generate over an image corpus.
#[derive(Debug, Parser)]
#[command(name = "mmrag", version, about)]
struct Cli {
    /// Pipeline configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// error, warn, info, debug or trace; module filters are accepted.
    #[arg(long, global = true, default_value = "warn")]
    log_level: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build or query the image memory.
    #[command(subcommand)]
    Index(IndexCommand),
    /// Top-K retrieval for every question in a QA file.
    Retrieve(RetrieveArgs),
    /// Rerank retrieved candidates with the relevance scorer.
    Rerank(RerankArgs),
    /// Fit the adaptive threshold from scored validation recalls.
    Calibrate(CalibrateArgs),
    /// Build training data.
    #[command(subcommand)]
    Data(DataCommand),
    /// Apply forward-diffusion noise to an image tensor.
    Distort(DistortArgs),
    /// Score a predictions file against a QA file.
    Eval(EvalArgs),
    /// Full retrieve, rerank and generate run with evaluation.
    Run(RunArgs),
    /// Write a small synthetic corpus, QA file, embeddings and config.
    Synth(SynthArgs),
}

#[derive(Debug, Subcommand)]
enum IndexCommand {
    /// Check or compute corpus embeddings and write them as a matrix file.
    Build(IndexBuildArgs),
    /// Embed one question and print its top-K records.
    Query(IndexQueryArgs),
}

#[derive(Debug, Args)]
struct CorpusArgs {
    /// Image records, one JSON object per line.
    #[arg(long)]
    corpus: PathBuf,
    /// Accept records with empty captions.
    #[arg(long)]
    caption_less: bool,
}

#[derive(Debug, Args)]
struct IndexBuildArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Existing embeddings to validate; otherwise the configured embedder is called per image.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct IndexQueryArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long)]
    question: String,
    #[arg(short, long)]
    k: Option<usize>,
}

#[derive(Debug, Args)]
struct RetrieveArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long)]
    qa: PathBuf,
    #[arg(short, long)]
    k: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ThresholdArgs {
    /// Threshold file written by `calibrate`.
    #[arg(long, conflicts_with = "eta")]
    threshold: Option<PathBuf>,
    /// Fixed threshold in [0, 1].
    #[arg(long)]
    eta: Option<f64>,
}

#[derive(Debug, Args)]
struct RerankArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long)]
    qa: PathBuf,
    /// Output of `retrieve`.
    #[arg(long)]
    retrieved: PathBuf,
    #[arg(short, long)]
    n: Option<usize>,
    /// caption_aware or caption_agnostic.
    #[arg(long)]
    template: Option<String>,
    #[command(flatten)]
    threshold: ThresholdArgs,
    #[arg(long)]
    out: PathBuf,
    /// Also write every scored candidate as a calibration recall.
    #[arg(long)]
    recalls: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CalibrateArgs {
    /// Lines of {"qid", "record_id", "p", "correct"}.
    #[arg(long)]
    recalls: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Directory for the two density curves as plain-text columns.
    #[arg(long)]
    curves: Option<PathBuf>,
    #[arg(long, default_value_t = mmrag_core::threshold::DEFAULT_GRID_SIZE)]
    grid: usize,
}

#[derive(Debug, Subcommand)]
enum DataCommand {
    /// Yes/No relevance examples from positives and sampled hard negatives.
    Rank(DataRankArgs),
    /// QA examples padded with distractor images.
    Noise(DataNoiseArgs),
}

#[derive(Debug, Args)]
struct DataRankArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long)]
    qa: PathBuf,
    #[arg(long, default_value_t = 2)]
    negs: usize,
    #[arg(long, default_value = "caption_aware")]
    template: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct DataNoiseArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long)]
    qa: PathBuf,
    #[arg(long)]
    max_images: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct DistortArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    gamma: f64,
    #[arg(long, default_value_t = 10)]
    steps: u32,
    /// Run the step-by-step chain instead of the closed form.
    #[arg(long)]
    stepwise: bool,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Lines of {"qid", "prediction", "retrieved_ids", ...}.
    #[arg(long)]
    predictions: PathBuf,
    #[arg(long)]
    qa: PathBuf,
    /// Machine-readable report.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long)]
    qa: PathBuf,
    #[command(flatten)]
    threshold: ThresholdArgs,
    /// Receives traces, predictions, failures and the report.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 100)]
    queries: usize,
    #[arg(long)]
    out_dir: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .parse_filters(&cli.log_level)
        .format_timestamp(None)
        .init();
    match commands::dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", render(&e));
            ExitCode::FAILURE
        }
    }
}

/// The error chain joined by `: `, skipping causes already spelled out by their parent.
fn render(e: &anyhow::Error) -> String {
    let mut out = String::new();
    let mut parent = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !parent.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
        parent = text;
    }
    out
}
