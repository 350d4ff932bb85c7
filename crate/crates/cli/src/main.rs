//! `prefixsql`: build prefix benchmarks, run baselines, score predictions,
//! emit curriculum schedules, generate canonical questions and serve
//! suggestions.

mod commands;
mod manifest;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "prefixsql", version, about = "Prefix-to-SQL benchmark toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Split a corpus and write per-split prefix benchmarks, stats and a retrieval index.
    Build(BuildArgs),
    /// Score a prediction file against a benchmark.
    Evaluate(EvaluateArgs),
    /// Emit a curriculum schedule for a training benchmark.
    Schedule(ScheduleArgs),
    /// Run a retrieval baseline over a benchmark.
    Baseline(BaselineArgs),
    /// Print benchmark statistics per split.
    Stats(StatsArgs),
    /// Serve /suggest and /healthz over HTTP.
    Serve(ServeArgs),
    /// Generate canonical questions for SQL, or report rule coverage of a corpus.
    Genq(GenqArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SplitChoice {
    Question,
    Template,
    Provided,
}

#[derive(Debug, Args)]
struct BuildArgs {
    /// Corpus in canonical JSONL.
    #[arg(long)]
    corpus: PathBuf,
    /// Schema JSON document.
    #[arg(long)]
    schema: PathBuf,
    #[arg(long, value_enum, default_value = "question")]
    split: SplitChoice,
    /// Train, dev and test fractions.
    #[arg(long, default_value = "0.7,0.1,0.2")]
    fractions: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Keep only databases with more than this many examples.
    #[arg(long)]
    min_db_examples: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    bench: PathBuf,
    #[arg(long)]
    predictions: PathBuf,
    /// Comma-separated cutoffs.
    #[arg(long = "k", default_value = "5,10")]
    k_list: String,
    /// Report JSON path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ScheduleArgs {
    #[arg(long)]
    bench: PathBuf,
    #[arg(long, default_value_t = 1)]
    lambda: u32,
    #[arg(long, default_value_t = 2)]
    m: u32,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    /// paper_literal or cumulative.
    #[arg(long, default_value = "paper_literal")]
    mode: String,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct BaselineArgs {
    /// Training benchmark the index is built from.
    #[arg(long, conflicts_with = "index", required_unless_present = "index")]
    train: Option<PathBuf>,
    /// Prebuilt index JSON.
    #[arg(long)]
    index: Option<PathBuf>,
    /// Benchmark whose prefixes are predicted.
    #[arg(long)]
    bench: PathBuf,
    /// most-frequent or prefix-nn.
    #[arg(long, default_value = "prefix-nn")]
    baseline: String,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct StatsArgs {
    /// One or more benchmark files.
    #[arg(required = true)]
    bench: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long)]
    index: PathBuf,
    /// most-frequent, prefix-nn or file:<predictions.jsonl>.
    #[arg(long, default_value = "prefix-nn")]
    predictor: String,
    /// Benchmark for resolving prefix ids in file mode.
    #[arg(long)]
    bench: Option<PathBuf>,
    /// Rules JSON; the bundled rules when omitted.
    #[arg(long)]
    rules: Option<PathBuf>,
    #[arg(long, env = "PREFIXSQL_PORT", default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    /// Allowed CORS origin; any origin when omitted.
    #[arg(long)]
    cors_origin: Option<String>,
    /// Keep operator symbols in questions instead of words.
    #[arg(long)]
    literal_ops: bool,
}

#[derive(Debug, Args)]
struct GenqArgs {
    /// A single SQL query.
    #[arg(long, conflicts_with = "corpus", required_unless_present = "corpus")]
    sql: Option<String>,
    /// Corpus to report coverage for.
    #[arg(long, requires = "schema")]
    corpus: Option<PathBuf>,
    #[arg(long)]
    schema: Option<PathBuf>,
    #[arg(long)]
    rules: Option<PathBuf>,
    #[arg(long)]
    literal_ops: bool,
}

fn init_logging(default: &str) {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PREFIXSQL_LOG", default))
        .format(|buf, record| {
            if record.target() == "access" {
                writeln!(buf, "{}", record.args())
            } else {
                writeln!(buf, "[{} {}] {}", record.level(), record.target(), record.args())
            }
        })
        .init();
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(if matches!(cli.command, Command::Serve(_)) { "info" } else { "warn" });
    let result = match cli.command {
        Command::Build(a) => commands::build(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Schedule(a) => commands::schedule(a),
        Command::Baseline(a) => commands::baseline(a),
        Command::Stats(a) => commands::stats(a),
        Command::Serve(a) => commands::serve(a),
        Command::Genq(a) => commands::genq(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
