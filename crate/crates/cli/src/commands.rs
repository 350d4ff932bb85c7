use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use prefixsql_core::baselines::{build_index, run_baseline, write_predictions, Baseline, HistoricalIndex, Ranker};
use prefixsql_core::corpus::{load_corpus, load_schemas, CorpusFormat};
use prefixsql_core::curriculum::{build_schedule, flatten_pairs, CurriculumConfig, CurriculumError, PacingMode};
use prefixsql_core::metrics::{evaluate as score, read_predictions, render_table, MetricReport};
use prefixsql_core::prefixbench::{bench_to_jsonl, build_bench, read_bench, stats_by_split, PrefixInstance};
use prefixsql_core::questiongen::{coverage_report, default_rules, load_rules, match_rule, render_question, CanonicalRule, OpStyle};
use prefixsql_core::splitter::{frequent_db_filter, provided_split, question_split, template_split, Fractions, SplitError, SplitName};
use prefixsql_service::{serve as run_server, EngineConfig, PredictorSpec, ServeConfig};

use crate::manifest::{sidecar, RunManifest};
use crate::{BaselineArgs, BuildArgs, EvaluateArgs, GenqArgs, ScheduleArgs, ServeArgs, SplitChoice, StatsArgs};

pub enum CliError {
    /// Bad flags or values; exit 2.
    Usage(String),
    /// Anything that went wrong while running; exit 1.
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Runtime(e) => {
                // sources already embedded in their parent's message are skipped
                let mut text = String::new();
                for cause in e.chain() {
                    let msg = cause.to_string();
                    if !text.contains(&msg) {
                        if !text.is_empty() {
                            text.push_str(": ");
                        }
                        text.push_str(&msg);
                    }
                }
                f.write_str(&text)
            }
        }
    }
}

impl<E: Into<anyhow::Error>> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Runtime(e.into())
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn usage(message: impl Into<String>) -> CliError {
    CliError::Usage(message.into())
}

/// Writes to stdout, treating a closed pipe (e.g. `| head`) as success.
fn emit(text: &str) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(anyhow!(e).context("cannot write to stdout").into()),
        _ => Ok(()),
    }
}

fn write(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn parse_fractions(raw: &str) -> Result<Fractions> {
    let parts: Vec<f64> = raw
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| usage(format!("--fractions: expected three comma-separated numbers, got {raw:?}")))?;
    let [train, dev, test] = parts[..] else {
        return Err(usage(format!("--fractions: expected three values, got {}", parts.len())));
    };
    Fractions::new(train, dev, test).map_err(|e| usage(e.to_string()))
}

fn parse_k_list(raw: &str) -> Result<Vec<usize>> {
    let ks: Vec<usize> = raw
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| usage(format!("--k: expected comma-separated positive integers, got {raw:?}")))?;
    if ks.is_empty() || ks.contains(&0) {
        return Err(usage("--k values must be at least 1"));
    }
    Ok(ks)
}

const BUILD_OUTPUTS: [&str; 6] = [
    "split.json",
    "bench_train.jsonl",
    "bench_dev.jsonl",
    "bench_test.jsonl",
    "stats.json",
    "index.json",
];

pub fn build(a: BuildArgs) -> Result<()> {
    let fractions = match a.split {
        SplitChoice::Provided => None,
        _ => Some(parse_fractions(&a.fractions)?),
    };
    let schemas = load_schemas(&a.schema)?;
    let mut corpus = load_corpus(&a.corpus, CorpusFormat::CanonicalJsonl, schemas)?;
    if let Some(min) = a.min_db_examples {
        corpus = frequent_db_filter(&corpus, min);
    }
    let split = match (a.split, fractions) {
        (SplitChoice::Question, Some(f)) => question_split(&corpus, f, a.seed),
        (SplitChoice::Template, Some(f)) => template_split(&corpus, f, a.seed),
        _ => provided_split(&corpus),
    }
    .map_err(|e| match e {
        SplitError::MissingProvidedSplit(_) | SplitError::BadProvidedSplit { .. } => usage(e.to_string()),
        other => CliError::Runtime(other.into()),
    })?;
    for w in &split.warnings {
        eprintln!("warning: {w}");
    }
    let bench = build_bench(&corpus, &split)?;
    let part = |name: SplitName| -> Vec<PrefixInstance> { bench.iter().filter(|i| i.split_name == name).cloned().collect() };
    let train = part(SplitName::Train);

    let parent = match a.out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&parent).with_context(|| format!("cannot create {}", parent.display()))?;
    let staging = tempfile::Builder::new()
        .prefix(".prefixsql-build-")
        .tempdir_in(&parent)
        .context("cannot create staging directory")?;
    let dir = staging.path();
    write(&dir.join("split.json"), &(split.to_json() + "\n"))?;
    for name in SplitName::ALL {
        write(&dir.join(format!("bench_{name}.jsonl")), &bench_to_jsonl(&part(name)))?;
    }
    let stats = stats_by_split(&bench)?;
    write(&dir.join("stats.json"), &(serde_json::to_string_pretty(&stats).map_err(anyhow::Error::from)? + "\n"))?;
    let index = build_index(&train).context("train split is empty")?;
    write(&dir.join("index.json"), &(index.to_json() + "\n"))?;

    let mut manifest = RunManifest::new("build").input(&a.corpus)?.input(&a.schema)?;
    for f in BUILD_OUTPUTS {
        manifest.output(&dir.join(f))?;
    }
    manifest.write(&dir.join("manifest.json"))?;

    if a.out.exists() {
        for f in BUILD_OUTPUTS.iter().chain(["manifest.json"].iter()) {
            fs::rename(dir.join(f), a.out.join(f)).with_context(|| format!("cannot move {f} into {}", a.out.display()))?;
        }
    } else {
        let path = staging.keep();
        if let Err(e) = fs::rename(&path, &a.out) {
            let _ = fs::remove_dir_all(&path);
            return Err(anyhow!(e).context(format!("cannot create {}", a.out.display())).into());
        }
    }
    for name in SplitName::ALL {
        emit(&format!("{name}: {} prefixes from {} examples\n", part(name).len(), split.ids(name).len()))?;
    }
    Ok(())
}

pub fn evaluate(a: EvaluateArgs) -> Result<()> {
    let ks = parse_k_list(&a.k_list)?;
    let bench = read_bench(&a.bench)?;
    let preds = read_predictions(&a.predictions)?;
    let reports: Vec<MetricReport> = ks
        .iter()
        .map(|&k| score(&bench, &preds, k))
        .collect::<std::result::Result<_, _>>()?;
    emit(&render_table(&reports))?;
    if let Some(out) = &a.out {
        write(out, &(serde_json::to_string_pretty(&reports).map_err(anyhow::Error::from)? + "\n"))?;
        let mut manifest = RunManifest::new("evaluate").input(&a.bench)?.input(&a.predictions)?;
        manifest.output(out)?;
        manifest.write(&sidecar(out))?;
    }
    Ok(())
}

pub fn schedule(a: ScheduleArgs) -> Result<()> {
    let mode: PacingMode = a.mode.parse().map_err(|e: String| usage(format!("--mode: {e}")))?;
    let config = CurriculumConfig {
        lambda: a.lambda,
        m: a.m,
        batch_size: a.batch_size,
        mode,
        seed: a.seed,
    };
    let validation = |e: CurriculumError| match e {
        CurriculumError::ZeroBatchSize | CurriculumError::ZeroLambda | CurriculumError::ZeroEpochs => usage(e.to_string()),
        other => CliError::Runtime(other.into()),
    };
    if a.batch_size == 0 {
        return Err(validation(CurriculumError::ZeroBatchSize));
    }
    if a.lambda == 0 {
        return Err(validation(CurriculumError::ZeroLambda));
    }
    if a.epochs == 0 {
        return Err(validation(CurriculumError::ZeroEpochs));
    }
    let bench = read_bench(&a.bench)?;
    let items = flatten_pairs(&bench)?;
    let schedule = build_schedule(&items, &config, a.epochs).map_err(validation)?;
    write(&a.out, &(schedule.to_json() + "\n"))?;
    let mut manifest = RunManifest::new("schedule").input(&a.bench)?;
    manifest.output(&a.out)?;
    manifest.write(&sidecar(&a.out))?;
    emit(&format!(
        "{} items in {} batches, difficulty {}..={}, {} epochs\n",
        schedule.items.len(),
        schedule.batches.len(),
        schedule.d_min,
        schedule.d_max,
        schedule.epochs.len()
    ))
}

pub fn baseline(a: BaselineArgs) -> Result<()> {
    let baseline: Baseline = a.baseline.parse().map_err(|e: String| usage(format!("--baseline: {e}")))?;
    if a.k == 0 {
        return Err(usage("--k must be at least 1"));
    }
    let (index, source) = match (&a.train, &a.index) {
        (Some(train), _) => (build_index(&read_bench(train)?)?, train),
        (None, Some(path)) => (HistoricalIndex::load(path)?, path),
        (None, None) => return Err(usage("one of --train or --index is required")),
    };
    let bench = read_bench(&a.bench)?;
    let ranker = Ranker::new(index);
    let preds = run_baseline(&bench, &ranker, baseline, a.k)?;
    write_predictions(&a.out, &preds)?;
    let mut manifest = RunManifest::new(&format!("baseline {baseline}")).input(source)?.input(&a.bench)?;
    manifest.output(&a.out)?;
    manifest.write(&sidecar(&a.out))?;
    Ok(())
}

pub fn stats(a: StatsArgs) -> Result<()> {
    let mut bench = Vec::new();
    for path in &a.bench {
        bench.extend(read_bench(path)?);
    }
    let stats = stats_by_split(&bench)?;
    let text = serde_json::to_string_pretty(&stats).map_err(anyhow::Error::from)? + "\n";
    match &a.out {
        Some(out) => {
            write(out, &text)?;
            let mut manifest = RunManifest::new("stats");
            for path in &a.bench {
                manifest = manifest.input(path)?;
            }
            manifest.output(out)?;
            manifest.write(&sidecar(out))?;
        }
        None => emit(&text)?,
    }
    Ok(())
}

fn op_style(literal: bool) -> OpStyle {
    if literal {
        OpStyle::Literal
    } else {
        OpStyle::words()
    }
}

pub fn serve(a: ServeArgs) -> Result<()> {
    let predictor: PredictorSpec = a.predictor.parse().map_err(|e: String| usage(format!("--predictor: {e}")))?;
    if matches!(predictor, PredictorSpec::File(_)) && a.bench.is_none() {
        return Err(usage("--predictor file:<path> needs --bench"));
    }
    let config = ServeConfig {
        engine: EngineConfig {
            index_path: a.index,
            predictor,
            bench_path: a.bench,
            rules_path: a.rules,
            op_style: op_style(a.literal_ops),
        },
        host: a.host,
        port: a.port,
        cors_origin: a.cors_origin,
    };
    let runtime = tokio::runtime::Runtime::new().context("cannot start async runtime")?;
    runtime.block_on(run_server(config)).map_err(|e| anyhow!(e))?;
    Ok(())
}

fn rules(path: Option<&Path>) -> Result<Vec<CanonicalRule>> {
    Ok(match path {
        Some(p) => load_rules(p)?,
        None => default_rules(),
    })
}

pub fn genq(a: GenqArgs) -> Result<()> {
    let rules = rules(a.rules.as_deref())?;
    let style = op_style(a.literal_ops);
    let value = if let Some(sql) = &a.sql {
        match match_rule(sql, &rules) {
            Some(m) => serde_json::json!({
                "sql": sql,
                "rule_id": m.rule.rule_id,
                "binding": m.binding,
                "question": render_question(m.rule, &m.binding, &style)?,
                "composite_select": m.composite_select,
            }),
            None => serde_json::json!({ "sql": sql, "rule_id": null, "question": null }),
        }
    } else {
        let (Some(corpus), Some(schema)) = (&a.corpus, &a.schema) else {
            return Err(usage("--corpus needs --schema"));
        };
        let corpus = load_corpus(corpus, CorpusFormat::CanonicalJsonl, load_schemas(schema)?)?;
        serde_json::to_value(coverage_report(&corpus, &rules)).map_err(anyhow::Error::from)?
    };
    emit(&(serde_json::to_string_pretty(&value).map_err(anyhow::Error::from)? + "\n"))?;
    Ok(())
}
