//! Command-line interface: translate, evaluate, compare, sweep.

use crate::analysis::{bucket_by_length, AnalysisError, BucketReport};
use crate::backend::{serve, BackendConfig, InfillBackend, MockBackend, RemoteBackend};
use crate::chunking::tokenize;
use crate::corpus_io::{
    load_sources, read_lines, read_trace_file, sha256_hex, write_lines, write_trace_file,
    CorpusError, RunManifest,
};
use crate::engine::{translate_corpus, EngineConfig, EngineError, Strategy, TranslationTrace};
use crate::metrics::{
    bleu_statistics, bleu_with_options, chrf_pp, chrf_statistics, paired_bootstrap,
    BootstrapResult, CorpusStatistic, ExternalTokenizer, MetricError, MetricKind, ScoreReport,
    Tokenizer, WhitespaceTokenizer,
};
use crate::templates::{load_template_set, PromptTemplateSet, TemplateError};
use chrono::Utc;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use std::fs;
use std::io::Write;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Tuned chunk sizes per translation direction.
pub const DEFAULT_CHUNK_SIZES: [(&str, &str, usize); 14] = [
    ("hin", "mal", 5),
    ("mal", "hin", 3),
    ("hin", "mar", 5),
    ("mar", "hin", 4),
    ("hin", "guj", 5),
    ("guj", "hin", 4),
    ("hin", "tel", 5),
    ("tel", "hin", 3),
    ("zsm", "ind", 4),
    ("ind", "zsm", 4),
    ("rus", "ukr", 4),
    ("ukr", "rus", 4),
    ("por", "spa", 4),
    ("spa", "por", 4),
];

/// Looks up the tuned chunk size for a pair written as `hin-mal`,
/// `hin→mal`, `hin>mal` or with script suffixes such as `hin_Deva-mal_Mlym`.
pub fn default_chunk_size(pair: &str) -> Option<usize> {
    let (src, tgt) = split_pair(pair)?;
    DEFAULT_CHUNK_SIZES
        .iter()
        .find(|(s, t, _)| *s == src && *t == tgt)
        .map(|(_, _, m)| *m)
}

fn split_pair(pair: &str) -> Option<(String, String)> {
    let parts: Vec<&str> = pair
        .split(['-', '→', '>'])
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .collect();
    let code = |p: &str| p.split('_').next().unwrap_or(p).to_ascii_lowercase();
    match parts.as_slice() {
        [s, t] => Some((code(s), code(t))),
        _ => None,
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("backend: {0}")]
    Transport(String),
    #[error("validation: {0}")]
    Validation(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Other(_) => 1,
            CliError::Config(_) => 2,
            CliError::Transport(_) => 3,
            CliError::Validation(_) => 4,
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::Io { .. } => CliError::Config(e.to_string()),
            CorpusError::Sink(_) => CliError::Other(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<MetricError> for CliError {
    fn from(e: MetricError) -> Self {
        match e {
            MetricError::Tokenizer(_) | MetricError::InvalidArgument(_) => CliError::Config(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<TemplateError> for CliError {
    fn from(e: TemplateError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        match e {
            _ if e.is_transport() => CliError::Transport(e.to_string()),
            EngineError::Config(_) | EngineError::Template(_) => CliError::Config(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        CliError::Validation(e.to_string())
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Other(format!("{}: {e}", path.display()))
}

#[derive(Debug, Parser)]
#[command(name = "chunkmt", version, about = "Chunk-wise few-shot translation with infilling language models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Translate a source file and write traces, hypotheses and a manifest.
    Translate(TranslateArgs),
    /// Score a hypothesis file (or trace file) against references.
    Evaluate(EvaluateArgs),
    /// Paired bootstrap test and length buckets for two systems.
    Compare(CompareArgs),
    /// Translate a dev set under each chunk size and report the best.
    Sweep(SweepArgs),
    /// Serve a lexicon mock over the remote wire protocol.
    ServeMock(ServeMockArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    Decomt,
    Sp,
    Sap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendKind {
    Mock,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricArg {
    Chrfpp,
    Bleu,
    Spbleu,
}

#[derive(Debug, Clone, Args)]
pub struct BackendArgs {
    #[arg(long, value_enum, default_value = "remote")]
    pub backend: BackendKind,
    /// Tab-separated word lexicon for the mock backend.
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    /// host:port of the infill service.
    #[arg(long, env = "CHUNKMT_ENDPOINT")]
    pub endpoint: Option<String>,
    #[arg(long, env = "CHUNKMT_TIMEOUT_MS", default_value_t = 60_000)]
    pub timeout_ms: u64,
    #[arg(long, default_value_t = 3)]
    pub retries: u32,
    /// Token the remote model uses for the masked span.
    #[arg(long, default_value = "<extra_id_0>")]
    pub mask_sentinel: String,
    /// Physical calls allowed in flight at once.
    #[arg(long, default_value_t = 1)]
    pub max_in_flight: usize,
}

#[derive(Debug, Clone, Args)]
pub struct EngineArgs {
    #[arg(long)]
    pub template: PathBuf,
    /// Source tokens per chunk; looked up from --pair when unset.
    #[arg(long)]
    pub m: Option<usize>,
    /// Translation direction such as hin-mal, used for defaults.
    #[arg(long)]
    pub pair: Option<String>,
    /// Use the first N examples of the template.
    #[arg(long)]
    pub shots: Option<usize>,
    /// Render prompts without examples.
    #[arg(long)]
    pub zero_shot: bool,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    /// Sentences whose requests share physical calls.
    #[arg(long, default_value_t = 8)]
    pub sentences_per_group: usize,
    /// Tokens requested per standard-prompting call.
    #[arg(long, default_value_t = 5)]
    pub sp_window: usize,
    /// Output length cap for standard prompting.
    #[arg(long)]
    pub sp_max_len: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct TranslateArgs {
    #[arg(long)]
    pub src: PathBuf,
    #[arg(long, value_enum, default_value = "decomt")]
    pub strategy: StrategyArg,
    /// Stop after the independent chunk translations.
    #[arg(long)]
    pub single_stage: bool,
    #[command(flatten)]
    pub engine: EngineArgs,
    #[command(flatten)]
    pub backend: BackendArgs,
    /// Recorded in the manifest.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct MetricArgs {
    #[arg(long = "metric", value_enum, default_values = ["chrfpp"])]
    pub metrics: Vec<MetricArg>,
    /// Shell command that tokenizes stdin line by line (for spBLEU).
    #[arg(long)]
    pub tokenizer_cmd: Option<String>,
    #[arg(long, default_value = "flores200")]
    pub tokenizer_name: String,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    /// Hypotheses, one per line, or a `.jsonl` trace file.
    #[arg(long)]
    pub hyp: PathBuf,
    #[arg(long = "ref")]
    pub reference: PathBuf,
    #[command(flatten)]
    pub metric: MetricArgs,
    /// Write the reports as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    /// System A then system B.
    #[arg(long, num_args = 1, required = true)]
    pub hyp: Vec<PathBuf>,
    #[arg(long = "ref")]
    pub reference: PathBuf,
    /// Sources, for length buckets.
    #[arg(long)]
    pub src: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "chrfpp")]
    pub metric: MetricArg,
    #[arg(long)]
    pub tokenizer_cmd: Option<String>,
    #[arg(long, default_value = "flores200")]
    pub tokenizer_name: String,
    #[arg(long, default_value_t = 1000)]
    pub resamples: usize,
    #[arg(long, default_value_t = 12345)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub src: PathBuf,
    #[arg(long = "ref")]
    pub reference: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "3,4,5")]
    pub m_set: Vec<usize>,
    #[arg(long)]
    pub single_stage: bool,
    #[command(flatten)]
    pub engine: EngineArgs,
    #[command(flatten)]
    pub backend: BackendArgs,
    #[arg(long, value_enum, default_value = "chrfpp")]
    pub metric: MetricArg,
    #[arg(long)]
    pub tokenizer_cmd: Option<String>,
    #[arg(long, default_value = "flores200")]
    pub tokenizer_name: String,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ServeMockArgs {
    #[arg(long)]
    pub lexicon: PathBuf,
    #[arg(long, default_value = "127.0.0.1:7878")]
    pub listen: String,
    /// Exit after this many connections.
    #[arg(long)]
    pub limit: Option<usize>,
}

/// Builds the backend selected on the command line.
pub fn build_backend(args: &BackendArgs, batch_size: usize) -> Result<Box<dyn InfillBackend>, CliError> {
    match args.backend {
        BackendKind::Mock => {
            let lexicon = match &args.lexicon {
                Some(path) => {
                    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
                    MockBackend::parse_lexicon(&text).map_err(CliError::Config)?
                }
                None => MockBackend::default(),
            };
            Ok(Box::new(lexicon))
        }
        BackendKind::Remote => {
            let endpoint = args.endpoint.clone().ok_or_else(|| {
                CliError::Config("the remote backend needs --endpoint or CHUNKMT_ENDPOINT".into())
            })?;
            Ok(Box::new(RemoteBackend::new(BackendConfig {
                endpoint,
                mask_sentinel: args.mask_sentinel.clone(),
                batch_size,
                timeout_ms: args.timeout_ms,
                retries: args.retries,
                max_in_flight: args.max_in_flight,
            })))
        }
    }
}

fn load_template(path: &Path) -> Result<(PromptTemplateSet, String), CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let set = load_template_set(&text)?;
    Ok((set, sha256_hex(text.as_bytes())))
}

fn resolve_chunk_size(args: &EngineArgs) -> Result<usize, CliError> {
    if let Some(m) = args.m {
        return Ok(m);
    }
    match &args.pair {
        Some(pair) => default_chunk_size(pair).ok_or_else(|| {
            CliError::Config(format!("no tuned chunk size for pair {pair:?}; pass --m"))
        }),
        None => Err(CliError::Config("pass --m or --pair to choose the chunk size".into())),
    }
}

fn engine_config(args: &EngineArgs, m: usize, max_in_flight: usize) -> EngineConfig {
    EngineConfig {
        m,
        batch_size: args.batch_size,
        sentences_per_group: args.sentences_per_group,
        shots: args.shots,
        zero_shot: args.zero_shot,
        sp_window: args.sp_window,
        sp_max_len: args.sp_max_len,
        max_in_flight,
        ..EngineConfig::default()
    }
}

fn strategy_of(arg: StrategyArg, single_stage: bool) -> Result<Strategy, CliError> {
    match (arg, single_stage) {
        (StrategyArg::Decomt, false) => Ok(Strategy::Decomt),
        (StrategyArg::Decomt, true) => Ok(Strategy::DecomtSingleStage),
        (_, true) => Err(CliError::Config("--single-stage applies only to --strategy decomt".into())),
        (StrategyArg::Sp, false) => Ok(Strategy::Sp),
        (StrategyArg::Sap, false) => Ok(Strategy::Sap),
    }
}

#[derive(Debug)]
pub struct TranslateOutcome {
    pub traces: Vec<TranslationTrace>,
    pub hypotheses_path: PathBuf,
    pub traces_path: PathBuf,
    pub manifest_path: PathBuf,
    pub manifest: RunManifest,
}

struct TranslateJob<'a> {
    src: &'a Path,
    template: &'a Path,
    pair: Option<String>,
    strategy: Strategy,
    config: EngineConfig,
    seed: Option<u64>,
    out: &'a Path,
}

fn run_translation(job: TranslateJob<'_>, backend: &dyn InfillBackend) -> Result<TranslateOutcome, CliError> {
    let sources = load_sources(job.src)?;
    let (set, digest) = load_template(job.template)?;
    if job.strategy == Strategy::Decomt || job.strategy == Strategy::DecomtSingleStage {
        job.config.validate()?;
    }
    job.config.view(&set)?;
    let started_at = Utc::now();
    let results = translate_corpus(&sources, job.strategy, &job.config, &set, backend)?;
    let finished_at = Utc::now();

    let mut traces = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(t) => traces.push(t),
            Err(e) => failures.push(e),
        }
    }

    fs::create_dir_all(job.out).map_err(io_err(job.out))?;
    let traces_path = job.out.join("traces.jsonl");
    let hypotheses_path = job.out.join("hypotheses.txt");
    let manifest_path = job.out.join("manifest.json");
    write_trace_file(&traces_path, &traces)?;
    let mut outputs = vec![traces_path.clone()];
    if failures.is_empty() {
        let hyps: Vec<String> = traces.iter().map(|t| t.output.clone()).collect();
        write_lines(&hypotheses_path, &hyps)?;
        outputs.push(hypotheses_path.clone());
    }
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        strategy: job.strategy,
        engine: job.config.clone(),
        language_pair: job.pair,
        template_path: job.template.to_path_buf(),
        template_sha256: digest,
        source_path: job.src.to_path_buf(),
        backend: backend.describe(),
        seed: job.seed,
        started_at,
        finished_at,
        sentences: sources.len(),
        failures: failures.len(),
        outputs,
    };
    manifest.save(&manifest_path)?;

    if let Some(first) = failures.first() {
        let message = format!("{} of {} sentences failed; first: {first}", failures.len(), sources.len());
        return Err(if failures.iter().any(EngineError::is_transport) {
            CliError::Transport(message)
        } else {
            CliError::Validation(message)
        });
    }
    Ok(TranslateOutcome {
        traces,
        hypotheses_path,
        traces_path,
        manifest_path,
        manifest,
    })
}

/// `translate` with an explicit backend.
pub fn cmd_translate_with(args: &TranslateArgs, backend: &dyn InfillBackend) -> Result<TranslateOutcome, CliError> {
    let strategy = strategy_of(args.strategy, args.single_stage)?;
    let m = match strategy {
        Strategy::Decomt | Strategy::DecomtSingleStage => resolve_chunk_size(&args.engine)?,
        Strategy::Sp | Strategy::Sap => resolve_chunk_size(&args.engine).unwrap_or(EngineConfig::default().m),
    };
    let config = engine_config(&args.engine, m, args.backend.max_in_flight);
    run_translation(
        TranslateJob {
            src: &args.src,
            template: &args.engine.template,
            pair: args.engine.pair.clone(),
            strategy,
            config,
            seed: args.seed,
            out: &args.out,
        },
        backend,
    )
}

fn tokenizer_for(metric: MetricArg, cmd: &Option<String>, name: &str) -> Result<Box<dyn Tokenizer>, CliError> {
    match (metric, cmd) {
        (MetricArg::Spbleu, None) => Err(CliError::Config(
            "spBLEU needs --tokenizer-cmd (a command that tokenizes stdin line by line)".into(),
        )),
        (MetricArg::Spbleu, Some(cmd)) => Ok(Box::new(ExternalTokenizer::new(cmd.clone()).with_name(name))),
        _ => Ok(Box::new(WhitespaceTokenizer)),
    }
}

fn score(metric: MetricArg, hyps: &[String], refs: &[String], tokenizer: &dyn Tokenizer) -> Result<ScoreReport, CliError> {
    Ok(match metric {
        MetricArg::Chrfpp => chrf_pp(hyps, refs)?,
        MetricArg::Bleu => bleu_with_options(hyps, refs, tokenizer, MetricKind::Bleu)?,
        MetricArg::Spbleu => bleu_with_options(hyps, refs, tokenizer, MetricKind::Spbleu)?,
    })
}

/// Hypotheses from a plain file or from the outputs of a trace file.
pub fn load_hypotheses(path: &Path) -> Result<Vec<String>, CliError> {
    if path.extension().is_some_and(|e| e == "jsonl") {
        let mut traces = read_trace_file(path)?;
        traces.sort_by_key(|t| t.sentence_index);
        return Ok(traces.into_iter().map(|t| t.output).collect());
    }
    Ok(read_lines(path)?)
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<Vec<ScoreReport>, CliError> {
    let hyps = load_hypotheses(&args.hyp)?;
    let refs = read_lines(&args.reference)?;
    let mut reports = Vec::new();
    for &metric in &args.metric.metrics {
        let tokenizer = tokenizer_for(metric, &args.metric.tokenizer_cmd, &args.metric.tokenizer_name)?;
        reports.push(score(metric, &hyps, &refs, tokenizer.as_ref())?);
    }
    if let Some(out) = &args.out {
        write_json(out, &reports)?;
    }
    Ok(reports)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Other(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareReport {
    pub metric: MetricKind,
    pub score_a: f64,
    pub score_b: f64,
    pub bootstrap: BootstrapResult,
    pub buckets_a: Option<BucketReport>,
    pub buckets_b: Option<BucketReport>,
    /// Why buckets were not computed, when they were requested.
    pub buckets_skipped: Option<String>,
}

fn compare_stats<S: CorpusStatistic>(
    metric: MetricKind,
    a: &[S],
    b: &[S],
    lengths: Option<&[usize]>,
    resamples: usize,
    seed: u64,
) -> Result<CompareReport, CliError> {
    let pooled = |xs: &[S]| {
        let mut acc = S::zero();
        xs.iter().for_each(|x| acc.accumulate(x));
        acc.corpus_score()
    };
    let bootstrap = paired_bootstrap(a, b, resamples, seed)?;
    let (mut buckets_a, mut buckets_b, mut buckets_skipped) = (None, None, None);
    if let Some(lengths) = lengths {
        match (bucket_by_length(lengths, a), bucket_by_length(lengths, b)) {
            (Ok(x), Ok(y)) => {
                buckets_a = Some(x);
                buckets_b = Some(y);
            }
            (Err(e @ AnalysisError::TooFewSamples { .. }), _) => buckets_skipped = Some(e.to_string()),
            (Err(e), _) | (_, Err(e)) => return Err(e.into()),
        }
    }
    Ok(CompareReport {
        metric,
        score_a: pooled(a),
        score_b: pooled(b),
        bootstrap,
        buckets_a,
        buckets_b,
        buckets_skipped,
    })
}

pub fn cmd_compare(args: &CompareArgs) -> Result<CompareReport, CliError> {
    let [a_path, b_path] = args.hyp.as_slice() else {
        return Err(CliError::Config("pass --hyp exactly twice (system A, then system B)".into()));
    };
    let (a, b) = (load_hypotheses(a_path)?, load_hypotheses(b_path)?);
    let refs = read_lines(&args.reference)?;
    let lengths = match &args.src {
        Some(src) => {
            let sources = load_sources(src)?;
            if sources.len() != refs.len() {
                return Err(CliError::Validation(format!(
                    "{} sources but {} references",
                    sources.len(),
                    refs.len()
                )));
            }
            Some(sources.iter().map(|s| tokenize(s).len()).collect::<Vec<_>>())
        }
        None => None,
    };
    let tokenizer = tokenizer_for(args.metric, &args.tokenizer_cmd, &args.tokenizer_name)?;
    let report = match args.metric {
        MetricArg::Chrfpp => compare_stats(
            MetricKind::Chrfpp,
            &chrf_statistics(&a, &refs)?,
            &chrf_statistics(&b, &refs)?,
            lengths.as_deref(),
            args.resamples,
            args.seed,
        )?,
        MetricArg::Bleu | MetricArg::Spbleu => compare_stats(
            if args.metric == MetricArg::Bleu { MetricKind::Bleu } else { MetricKind::Spbleu },
            &bleu_statistics(&a, &refs, tokenizer.as_ref())?,
            &bleu_statistics(&b, &refs, tokenizer.as_ref())?,
            lengths.as_deref(),
            args.resamples,
            args.seed,
        )?,
    };
    if let Some(out) = &args.out {
        write_json(out, &report)?;
    }
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub m: usize,
    pub score: f64,
    pub manifest: PathBuf,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub metric: MetricKind,
    pub rows: Vec<SweepRow>,
    pub best_m: usize,
    /// Chunk sizes sharing the best score; the smallest is chosen.
    pub tied: Vec<usize>,
}

const TIE_EPSILON: f64 = 1e-9;

/// `sweep` with an explicit backend.
pub fn cmd_sweep_with(args: &SweepArgs, backend: &dyn InfillBackend) -> Result<SweepReport, CliError> {
    let mut m_set = args.m_set.clone();
    m_set.sort_unstable();
    m_set.dedup();
    if m_set.is_empty() {
        return Err(CliError::Config("--m-set is empty".into()));
    }
    let refs = read_lines(&args.reference)?;
    let tokenizer = tokenizer_for(args.metric, &args.tokenizer_cmd, &args.tokenizer_name)?;
    let strategy = if args.single_stage { Strategy::DecomtSingleStage } else { Strategy::Decomt };
    let mut rows = Vec::new();
    for &m in &m_set {
        let out = args.out.join(format!("m{m}"));
        let outcome = run_translation(
            TranslateJob {
                src: &args.src,
                template: &args.engine.template,
                pair: args.engine.pair.clone(),
                strategy,
                config: engine_config(&args.engine, m, args.backend.max_in_flight),
                seed: args.seed,
                out: &out,
            },
            backend,
        )?;
        let hyps: Vec<String> = outcome.traces.iter().map(|t| t.output.clone()).collect();
        let report = score(args.metric, &hyps, &refs, tokenizer.as_ref())?;
        rows.push(SweepRow {
            m,
            score: report.corpus_score,
            manifest: outcome.manifest_path,
        });
    }
    let best = rows.iter().map(|r| r.score).fold(f64::NEG_INFINITY, f64::max);
    let tied: Vec<usize> = rows
        .iter()
        .filter(|r| (r.score - best).abs() <= TIE_EPSILON)
        .map(|r| r.m)
        .collect();
    let report = SweepReport {
        metric: match args.metric {
            MetricArg::Chrfpp => MetricKind::Chrfpp,
            MetricArg::Bleu => MetricKind::Bleu,
            MetricArg::Spbleu => MetricKind::Spbleu,
        },
        best_m: tied[0],
        tied,
        rows,
    };
    write_json(&args.out.join("sweep.json"), &report)?;
    Ok(report)
}

fn print_sweep(out: &mut dyn Write, report: &SweepReport) -> std::io::Result<()> {
    writeln!(out, "m\t{}", report.metric)?;
    for row in &report.rows {
        let mark = if row.m == report.best_m { "\t*" } else { "" };
        writeln!(out, "{}\t{:.2}{mark}", row.m, row.score)?;
    }
    if report.tied.len() > 1 {
        writeln!(
            out,
            "tie between m in {:?}; choosing the smallest, m={}",
            report.tied, report.best_m
        )?;
    } else {
        writeln!(out, "best m={}", report.best_m)?;
    }
    Ok(())
}

fn print_buckets(out: &mut dyn Write, label: &str, report: &BucketReport) -> std::io::Result<()> {
    writeln!(out, "length buckets for {label} (width {:.2}):", report.bucket_width)?;
    for b in &report.buckets {
        writeln!(out, "  {:>4}-{:<4} n={:<5} {:.2}", b.min_len, b.max_len, b.sentence_count, b.score)?;
    }
    Ok(())
}

fn print_compare(out: &mut dyn Write, r: &CompareReport) -> std::io::Result<()> {
    writeln!(out, "{}: A {:.2}  B {:.2}  delta {:+.1}", r.metric, r.score_a, r.score_b, r.bootstrap.delta)?;
    let p = r.bootstrap.p_value;
    let shown = if p < 0.001 { "p < 0.001".to_string() } else { format!("p = {p:.3}") };
    writeln!(
        out,
        "paired bootstrap: {shown} ({} resamples, seed {}){}",
        r.bootstrap.n_resamples,
        r.bootstrap.seed,
        if p < 0.05 { ", A significantly better" } else { "" }
    )?;
    if let (Some(a), Some(b)) = (&r.buckets_a, &r.buckets_b) {
        print_buckets(out, "A", a)?;
        print_buckets(out, "B", b)?;
    }
    if let Some(why) = &r.buckets_skipped {
        writeln!(out, "length buckets skipped: {why}")?;
    }
    Ok(())
}

/// Runs a parsed command line, writing human-readable results to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let w = |e: std::io::Error| CliError::Other(e.to_string());
    match cli.command {
        Command::Translate(args) => {
            let backend = build_backend(&args.backend, args.engine.batch_size)?;
            let outcome = cmd_translate_with(&args, backend.as_ref())?;
            writeln!(
                out,
                "translated {} sentences ({}); traces {}, hypotheses {}, manifest {}",
                outcome.traces.len(),
                outcome.manifest.strategy,
                outcome.traces_path.display(),
                outcome.hypotheses_path.display(),
                outcome.manifest_path.display()
            )
            .map_err(w)?;
        }
        Command::Evaluate(args) => {
            for report in cmd_evaluate(&args)? {
                writeln!(out, "{report}").map_err(w)?;
            }
        }
        Command::Compare(args) => {
            let report = cmd_compare(&args)?;
            print_compare(out, &report).map_err(w)?;
        }
        Command::Sweep(args) => {
            let backend = build_backend(&args.backend, args.engine.batch_size)?;
            let report = cmd_sweep_with(&args, backend.as_ref())?;
            print_sweep(out, &report).map_err(w)?;
        }
        Command::ServeMock(args) => {
            let text = fs::read_to_string(&args.lexicon).map_err(|e| CliError::Config(format!("{}: {e}", args.lexicon.display())))?;
            let mock = MockBackend::parse_lexicon(&text).map_err(CliError::Config)?;
            let listener = TcpListener::bind(&args.listen).map_err(|e| CliError::Config(format!("{}: {e}", args.listen)))?;
            let addr = listener.local_addr().map_err(w)?;
            writeln!(out, "serving {} on {addr}", mock.describe()).map_err(w)?;
            out.flush().map_err(w)?;
            serve(&mock, listener, args.limit).map_err(w)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunk_size_defaults() {
        assert_eq!(default_chunk_size("hin-mal"), Some(5));
        assert_eq!(default_chunk_size("mal→hin"), Some(3));
        assert_eq!(default_chunk_size("hin_Deva-mal_Mlym"), Some(5));
        assert_eq!(default_chunk_size("tel>hin"), Some(3));
        assert_eq!(default_chunk_size("ZSM-IND"), Some(4));
        assert_eq!(default_chunk_size("eng-fra"), None);
        assert_eq!(default_chunk_size("hin"), None);
        let directions: std::collections::HashSet<_> =
            DEFAULT_CHUNK_SIZES.iter().map(|(s, t, _)| (s, t)).collect();
        assert_eq!(directions.len(), 14);
    }

    #[test]
    fn exit_codes_are_distinct() {
        let codes = [
            CliError::Other(String::new()).exit_code(),
            CliError::Config(String::new()).exit_code(),
            CliError::Transport(String::new()).exit_code(),
            CliError::Validation(String::new()).exit_code(),
        ];
        assert_eq!(codes, [1, 2, 3, 4]);
    }

    #[test]
    fn single_stage_requires_decomt() {
        assert!(strategy_of(StrategyArg::Sap, true).is_err());
        assert_eq!(strategy_of(StrategyArg::Decomt, true).unwrap(), Strategy::DecomtSingleStage);
    }

    #[test]
    fn parses_repeated_hyp() {
        let cli = Cli::try_parse_from(["chunkmt", "compare", "--hyp", "a", "--hyp", "b", "--ref", "r"]).unwrap();
        match cli.command {
            Command::Compare(c) => assert_eq!(c.hyp.len(), 2),
            _ => panic!("wrong subcommand"),
        }
    }

    #[test]
    fn remote_needs_endpoint() {
        let cli = Cli::try_parse_from([
            "chunkmt", "translate", "--src", "s", "--template", "t", "--m", "3", "--out", "o",
        ])
        .unwrap();
        if let Command::Translate(args) = cli.command {
            let mut args = args;
            args.backend.endpoint = None;
            assert!(matches!(build_backend(&args.backend, 8), Err(CliError::Config(_))));
        }
    }
}
