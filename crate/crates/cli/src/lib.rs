//! `stepmt` command-line interface.
//!
//! Exit codes: 0 success, 1 failure (including partial batch failure),
//! 2 usage or configuration error.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use stepmt_core::baselines::{run_baseline_batch, write_baseline_run, BaselineMode, MapsDemos, MapsSetup};
use stepmt_core::config::{Config, SelectorMode};
use stepmt_core::corpus::{
    assemble_documents, corpus_stats, load_corpus, read_assembled_jsonl, write_assembled_jsonl, AssembledDocument,
    CorpusFormat, DEFAULT_JOINER,
};
use stepmt_core::llm::cache::{CachingBackend, ReplayBackend, ResponseCache};
use stepmt_core::llm::http::HttpChatBackend;
use stepmt_core::llm::{BackendKind, ChatBackend, Conversation};
use stepmt_core::metrics::plugin::{ExternalMetric, PluginConfig};
use stepmt_core::metrics::{ChrfMetric, Metric, Orientation, PseudoQeChrf};
use stepmt_core::pipeline::batch::write_stage_run;
use stepmt_core::pipeline::simulate::simulated_backend;
use stepmt_core::pipeline::{extract_artifacts, run_batch, BatchOptions, PipelineConfig, StageSet};
use stepmt_core::report::layout::{hypotheses_by_system, write_jsonl};
use stepmt_core::report::{build_report, score_run, ReportOptions, RunDir, RunManifest, SigtestRecord};
use stepmt_core::stats::{paired_permutation_test_with, Alternative, PairedScores, PermutationConfig};
use stepmt_core::Execution;

#[derive(Debug, Parser)]
#[command(name = "stepmt", version, about = "Staged document-level LLM translation and evaluation")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Record/replay response cache (JSONL).
    #[arg(long, global = true)]
    cache: Option<PathBuf>,
    /// Seed for resampling; recorded in manifests.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Documents in flight at once.
    #[arg(long, global = true)]
    concurrency: Option<usize>,
    /// Run every data-parallel loop on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Merge segments into token-capped documents.
    Assemble(AssembleArgs),
    /// Translate a corpus with the staged pipeline or a baseline.
    Translate(TranslateArgs),
    /// Re-run artifact extraction over a run's archived conversations.
    ExtractArtifacts(ExtractArgs),
    /// Score a run against the corpus references.
    Score(ScoreArgs),
    /// Paired permutation test between two scored runs.
    Sigtest(SigtestArgs),
    /// Significance tests, domain deltas and report.md over scored runs.
    Report(ReportArgs),
    /// Per-domain document counts and average lengths.
    Stats(StatsArgs),
}

#[derive(Debug, Args)]
struct CorpusInput {
    /// Segment corpus (.tsv/.jsonl) or assembled documents (.jsonl).
    #[arg(long = "in")]
    input: PathBuf,
    /// Token cap when the input holds segments. Defaults to the config value.
    #[arg(long)]
    cap: Option<usize>,
}

#[derive(Debug, Args)]
struct AssembleArgs {
    #[command(flatten)]
    corpus: CorpusInput,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Sbys,
    ZeroShot,
    ZeroShotSeg,
    ZeroShotSegCtx,
    Maps,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SelectorModeArg {
    Qe,
    Reference,
}

#[derive(Debug, Args)]
struct TranslateArgs {
    #[command(flatten)]
    corpus: CorpusInput,
    /// Run directory to create.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "sbys")]
    mode: Mode,
    /// Comma-separated subset of research,draft,refine,proofread, or `none`.
    #[arg(long, default_value = "research,draft,refine,proofread")]
    stages: String,
    /// Defaults to the output directory name.
    #[arg(long)]
    run_id: Option<String>,
    /// Skip artifact extraction after research.
    #[arg(long)]
    no_extract: bool,
    /// Directory of template overrides.
    #[arg(long)]
    prompts_dir: Option<PathBuf>,
    /// `chrf-pseudo` or a metric plugin TOML.
    #[arg(long)]
    selector: Option<String>,
    #[arg(long, value_enum)]
    selector_mode: Option<SelectorModeArg>,
    /// MAPS demonstrations TOML.
    #[arg(long)]
    demos: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExtractArgs {
    #[arg(long)]
    run: PathBuf,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    #[arg(long)]
    run: PathBuf,
    /// Assembled corpus holding the references.
    #[arg(long)]
    corpus: PathBuf,
    /// `chrf`, `chrf-pseudo` or a metric plugin TOML.
    #[arg(long, default_value = "chrf")]
    metric: String,
}

#[derive(Debug, Args)]
struct SigtestArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long, default_value = "chrf")]
    metric: String,
    /// System within run A; defaults to A's run id.
    #[arg(long)]
    system_a: Option<String>,
    #[arg(long)]
    system_b: Option<String>,
    /// Restrict to one language pair.
    #[arg(long)]
    lang_pair: Option<String>,
    #[arg(long)]
    alternative: Option<Alternative>,
    #[arg(long)]
    n_resamples: Option<u64>,
    /// Also write the result here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Scored run directories.
    #[arg(long, num_args = 1.., required = true)]
    runs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "chrf")]
    metric: String,
    /// Defaults to the zero-shot system.
    #[arg(long)]
    baseline: Option<String>,
    #[arg(long)]
    alternative: Option<Alternative>,
    #[arg(long)]
    n_resamples: Option<u64>,
}

#[derive(Debug, Args)]
struct StatsArgs {
    #[command(flatten)]
    corpus: CorpusInput,
}

/// A failure the user can fix by changing the invocation or config.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Parses `argv` (program name first), runs the command and returns the exit
/// code.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                2
            } else {
                1
            }
        }
    }
}

struct Ctx {
    cfg: Config,
    cache: Option<PathBuf>,
    seed: u64,
    concurrency: usize,
    execution: Execution,
}

fn run(cli: Cli) -> Result<i32> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p).map_err(|e| usage(e.to_string()))?,
        None => Config::default(),
    };
    if let Some(n) = cli.concurrency {
        if n == 0 {
            return Err(usage("--concurrency must be at least 1"));
        }
        cfg.llm.concurrency = n;
    }
    if let Some(s) = cli.seed {
        cfg.stats.seed = s;
    }
    let ctx = Ctx {
        seed: cfg.stats.seed,
        concurrency: cfg.llm.concurrency,
        cache: cli.cache,
        execution: if cli.sequential {
            Execution::Sequential
        } else {
            Execution::default()
        },
        cfg,
    };
    match cli.command {
        Command::Assemble(a) => assemble(&ctx, a),
        Command::Translate(a) => translate(ctx, a),
        Command::ExtractArtifacts(a) => extract(&ctx, a),
        Command::Score(a) => score(&ctx, a),
        Command::Sigtest(a) => sigtest(&ctx, a),
        Command::Report(a) => report(&ctx, a),
        Command::Stats(a) => stats(&ctx, a),
    }
}

/// Reads assembled documents, or segments which are then assembled.
fn load_documents(ctx: &Ctx, input: &CorpusInput) -> Result<Vec<AssembledDocument>> {
    if let Ok(docs) = read_assembled_jsonl(&input.input) {
        if input.cap.is_some() {
            return Err(usage(format!("{} is already assembled; drop --cap", input.input.display())));
        }
        return Ok(docs);
    }
    let format = CorpusFormat::from_path(&input.input)
        .ok_or_else(|| usage(format!("{}: expected a .tsv or .jsonl file", input.input.display())))?;
    let segments = load_corpus(&input.input, format)?;
    let cap = input.cap.unwrap_or(ctx.cfg.pipeline.cap);
    if cap == 0 {
        return Err(usage("--cap must be at least 1"));
    }
    Ok(assemble_documents(&segments, cap))
}

fn assemble(ctx: &Ctx, args: AssembleArgs) -> Result<i32> {
    let docs = load_documents(ctx, &args.corpus)?;
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    write_assembled_jsonl(&args.out, &docs)?;
    eprintln!("{} documents -> {}", docs.len(), args.out.display());
    Ok(0)
}

/// Writes to stdout; a closed pipe is not an error.
fn emit(text: &str) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|()| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn stats(ctx: &Ctx, args: StatsArgs) -> Result<i32> {
    let docs = load_documents(ctx, &args.corpus)?;
    let mut text = serde_json::to_string_pretty(&corpus_stats(&docs))?;
    text.push('\n');
    emit(&text)?;
    Ok(0)
}

/// Source-to-reference pairs at document and segment level, for the
/// simulated backend.
fn reference_map(docs: &[AssembledDocument]) -> HashMap<String, String> {
    let mut out = HashMap::new();
    for d in docs {
        let Some(r) = &d.reference_text else { continue };
        out.insert(d.source_text.clone(), r.clone());
        let refs: Vec<&str> = r.split(DEFAULT_JOINER).collect();
        if refs.len() == d.segments.len() {
            for (s, r) in d.segments.iter().zip(refs) {
                out.insert(s.clone(), r.to_string());
            }
        }
    }
    out
}

fn open_cache(ctx: &Ctx) -> Result<Option<Arc<ResponseCache>>> {
    ctx.cache
        .as_deref()
        .map(|p| ResponseCache::open(p).map(Arc::new).with_context(|| format!("opening cache {}", p.display())))
        .transpose()
}

fn make_backend(
    ctx: &Ctx,
    docs: &[AssembledDocument],
    pcfg: &PipelineConfig,
    cache: Option<Arc<ResponseCache>>,
) -> Result<Box<dyn ChatBackend>> {
    let model = ctx.cfg.llm.model_id.clone();
    Ok(match (ctx.cfg.llm.kind, cache) {
        (BackendKind::Mock, c) => {
            let sim = simulated_backend(&model, pcfg.templates.clone(), reference_map(docs));
            match c {
                Some(c) => Box::new(CachingBackend::new(sim, c)),
                None => Box::new(sim),
            }
        }
        (BackendKind::Replay, Some(c)) => Box::new(ReplayBackend::new(model, c)),
        (BackendKind::Replay, None) => return Err(usage("replay backend needs --cache")),
        (BackendKind::HttpChat, c) => {
            let http = HttpChatBackend::from_descriptor(&ctx.cfg.backend_descriptor(), ctx.cfg.llm.requests_per_minute)?;
            match c {
                Some(c) => Box::new(CachingBackend::new(http, c)),
                None => Box::new(http),
            }
        }
    })
}

/// Resolves `chrf`, `chrf-pseudo` or a plugin TOML path.
fn make_metric(spec: &str, execution: Execution) -> Result<Box<dyn Metric>> {
    Ok(match spec {
        "chrf" => Box::new(ChrfMetric::default().with_execution(execution)),
        "chrf-pseudo" => Box::new(PseudoQeChrf::default()),
        path if path.ends_with(".toml") => Box::new(ExternalMetric::new(PluginConfig::load(Path::new(path))?)?),
        other => return Err(usage(format!("unknown metric '{other}' (chrf, chrf-pseudo or a plugin .toml)"))),
    })
}

/// Name and orientation of a metric without starting it.
fn metric_identity(spec: &str) -> Result<(String, Orientation)> {
    if spec.ends_with(".toml") {
        let p = PluginConfig::load(Path::new(spec))?;
        return Ok((p.name, p.orientation));
    }
    let m = make_metric(spec, Execution::Sequential)?;
    let d = m.descriptor();
    Ok((d.name.clone(), d.orientation))
}

fn run_id_for(out: &Path, explicit: Option<String>) -> Result<String> {
    explicit
        .or_else(|| out.file_name().map(|n| n.to_string_lossy().into_owned()))
        .filter(|s| !s.is_empty())
        .ok_or_else(|| usage("cannot derive a run id; pass --run-id"))
}

fn translate(mut ctx: Ctx, args: TranslateArgs) -> Result<i32> {
    if args.no_extract {
        ctx.cfg.pipeline.extract_artifacts = false;
    }
    if let Some(dir) = args.prompts_dir.clone() {
        ctx.cfg.pipeline.prompts_dir = Some(dir);
    }
    if let Some(s) = args.selector.clone() {
        ctx.cfg.maps.selector = s;
    }
    if let Some(m) = args.selector_mode {
        ctx.cfg.maps.selector_mode = match m {
            SelectorModeArg::Qe => SelectorMode::Qe,
            SelectorModeArg::Reference => SelectorMode::Reference,
        };
    }
    if let Some(d) = args.demos.clone() {
        ctx.cfg.maps.demos = Some(d);
    }
    let docs = load_documents(&ctx, &args.corpus)?;
    let pcfg = PipelineConfig::from_config(&ctx.cfg).map_err(|e| usage(e.to_string()))?;
    let run_id = run_id_for(&args.out, args.run_id.clone())?;
    let cache = open_cache(&ctx)?;
    let backend = make_backend(&ctx, &docs, &pcfg, cache.clone())?;
    let opts = BatchOptions {
        concurrency: ctx.concurrency,
        execution: ctx.execution,
        cache,
    };
    let run = RunDir::create(&args.out)?;
    let mode_name = match args.mode {
        Mode::Sbys => "sbys",
        Mode::ZeroShot => "zero-shot",
        Mode::ZeroShotSeg => "zero-shot-seg",
        Mode::ZeroShotSegCtx => "zero-shot-seg-ctx",
        Mode::Maps => "maps",
    };
    let mut manifest = RunManifest::new(&run_id, mode_name);
    manifest.config = serde_json::to_value(&ctx.cfg)?;
    manifest.seed = ctx.seed;

    let code = if args.mode == Mode::Sbys {
        let stages: StageSet = args.stages.parse().map_err(|e: stepmt_core::pipeline::PipelineError| usage(e.to_string()))?;
        let outcome = run_batch(&docs, stages, backend.as_ref(), &pcfg, &opts, manifest);
        write_stage_run(&run, &outcome)?;
        report_failures(outcome.failures().map(|f| (&f.doc_id, &f.error)));
        outcome.exit_code()
    } else {
        let mode: BaselineMode = mode_name.parse().map_err(usage)?;
        let selector;
        let demos;
        let setup = if mode == BaselineMode::Maps {
            selector = make_metric(&ctx.cfg.maps.selector, ctx.execution)?;
            let path = ctx.cfg.maps.demos.as_deref().ok_or_else(|| usage("maps needs --demos or maps.demos"))?;
            demos = MapsDemos::load(path)?;
            Some(MapsSetup {
                selector: selector.as_ref(),
                mode: ctx.cfg.maps.selector_mode,
                demos: &demos,
            })
        } else {
            None
        };
        let outcome = run_baseline_batch(&docs, mode, backend.as_ref(), &pcfg, setup.as_ref(), &opts, manifest);
        write_baseline_run(&run, &outcome)?;
        report_failures(outcome.failures().map(|f| (&f.doc_id, &f.error)));
        outcome.exit_code()
    };
    eprintln!("{} documents -> {}", docs.len(), run.root().display());
    Ok(code)
}

fn report_failures<'a>(failures: impl Iterator<Item = (&'a String, &'a String)>) {
    for (doc, err) in failures {
        eprintln!("failed: {doc}: {err}");
    }
}

#[derive(serde::Deserialize)]
struct ConversationsLine {
    doc_id: String,
    conversations: Vec<Conversation>,
}

#[derive(serde::Serialize)]
struct ArtifactsLine {
    doc_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    artifacts: Option<stepmt_core::pipeline::ResearchArtifacts>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    attempts: u32,
}

fn extract(ctx: &Ctx, args: ExtractArgs) -> Result<i32> {
    let run = RunDir::new(&args.run);
    let lines: Vec<ConversationsLine> = stepmt_core::report::layout::read_jsonl(&run.conversations_path())?;
    let pcfg = PipelineConfig::from_config(&ctx.cfg).map_err(|e| usage(e.to_string()))?;
    let backend = make_backend(ctx, &[], &pcfg, open_cache(ctx)?)?;
    let mut out = Vec::new();
    let mut failed = 0;
    for line in &lines {
        let Some(main) = line.conversations.iter().find(|c| c.created_for.stage == "research") else {
            continue;
        };
        let ex = extract_artifacts(main, backend.as_ref(), &pcfg.generation, &pcfg.templates);
        let (artifacts, error) = match ex.result {
            Ok(a) => (Some(a), None),
            Err(e) => {
                failed += 1;
                (None, Some(e.to_string()))
            }
        };
        out.push(ArtifactsLine {
            doc_id: line.doc_id.clone(),
            artifacts,
            error,
            attempts: ex.attempts,
        });
    }
    let path = run.root().join("artifacts.jsonl");
    write_jsonl(&path, &out)?;
    eprintln!("{} extracted, {failed} failed -> {}", out.len() - failed, path.display());
    Ok(i32::from(failed > 0))
}

fn score(ctx: &Ctx, args: ScoreArgs) -> Result<i32> {
    let run = RunDir::new(&args.run);
    let manifest = run.read_manifest()?;
    let docs = read_assembled_jsonl(&args.corpus)?;
    let metric = make_metric(&args.metric, ctx.execution)?;
    let mut rows = score_run(&run, &manifest.run_id, &docs, metric.as_ref())?;
    // Keep rows of other metrics already on disk.
    if run.scores_path().exists() {
        let name = &metric.descriptor().name;
        let mut kept: Vec<_> = run.read_scores()?.into_iter().filter(|r| &r.metric != name).collect();
        kept.append(&mut rows);
        rows = kept;
    }
    run.write_scores(&rows)?;
    eprintln!("{} scores -> {}", rows.len(), run.scores_path().display());
    Ok(0)
}

fn system_scores(run: &RunDir, system: Option<&str>, metric: &str, lang: Option<&str>) -> Result<(String, BTreeMap<String, f64>)> {
    let manifest = run.read_manifest()?;
    let system = system.unwrap_or(&manifest.run_id).to_string();
    let scores: BTreeMap<String, f64> = run
        .read_scores()?
        .into_iter()
        .filter(|r| r.system == system && r.metric == metric && lang.is_none_or(|l| r.lang_pair == l))
        .map(|r| (r.doc_id, r.value))
        .collect();
    if scores.is_empty() {
        bail!("no {metric} scores for system {system} in {}", run.root().display());
    }
    Ok((system, scores))
}

fn sigtest(ctx: &Ctx, args: SigtestArgs) -> Result<i32> {
    let (metric, orientation) = metric_identity(&args.metric)?;
    let lang = args.lang_pair.as_deref();
    let (name_a, a) = system_scores(&RunDir::new(&args.a), args.system_a.as_deref(), &metric, lang)?;
    let (name_b, b) = system_scores(&RunDir::new(&args.b), args.system_b.as_deref(), &metric, lang)?;
    let paired = PairedScores::from_maps(&name_a, &a, &name_b, &b, orientation)?;
    let cfg = PermutationConfig {
        alternative: args.alternative.unwrap_or(ctx.cfg.stats.alternative),
        n_resamples: args.n_resamples.unwrap_or(ctx.cfg.stats.n_resamples),
        seed: ctx.seed,
        execution: ctx.execution,
        ..Default::default()
    };
    let record = SigtestRecord {
        metric,
        lang_pair: args.lang_pair.clone(),
        result: paired_permutation_test_with(&paired, &cfg)?,
    };
    let mut text = serde_json::to_string_pretty(&record)?;
    text.push('\n');
    if let Some(out) = &args.out {
        std::fs::write(out, &text).with_context(|| format!("writing {}", out.display()))?;
    }
    emit(&text)?;
    Ok(0)
}

fn report(ctx: &Ctx, args: ReportArgs) -> Result<i32> {
    let (metric, orientation) = metric_identity(&args.metric)?;
    let runs: Vec<RunDir> = args.runs.iter().map(RunDir::new).collect();
    let out = RunDir::create(&args.out)?;
    let opts = ReportOptions {
        metric,
        orientation,
        baseline: args.baseline.clone(),
        alpha: ctx.cfg.stats.alpha,
        alternative: args.alternative.unwrap_or(ctx.cfg.stats.alternative),
        n_resamples: args.n_resamples.unwrap_or(ctx.cfg.stats.n_resamples),
        seed: ctx.seed,
        execution: ctx.execution,
    };
    build_report(&runs, &out, &opts)?;
    eprintln!("report -> {}", out.report_path().display());
    Ok(0)
}

/// Systems present in a run's outputs, for diagnostics.
pub fn run_systems(run: &Path) -> Result<Vec<String>> {
    let dir = RunDir::new(run);
    let m = dir.read_manifest()?;
    Ok(hypotheses_by_system(&m.run_id, &dir.read_outputs()?).into_keys().collect())
}
