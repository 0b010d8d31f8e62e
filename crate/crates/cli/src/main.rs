//! `ltk`: pipeline front end: ingest corpora, link entities, build and
//! query co-occurrence indexes, link QA datasets, score predictions, fit
//! scaling curves, emit counterfactual corpora, and run BM25 retrieval.
//!
//! Every subcommand is re-runnable: identical inputs and seeds produce
//! byte-identical outputs, and files are written atomically (temp + rename).

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use ltk_core::corpus::{ingest_corpus, CorpusFormat, CorpusManifest};
use ltk_core::counterfactual::{
    filter_corpus, removal_manifest, removal_set, sample_per_bin, SamplePlan,
};
use ltk_core::eval::{
    audit_precision, audit_sample, bin_values, heuristic_counts, human_loo_accuracy,
    score_predictions, subpopulation_filter, AuditLabel, BinScheme, HeuristicMode,
    PredictionRecord,
};
use ltk_core::index::{
    build_index, build_shard, load_index, load_shard, merge_shards, save_index, save_shard,
};
use ltk_core::linker::{import_annotations, link_corpus, load_gazetteer, Gazetteer};
use ltk_core::qa::{link_qa_dataset, split_holdout, LinkedQa, QaExample};
use ltk_core::retrieval::{
    build_bm25, build_prompt, load_bm25, oracle_context, recall_curve, save_bm25,
    segment_passages, Bm25Index, Passage, PromptExample, PromptMode, PromptQuery, RecallRecord,
    DEFAULT_B, DEFAULT_K1,
};
use ltk_core::util::{read_jsonl, write_atomic};

#[derive(Parser)]
#[command(name = "ltk", version, about = "Long-tail knowledge measurement pipeline")]
struct Cli {
    /// Worker threads for parallel stages (falls back to env LTK_WORKERS,
    /// then all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest corpus shards and write a manifest with dense document ids.
    Ingest(IngestArgs),
    /// Entity-link every document of a corpus with a gazetteer.
    Link(LinkArgs),
    /// Build, merge, and query entity co-occurrence indexes.
    #[command(subcommand)]
    Index(IndexCommand),
    /// Resolve QA examples to salient entity pairs and document counts.
    QaLink(QaLinkArgs),
    /// Score predictions and aggregate accuracy curves.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Rank correlation, scaling fits, and count rescaling.
    #[command(subcommand)]
    Stats(StatsCommand),
    /// Counterfactual corpus sampling and filtering.
    #[command(subcommand)]
    Counterfactual(CounterfactualCommand),
    /// BM25 passage retrieval, recall curves, and prompt construction.
    #[command(subcommand)]
    Retrieval(RetrievalCommand),
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Jsonl,
    Textdir,
}

#[derive(Args)]
struct IngestArgs {
    /// Shard files (jsonl) or shard directories (textdir), in order.
    #[arg(required = true)]
    paths: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "jsonl")]
    format: FormatArg,
    /// Manifest JSON output path.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct LinkArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Gazetteer TSV: surface<TAB>entity_id<TAB>prior.
    #[arg(long)]
    gazetteer: PathBuf,
    /// Annotations jsonl output: {"doc_id": N, "entities": [...]}.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Subcommand)]
enum IndexCommand {
    /// Build an index from annotations (optionally a single shard range).
    Build(IndexBuildArgs),
    /// Merge shard index files into one index.
    Merge(IndexMergeArgs),
    /// Query entity and pair counts.
    Query(IndexQueryArgs),
}

#[derive(Args)]
struct IndexBuildArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Annotations jsonl (from `ltk link` or an external linker).
    #[arg(long)]
    annotations: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Number of internal build shards (defaults to the worker count).
    #[arg(long)]
    shards: Option<usize>,
    /// Build only this id range START:END and write a shard file instead.
    #[arg(long)]
    range: Option<String>,
}

#[derive(Args)]
struct IndexMergeArgs {
    /// Shard index files produced by `index build --range`.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct IndexQueryArgs {
    #[arg(long)]
    index: PathBuf,
    /// Print the document count of one entity.
    #[arg(long, conflicts_with_all = ["pair", "docs"])]
    entity: Option<String>,
    /// Print the co-occurrence count of two entities.
    #[arg(long, num_args = 2, value_names = ["E1", "E2"], conflicts_with = "docs")]
    pair: Option<Vec<String>>,
    /// Print the co-occurring document ids of two entities, one per line.
    #[arg(long, num_args = 2, value_names = ["E1", "E2"])]
    docs: Option<Vec<String>>,
}

#[derive(Args)]
struct QaLinkArgs {
    /// QA jsonl: {"id", "question", "answers": [...]}.
    #[arg(long)]
    questions: PathBuf,
    #[arg(long)]
    gazetteer: PathBuf,
    #[arg(long)]
    index: PathBuf,
    /// Linked-QA jsonl output.
    #[arg(long)]
    output: PathBuf,
    /// Discard statistics JSON output.
    #[arg(long)]
    stats_output: Option<PathBuf>,
    /// Hold out examples for few-shot prompts before linking.
    #[arg(long, default_value_t = 16)]
    holdout: usize,
    /// Where to write the held-out examples; holdout is skipped when absent.
    #[arg(long)]
    holdout_output: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum EvalCommand {
    /// Exact-match score a predictions file.
    Em(EvalEmArgs),
    /// Aggregate per-example scores into log-spaced count bins.
    Bins(EvalBinsArgs),
    /// Leave-one-annotator-out human accuracy.
    Loo(EvalLooArgs),
    /// Per-example document counts under a counting heuristic.
    Heuristics(EvalHeuristicsArgs),
    /// Sample (QA, relevant document) pairs for manual relevance audits.
    AuditSample(EvalAuditSampleArgs),
    /// Aggregate manual audit labels into precision fractions.
    AuditPrecision(EvalAuditPrecisionArgs),
}

#[derive(Args)]
struct EvalEmArgs {
    #[arg(long)]
    questions: PathBuf,
    /// Predictions jsonl: {"id", "prediction"}.
    #[arg(long)]
    predictions: PathBuf,
    /// Per-example scores jsonl output: {"id", "correct"}.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct EvalBinsArgs {
    /// Linked-QA jsonl from `ltk qa-link`.
    #[arg(long)]
    linked: PathBuf,
    /// Scores jsonl: {"id", "correct": bool} or {"id", "value": float}.
    #[arg(long)]
    scores: PathBuf,
    /// Optional counts CSV (id,count) overriding the pair counts, e.g. from
    /// `ltk eval heuristics`.
    #[arg(long)]
    counts: Option<PathBuf>,
    /// Keep only examples whose pair count is below this bound.
    #[arg(long)]
    max_pair_count: Option<u64>,
    #[arg(long, default_value_t = 500)]
    min_samples: u64,
    /// Curve CSV output: bin_lo,bin_hi,n,value,trimmed.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct EvalLooArgs {
    /// Human annotations jsonl: {"id", "raters": [[alias, ...], ...]}.
    #[arg(long)]
    annotations: PathBuf,
    /// Per-example accuracy jsonl output: {"id", "value"}.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum HeuristicModeArg {
    Pair,
    QuestionOnly,
    AnswerOnly,
}

#[derive(Args)]
struct EvalHeuristicsArgs {
    #[arg(long)]
    linked: PathBuf,
    #[arg(long)]
    index: PathBuf,
    #[arg(long, value_enum)]
    mode: HeuristicModeArg,
    /// Counts CSV output: id,count.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct EvalAuditSampleArgs {
    #[arg(long)]
    linked: PathBuf,
    #[arg(long)]
    index: PathBuf,
    #[arg(long, default_value_t = 300)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Sample CSV output: qa_id,doc_id.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct EvalAuditPrecisionArgs {
    /// Label file, one of full|partial|none per line.
    #[arg(long)]
    labels: PathBuf,
    /// Optional JSON output path (the report is always printed).
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Subcommand)]
enum StatsCommand {
    /// Spearman rank correlation of two count columns.
    Spearman(StatsSpearmanArgs),
    /// Least-squares fit of accuracy against log10(parameters).
    ScalingFit(StatsScalingFitArgs),
    /// Multiply counts by a factor, rounding half-up.
    ScaleCounts(StatsScaleCountsArgs),
}

#[derive(Args)]
struct StatsSpearmanArgs {
    /// CSV with two numeric columns x,y (a non-numeric header row is
    /// skipped).
    #[arg(long)]
    input: PathBuf,
}

#[derive(Args)]
struct StatsScalingFitArgs {
    /// CSV with two numeric columns: params,accuracy.
    #[arg(long)]
    input: PathBuf,
    /// Fit report JSON output: {"slope", "intercept", "r2", "n"}.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Also print the parameter count where the fit reaches this accuracy.
    #[arg(long)]
    extrapolate: Option<f64>,
}

#[derive(Args)]
struct StatsScaleCountsArgs {
    /// Input counts, one per line.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    factor: f64,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Subcommand)]
enum CounterfactualCommand {
    /// Sample linked questions per log-spaced count bin.
    Sample(CfSampleArgs),
    /// Remove the sampled questions' relevant documents from the corpus.
    Filter(CfFilterArgs),
}

#[derive(Args)]
struct CfSampleArgs {
    #[arg(long)]
    linked: PathBuf,
    #[arg(long, default_value_t = 100)]
    n_per_bin: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Sampling plan JSON output.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct CfFilterArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Sampling plan JSON from `ltk counterfactual sample`.
    #[arg(long)]
    samples: PathBuf,
    #[arg(long)]
    index: PathBuf,
    /// Directory for filtered shards, id_map.csv, and removal_manifest.json.
    #[arg(long)]
    output_dir: PathBuf,
}

#[derive(Subcommand)]
enum RetrievalCommand {
    /// Split corpus documents into retrieval passages.
    Segment(RetrievalSegmentArgs),
    /// Build a BM25 index over passages.
    Build(RetrievalBuildArgs),
    /// Query a BM25 index.
    Query(RetrievalQueryArgs),
    /// Top-k answer recall per relevant-document-count bin.
    Recall(RetrievalRecallArgs),
    /// Emit few-shot prompts (closed-book, BM25-augmented, or oracle).
    Prompts(RetrievalPromptsArgs),
}

#[derive(Args)]
struct RetrievalSegmentArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Passages jsonl output.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct RetrievalBuildArgs {
    /// Passages jsonl from `ltk retrieval segment`.
    #[arg(long)]
    passages: PathBuf,
    #[arg(long, default_value_t = DEFAULT_K1)]
    k1: f64,
    #[arg(long, default_value_t = DEFAULT_B)]
    b: f64,
    /// BM25 index JSON output.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct RetrievalQueryArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    question: String,
    #[arg(long, default_value_t = 3)]
    k: usize,
}

#[derive(Args)]
struct RetrievalRecallArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    linked: PathBuf,
    /// QA jsonl supplying the gold answers by example id.
    #[arg(long)]
    questions: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1,3,5,10")]
    ks: Vec<usize>,
    #[arg(long, default_value_t = 500)]
    min_samples: u64,
    /// Recall CSV output: k,bin_lo,bin_hi,n,value,trimmed.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum PromptModeArg {
    ClosedBook,
    Bm25,
    Oracle,
}

#[derive(Args)]
struct RetrievalPromptsArgs {
    /// Test questions QA jsonl.
    #[arg(long)]
    questions: PathBuf,
    /// In-context examples QA jsonl (e.g. the qa-link holdout).
    #[arg(long)]
    incontext: PathBuf,
    #[arg(long, value_enum)]
    mode: PromptModeArg,
    #[arg(long, default_value_t = 4)]
    shots: usize,
    /// BM25 index JSON (required in bm25 mode).
    #[arg(long)]
    bm25_index: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    top_k: usize,
    /// Gold pages jsonl {"id", "text"} (required in oracle mode).
    #[arg(long)]
    pages: Option<PathBuf>,
    /// Prompts jsonl output: {"id", "prompt"}.
    #[arg(long)]
    output: PathBuf,
}

// ---------------------------------------------------------------------------
// Shared record types
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct EmRecord {
    id: String,
    correct: bool,
}

#[derive(Deserialize)]
struct ScoreRecord {
    id: String,
    #[serde(default)]
    correct: Option<bool>,
    #[serde(default)]
    value: Option<f64>,
}

#[derive(Serialize)]
struct ValueRecord {
    id: String,
    value: f64,
}

#[derive(Deserialize)]
struct LooRecord {
    id: String,
    raters: Vec<Vec<String>>,
}

#[derive(Deserialize)]
struct PageRecord {
    id: String,
    text: String,
}

#[derive(Serialize)]
struct PromptRecord {
    id: String,
    prompt: String,
}

#[derive(Serialize)]
struct FitReport {
    slope: f64,
    intercept: f64,
    r2: f64,
    n: usize,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let workers = cli.workers.or_else(|| {
        std::env::var("LTK_WORKERS").ok().and_then(|v| v.parse().ok())
    });
    if let Some(n) = workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .context("configuring worker pool")?;
    }
    match cli.command {
        Command::Ingest(args) => cmd_ingest(args),
        Command::Link(args) => cmd_link(args),
        Command::Index(cmd) => match cmd {
            IndexCommand::Build(args) => cmd_index_build(args),
            IndexCommand::Merge(args) => cmd_index_merge(args),
            IndexCommand::Query(args) => cmd_index_query(args),
        },
        Command::QaLink(args) => cmd_qa_link(args),
        Command::Eval(cmd) => match cmd {
            EvalCommand::Em(args) => cmd_eval_em(args),
            EvalCommand::Bins(args) => cmd_eval_bins(args),
            EvalCommand::Loo(args) => cmd_eval_loo(args),
            EvalCommand::Heuristics(args) => cmd_eval_heuristics(args),
            EvalCommand::AuditSample(args) => cmd_eval_audit_sample(args),
            EvalCommand::AuditPrecision(args) => cmd_eval_audit_precision(args),
        },
        Command::Stats(cmd) => match cmd {
            StatsCommand::Spearman(args) => cmd_stats_spearman(args),
            StatsCommand::ScalingFit(args) => cmd_stats_scaling_fit(args),
            StatsCommand::ScaleCounts(args) => cmd_stats_scale_counts(args),
        },
        Command::Counterfactual(cmd) => match cmd {
            CounterfactualCommand::Sample(args) => cmd_cf_sample(args),
            CounterfactualCommand::Filter(args) => cmd_cf_filter(args),
        },
        Command::Retrieval(cmd) => match cmd {
            RetrievalCommand::Segment(args) => cmd_retrieval_segment(args),
            RetrievalCommand::Build(args) => cmd_retrieval_build(args),
            RetrievalCommand::Query(args) => cmd_retrieval_query(args),
            RetrievalCommand::Recall(args) => cmd_retrieval_recall(args),
            RetrievalCommand::Prompts(args) => cmd_retrieval_prompts(args),
        },
    }
}

fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    write_atomic(path, |w| {
        for record in records {
            serde_json::to_writer(&mut *w, record)?;
            writeln!(w)?;
        }
        Ok(())
    })
    .with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w)
    })
    .with_context(|| format!("writing {}", path.display()))
}

fn write_text(path: &Path, content: &str) -> Result<()> {
    write_atomic(path, |w| w.write_all(content.as_bytes()))
        .with_context(|| format!("writing {}", path.display()))
}

fn load_manifest(path: &Path) -> Result<CorpusManifest> {
    CorpusManifest::load(path).with_context(|| format!("loading manifest {}", path.display()))
}

fn load_gazetteer_arg(path: &Path) -> Result<Gazetteer> {
    load_gazetteer(path).with_context(|| format!("loading gazetteer {}", path.display()))
}

fn load_linked(path: &Path) -> Result<Vec<LinkedQa>> {
    let records: Vec<LinkedQa> =
        read_jsonl(path).with_context(|| format!("reading linked QA {}", path.display()))?;
    Ok(records)
}

fn load_questions(path: &Path) -> Result<Vec<QaExample>> {
    let examples: Vec<QaExample> =
        read_jsonl(path).with_context(|| format!("reading QA examples {}", path.display()))?;
    Ok(examples)
}

/// Two-column numeric CSV; a single non-numeric header row is tolerated.
fn read_two_column_csv(path: &Path) -> Result<Vec<(f64, f64)>> {
    let content = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 2 {
            bail!("{}:{}: expected 2 comma-separated values", path.display(), i + 1);
        }
        match (fields[0].parse::<f64>(), fields[1].parse::<f64>()) {
            (Ok(a), Ok(b)) => out.push((a, b)),
            _ if i == 0 => continue, // header row
            _ => bail!("{}:{}: not numeric", path.display(), i + 1),
        }
    }
    if out.is_empty() {
        bail!("no numeric rows in {}", path.display());
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

fn cmd_ingest(args: IngestArgs) -> Result<()> {
    let format = match args.format {
        FormatArg::Jsonl => CorpusFormat::Jsonl,
        FormatArg::Textdir => CorpusFormat::Textdir,
    };
    let manifest = ingest_corpus(&args.paths, format)?;
    manifest.save(&args.output)?;
    println!(
        "ingested {} documents across {} shards ({} records skipped)",
        manifest.total_documents,
        manifest.shards.len(),
        manifest.skipped_records
    );
    Ok(())
}

fn cmd_link(args: LinkArgs) -> Result<()> {
    let manifest = load_manifest(&args.manifest)?;
    let gazetteer = load_gazetteer_arg(&args.gazetteer)?;
    let mut linked = 0u64;
    write_atomic(&args.output, |w| {
        for doc in link_corpus(&gazetteer, &manifest) {
            let doc = doc.map_err(|e| std::io::Error::other(e.to_string()))?;
            serde_json::to_writer(&mut *w, &doc)?;
            writeln!(w)?;
            linked += 1;
        }
        Ok(())
    })?;
    println!("linked {linked} documents");
    Ok(())
}

fn parse_range(range: &str) -> Result<(u64, u64)> {
    let (start, end) = range
        .split_once(':')
        .with_context(|| format!("range {range:?} must be START:END"))?;
    Ok((start.parse()?, end.parse()?))
}

fn cmd_index_build(args: IndexBuildArgs) -> Result<()> {
    let manifest = load_manifest(&args.manifest)?;
    let mut docs = import_annotations(&args.annotations, Some(&manifest))?;
    match args.range {
        Some(range) => {
            let (start, end) = parse_range(&range)?;
            docs.retain(|d| d.internal_id >= start && d.internal_id < end);
            docs.sort_by_key(|d| d.internal_id);
            let shard = build_shard(docs, (start, end))?;
            save_shard(&shard, &args.output)?;
            println!("built shard [{start}, {end}) -> {}", args.output.display());
        }
        None => {
            let shards = args.shards.unwrap_or_else(rayon::current_num_threads);
            let index = build_index(docs, manifest.total_documents, shards)?;
            save_index(&index, &args.output)?;
            println!(
                "built index over {} documents, {} entities -> {}",
                index.doc_count(),
                index.entity_count(),
                args.output.display()
            );
        }
    }
    Ok(())
}

fn cmd_index_merge(args: IndexMergeArgs) -> Result<()> {
    let shards = args
        .inputs
        .iter()
        .map(|p| load_shard(p).map_err(Into::into))
        .collect::<Result<Vec<_>>>()?;
    let index = merge_shards(shards)?;
    save_index(&index, &args.output)?;
    println!(
        "merged {} shards into {} documents, {} entities",
        args.inputs.len(),
        index.doc_count(),
        index.entity_count()
    );
    Ok(())
}

fn cmd_index_query(args: IndexQueryArgs) -> Result<()> {
    let index = load_index(&args.index)?;
    if let Some(entity) = args.entity {
        println!("{}", index.count_entity(&entity));
    } else if let Some(pair) = args.pair {
        println!("{}", index.count_pair(&pair[0], &pair[1]));
    } else if let Some(docs) = args.docs {
        for id in index.docs_for_pair(&docs[0], &docs[1]).ids() {
            println!("{id}");
        }
    } else {
        bail!("one of --entity, --pair, or --docs is required");
    }
    Ok(())
}

fn cmd_qa_link(args: QaLinkArgs) -> Result<()> {
    let mut examples = load_questions(&args.questions)?;
    if let Some(holdout_path) = &args.holdout_output {
        let (kept, holdout) = split_holdout(examples, args.holdout, args.seed)?;
        write_jsonl(holdout_path, &holdout)?;
        examples = kept;
    }
    let gazetteer = load_gazetteer_arg(&args.gazetteer)?;
    let index = load_index(&args.index)?;
    let (records, stats) = link_qa_dataset(&examples, &gazetteer, &index)?;
    write_jsonl(&args.output, &records)?;
    if let Some(stats_path) = &args.stats_output {
        write_json(stats_path, &stats)?;
    }
    println!(
        "linked {}/{} examples (no_question_entity={}, no_answer_entity={}, zero_relevant_docs={})",
        stats.linked,
        stats.total,
        stats.no_question_entity,
        stats.no_answer_entity,
        stats.zero_relevant_docs
    );
    Ok(())
}

fn cmd_eval_em(args: EvalEmArgs) -> Result<()> {
    let examples = load_questions(&args.questions)?;
    let predictions: Vec<PredictionRecord> = read_jsonl(&args.predictions)
        .with_context(|| format!("reading predictions {}", args.predictions.display()))?;
    if predictions.is_empty() {
        bail!("no prediction records in {}", args.predictions.display());
    }
    let scored = score_predictions(&examples, &predictions)?;
    let correct = scored.iter().filter(|(_, ok)| *ok).count();
    let records: Vec<EmRecord> =
        scored.into_iter().map(|(id, correct)| EmRecord { id, correct }).collect();
    write_jsonl(&args.output, &records)?;
    println!("em {correct}/{} = {}", records.len(), correct as f64 / records.len() as f64);
    Ok(())
}

fn read_scores(path: &Path) -> Result<HashMap<String, f64>> {
    let raw: Vec<ScoreRecord> =
        read_jsonl(path).with_context(|| format!("reading scores {}", path.display()))?;
    if raw.is_empty() {
        bail!("no score records in {}", path.display());
    }
    let mut scores = HashMap::with_capacity(raw.len());
    for record in raw {
        let value = match (record.correct, record.value) {
            (Some(c), None) => c as u8 as f64,
            (None, Some(v)) => v,
            _ => bail!(
                "score record {:?} in {} must have exactly one of \"correct\" or \"value\"",
                record.id,
                path.display()
            ),
        };
        if scores.insert(record.id.clone(), value).is_some() {
            bail!("duplicate score id {:?} in {}", record.id, path.display());
        }
    }
    Ok(scores)
}

/// Counts CSV from `eval heuristics`: id,count with a header row.
fn read_counts_csv(path: &Path) -> Result<HashMap<String, u64>> {
    let content = std::fs::read_to_string(path)
        .with_context(|| format!("reading counts {}", path.display()))?;
    let mut counts = HashMap::new();
    for (i, line) in content.lines().enumerate() {
        if line.trim().is_empty() || (i == 0 && line.trim() == "id,count") {
            continue;
        }
        let (id, count) = line
            .rsplit_once(',')
            .with_context(|| format!("{}:{}: expected id,count", path.display(), i + 1))?;
        let count: u64 = count
            .trim()
            .parse()
            .with_context(|| format!("{}:{}: bad count", path.display(), i + 1))?;
        counts.insert(id.to_string(), count);
    }
    if counts.is_empty() {
        bail!("no count rows in {}", path.display());
    }
    Ok(counts)
}

fn cmd_eval_bins(args: EvalBinsArgs) -> Result<()> {
    let linked = load_linked(&args.linked)?;
    let mut records: Vec<LinkedQa> = linked.into_iter().filter(|r| r.is_linked()).collect();
    if let Some(bound) = args.max_pair_count {
        records = subpopulation_filter(&records, bound);
    }
    if records.is_empty() {
        bail!("no linked records to bin in {}", args.linked.display());
    }
    let count_override = args.counts.as_deref().map(read_counts_csv).transpose()?;
    let scores = read_scores(&args.scores)?;
    let mut values = Vec::with_capacity(records.len());
    for record in &records {
        let count = match &count_override {
            Some(counts) => *counts.get(&record.id).with_context(|| {
                format!("no count for linked example {:?} in counts file", record.id)
            })?,
            None => record.relevant_doc_count,
        };
        let value = *scores
            .get(&record.id)
            .with_context(|| format!("no score for linked example {:?}", record.id))?;
        values.push((count, value));
    }
    let curve = bin_values(&values, &BinScheme::new(args.min_samples)?)?;
    write_text(&args.output, &curve.to_csv())?;
    println!("binned {} examples into {} bins", values.len(), curve.bins.len());
    Ok(())
}

fn cmd_eval_loo(args: EvalLooArgs) -> Result<()> {
    let raw: Vec<LooRecord> = read_jsonl(&args.annotations)
        .with_context(|| format!("reading annotations {}", args.annotations.display()))?;
    if raw.is_empty() {
        bail!("no annotation records in {}", args.annotations.display());
    }
    let examples: Vec<(String, Vec<Vec<String>>)> =
        raw.into_iter().map(|r| (r.id, r.raters)).collect();
    let accuracies = human_loo_accuracy(&examples)?;
    let records: Vec<ValueRecord> =
        accuracies.into_iter().map(|(id, value)| ValueRecord { id, value }).collect();
    write_jsonl(&args.output, &records)?;
    println!("scored {} examples", records.len());
    Ok(())
}

fn cmd_eval_heuristics(args: EvalHeuristicsArgs) -> Result<()> {
    let linked = load_linked(&args.linked)?;
    let index = load_index(&args.index)?;
    let mode = match args.mode {
        HeuristicModeArg::Pair => HeuristicMode::Pair,
        HeuristicModeArg::QuestionOnly => HeuristicMode::QuestionOnly,
        HeuristicModeArg::AnswerOnly => HeuristicMode::AnswerOnly,
    };
    let counts = heuristic_counts(&linked, &index, mode);
    let mut csv = String::from("id,count\n");
    for (id, count) in &counts {
        csv.push_str(&format!("{id},{count}\n"));
    }
    write_text(&args.output, &csv)?;
    println!("counted {} examples", counts.len());
    Ok(())
}

fn cmd_eval_audit_sample(args: EvalAuditSampleArgs) -> Result<()> {
    let linked = load_linked(&args.linked)?;
    let index = load_index(&args.index)?;
    let sample = audit_sample(&linked, &index, args.n, args.seed)?;
    let mut csv = String::from("qa_id,doc_id\n");
    for (id, doc) in &sample {
        csv.push_str(&format!("{id},{doc}\n"));
    }
    write_text(&args.output, &csv)?;
    println!("sampled {} (qa, document) pairs", sample.len());
    Ok(())
}

fn cmd_eval_audit_precision(args: EvalAuditPrecisionArgs) -> Result<()> {
    let content = std::fs::read_to_string(&args.labels)
        .with_context(|| format!("reading labels {}", args.labels.display()))?;
    let labels = content
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.parse::<AuditLabel>().map_err(Into::into))
        .collect::<Result<Vec<_>>>()?;
    let report = audit_precision(&labels)?;
    let json = serde_json::to_string_pretty(&report)?;
    if let Some(path) = &args.output {
        write_text(path, &format!("{json}\n"))?;
    }
    println!("{json}");
    Ok(())
}

fn cmd_stats_spearman(args: StatsSpearmanArgs) -> Result<()> {
    let pairs = read_two_column_csv(&args.input)?;
    let x: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let y: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let rho = ltk_core::stats::spearman_rho(&x, &y)?;
    println!("{}", serde_json::json!({"rho": rho, "n": x.len()}));
    Ok(())
}

fn cmd_stats_scaling_fit(args: StatsScalingFitArgs) -> Result<()> {
    let points = read_two_column_csv(&args.input)?;
    let fit = ltk_core::stats::fit_log_linear(&points)?;
    let report = FitReport {
        slope: fit.slope,
        intercept: fit.intercept,
        r2: fit.r_squared,
        n: points.len(),
    };
    if let Some(path) = &args.output {
        write_json(path, &report)?;
    }
    println!("{}", serde_json::to_string(&report)?);
    if let Some(target) = args.extrapolate {
        let params = ltk_core::stats::extrapolate_size(&fit, target)?;
        println!("{}", serde_json::json!({"target_accuracy": target, "params": params}));
    }
    Ok(())
}

fn cmd_stats_scale_counts(args: StatsScaleCountsArgs) -> Result<()> {
    let content = std::fs::read_to_string(&args.input)
        .with_context(|| format!("reading counts {}", args.input.display()))?;
    let counts = content
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.trim().parse::<u64>().map_err(Into::into))
        .collect::<Result<Vec<_>>>()?;
    let scaled = ltk_core::stats::scale_counts(&counts, args.factor)?;
    let mut out = String::new();
    for count in &scaled {
        out.push_str(&format!("{count}\n"));
    }
    write_text(&args.output, &out)?;
    println!("scaled {} counts by {}", scaled.len(), args.factor);
    Ok(())
}

fn cmd_cf_sample(args: CfSampleArgs) -> Result<()> {
    let linked = load_linked(&args.linked)?;
    let plan = sample_per_bin(&linked, args.n_per_bin, args.seed)?;
    let sampled: usize = plan.bins.iter().map(|b| b.examples.len()).sum();
    write_json(&args.output, &plan)?;
    println!("sampled {sampled} questions across {} bins", plan.bins.len());
    Ok(())
}

fn cmd_cf_filter(args: CfFilterArgs) -> Result<()> {
    let manifest = load_manifest(&args.manifest)?;
    let plan: SamplePlan = {
        let file = std::fs::File::open(&args.samples)
            .with_context(|| format!("opening samples {}", args.samples.display()))?;
        serde_json::from_reader(std::io::BufReader::new(file))
            .with_context(|| format!("parsing samples {}", args.samples.display()))?
    };
    let index = load_index(&args.index)?;
    let removal = removal_set(&plan, &index);
    let outcome = filter_corpus(&manifest, &removal, &args.output_dir)?;
    let manifest_json = removal_manifest(&plan, &outcome);
    write_json(&args.output_dir.join("removal_manifest.json"), &manifest_json)?;
    println!(
        "removed {} of {} documents ({:.4} of the corpus), kept {}",
        outcome.removed_documents,
        outcome.original_documents,
        outcome.removed_fraction,
        outcome.kept_documents
    );
    Ok(())
}

fn cmd_retrieval_segment(args: RetrievalSegmentArgs) -> Result<()> {
    let manifest = load_manifest(&args.manifest)?;
    let mut next_id = 0u64;
    let mut total = 0u64;
    write_atomic(&args.output, |w| {
        for doc in ltk_core::corpus::stream_documents(&manifest) {
            let doc = doc.map_err(|e| std::io::Error::other(e.to_string()))?;
            for mut passage in segment_passages(&doc) {
                passage.passage_id = next_id;
                next_id += 1;
                serde_json::to_writer(&mut *w, &passage)?;
                writeln!(w)?;
            }
            total += 1;
        }
        Ok(())
    })?;
    println!("segmented {total} documents into {next_id} passages");
    Ok(())
}

fn cmd_retrieval_build(args: RetrievalBuildArgs) -> Result<()> {
    let passages: Vec<Passage> = read_jsonl(&args.passages)
        .with_context(|| format!("reading passages {}", args.passages.display()))?;
    let index = build_bm25(passages, args.k1, args.b)?;
    save_bm25(&index, &args.output)?;
    println!(
        "indexed {} passages (k1={}, b={}, avg length {:.2})",
        index.passage_count(),
        args.k1,
        args.b,
        index.avg_length()
    );
    Ok(())
}

fn cmd_retrieval_query(args: RetrievalQueryArgs) -> Result<()> {
    let index = load_bm25(&args.index)?;
    for (passage, score) in index.query_topk(&args.question, args.k) {
        println!(
            "{}",
            serde_json::json!({
                "passage_id": passage.passage_id,
                "doc_id": passage.doc_id,
                "score": score,
                "text": passage.text,
            })
        );
    }
    Ok(())
}

fn cmd_retrieval_recall(args: RetrievalRecallArgs) -> Result<()> {
    let index = load_bm25(&args.index)?;
    let linked = load_linked(&args.linked)?;
    let questions = load_questions(&args.questions)?;
    let by_id: HashMap<&str, &QaExample> =
        questions.iter().map(|q| (q.id.as_str(), q)).collect();
    let mut records = Vec::new();
    for record in linked.iter().filter(|r| r.is_linked()) {
        let example = by_id.get(record.id.as_str()).with_context(|| {
            format!("linked example {:?} not found in questions file", record.id)
        })?;
        records.push(RecallRecord {
            id: record.id.clone(),
            question: example.question.clone(),
            golds: example.answers.clone(),
            relevant_doc_count: record.relevant_doc_count,
        });
    }
    if records.is_empty() {
        bail!("no linked records in {}", args.linked.display());
    }
    let curves = recall_curve(&records, &index, &args.ks, &BinScheme::new(args.min_samples)?)?;
    let mut csv = String::from(
        "# recall definition: any normalized gold alias contained as a token run in a top-k passage\n",
    );
    csv.push_str("k,bin_lo,bin_hi,n,value,trimmed\n");
    for (k, curve) in &curves {
        for bin in &curve.bins {
            csv.push_str(&format!(
                "{k},{},{},{},{},{}\n",
                bin.lower, bin.upper, bin.samples, bin.mean, bin.trimmed
            ));
        }
    }
    write_text(&args.output, &csv)?;
    println!("recall over {} questions at k in {:?}", records.len(), args.ks);
    Ok(())
}

fn oracle_passage(pages: &HashMap<String, String>, example: &QaExample) -> Result<String> {
    let page = pages
        .get(&example.id)
        .with_context(|| format!("no gold page for example {:?}", example.id))?;
    for alias in &example.answers {
        if let Ok(context) = oracle_context(page, alias) {
            return Ok(context);
        }
    }
    bail!("no gold answer of example {:?} occurs in its page", example.id)
}

fn bm25_passages(index: &Bm25Index, question: &str, k: usize) -> Vec<String> {
    index.query_topk(question, k).into_iter().map(|(p, _)| p.text.clone()).collect()
}

fn cmd_retrieval_prompts(args: RetrievalPromptsArgs) -> Result<()> {
    let tests = load_questions(&args.questions)?;
    let incontext_examples = load_questions(&args.incontext)?;
    let mode = match args.mode {
        PromptModeArg::ClosedBook => PromptMode::ClosedBook,
        PromptModeArg::Bm25 => PromptMode::Bm25,
        PromptModeArg::Oracle => PromptMode::Oracle,
    };
    let bm25 = match (mode, &args.bm25_index) {
        (PromptMode::Bm25, Some(path)) => Some(load_bm25(path)?),
        (PromptMode::Bm25, None) => bail!("--bm25-index is required in bm25 mode"),
        _ => None,
    };
    let pages: Option<HashMap<String, String>> = match (mode, &args.pages) {
        (PromptMode::Oracle, Some(path)) => {
            let raw: Vec<PageRecord> =
                read_jsonl(path).with_context(|| format!("reading pages {}", path.display()))?;
            Some(raw.into_iter().map(|p| (p.id, p.text)).collect())
        }
        (PromptMode::Oracle, None) => bail!("--pages is required in oracle mode"),
        _ => None,
    };

    let incontext: Vec<PromptExample> = incontext_examples
        .iter()
        .map(|example| {
            let passages = match mode {
                PromptMode::ClosedBook => Vec::new(),
                PromptMode::Bm25 => {
                    bm25_passages(bm25.as_ref().unwrap(), &example.question, args.top_k)
                }
                PromptMode::Oracle => vec![oracle_passage(pages.as_ref().unwrap(), example)?],
            };
            Ok(PromptExample {
                question: example.question.clone(),
                answers: example.answers.clone(),
                passages,
            })
        })
        .collect::<Result<_>>()?;

    let mut prompts = Vec::with_capacity(tests.len());
    for example in &tests {
        let passages = match mode {
            PromptMode::ClosedBook => Vec::new(),
            PromptMode::Bm25 => {
                bm25_passages(bm25.as_ref().unwrap(), &example.question, args.top_k)
            }
            PromptMode::Oracle => vec![oracle_passage(pages.as_ref().unwrap(), example)?],
        };
        let query = PromptQuery { question: example.question.clone(), passages };
        let prompt = build_prompt(&incontext, &query, mode, args.shots)
            .with_context(|| format!("building prompt for {:?}", example.id))?;
        prompts.push(PromptRecord { id: example.id.clone(), prompt });
    }
    write_jsonl(&args.output, &prompts)?;
    println!("wrote {} prompts ({} shots)", prompts.len(), args.shots);
    Ok(())
}
