//! Command-line surface: generate, eval, stats, report, and a self-contained
//! offline demo.
//!
//! Exit codes: 0 on success, 1 on runtime errors, 2 on usage errors. Every
//! invocation writes a run manifest (next to `--out`, or inside `--out-dir`)
//! recording the command, config digests, seed, dataset paths, and
//! timestamps.

mod demo;

pub use demo::run_demo;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::File;
use std::io::{BufRead, BufReader, Write as _};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{self, AnnotationRecord};
use crate::engine::{
    self, batch_to_records, run_batch, ConvergencePolicy, EngineConfig, Mode, ResultRecord,
    SessionBackends, SessionResult,
};
use crate::llm::{with_cache, Backend, HttpBackend, LlmConfig};
use crate::metrics::{MeanVector, MetricKind};
use crate::prompts::PromptSet;
use crate::report::{render_csv, render_markdown, TableRow, TableSpec};
use crate::stats::{
    aggregate_means, consensus_for_items, exact_match_rate, fleiss_kappa, half_point_categories,
    integer_categories, mean_of_consensus, pearson, rating_matrix, ConsensusScore, StatsError,
};

#[derive(Parser)]
#[command(name = "qjudge", version, about = "Scores generated study questions with LLM judges")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse()
}

fn parse_policy(s: &str) -> Result<ConvergencePolicy, String> {
    s.parse()
}

#[derive(Subcommand)]
enum Command {
    /// Fill missing questions from contexts using a generator model.
    Generate {
        /// Items file (JSONL).
        #[arg(long)]
        items: PathBuf,
        /// Generator model config (JSON).
        #[arg(long)]
        model: PathBuf,
        /// Output items file (JSONL).
        #[arg(long)]
        out: PathBuf,
        /// Evaluate only a seeded random sample of this size.
        #[arg(long)]
        sample: Option<usize>,
        /// Seed for sampling; required with --sample and recorded in the manifest.
        #[arg(long)]
        seed: Option<u64>,
        /// Response cache directory.
        #[arg(long)]
        cache_dir: Option<PathBuf>,
        /// Directory with replacement prompt templates.
        #[arg(long)]
        prompt_dir: Option<PathBuf>,
    },
    /// Score items with one judge (direct) or two judges (mirror).
    Eval {
        #[arg(long, value_parser = parse_mode)]
        mode: Mode,
        #[arg(long)]
        items: PathBuf,
        /// Judge A model config (JSON).
        #[arg(long)]
        judge_a: PathBuf,
        /// Judge B model config (JSON); required for mirror mode.
        #[arg(long)]
        judge_b: Option<PathBuf>,
        #[arg(long, default_value_t = engine::DEFAULT_MAX_ITERATIONS)]
        max_iterations: u32,
        /// Convergence policy: strict (two consecutive agreements) or simple.
        #[arg(long, value_parser = parse_policy, default_value = "strict")]
        policy: ConvergencePolicy,
        /// Max sessions in flight.
        #[arg(long, default_value_t = 1)]
        parallelism: usize,
        /// Output results file (JSONL).
        #[arg(long)]
        out: PathBuf,
        /// Drop raw judge text from the results file.
        #[arg(long)]
        omit_raw: bool,
        #[arg(long)]
        cache_dir: Option<PathBuf>,
        /// Model label stamped on results (defaults to judge A's model_id).
        #[arg(long)]
        label: Option<String>,
        #[arg(long)]
        prompt_dir: Option<PathBuf>,
    },
    /// Compute consensus, means, correlations, exact-match rates, and kappa.
    Stats {
        /// Results file from eval (JSONL).
        #[arg(long)]
        results: PathBuf,
        /// Human annotations file (JSONL).
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Restrict kappa categories to integer scores.
        #[arg(long)]
        integer_categories: bool,
    },
    /// Render stats output as markdown and CSV tables.
    Report {
        /// Directory produced by stats.
        #[arg(long)]
        stats: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Run the whole pipeline on bundled items with offline scripted judges.
    Demo {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, value_parser = parse_policy, default_value = "strict")]
        policy: ConvergencePolicy,
        #[arg(long, default_value_t = 2)]
        parallelism: usize,
    },
}

/// Parse and execute; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    if let Err(message) = validate(&cli.command) {
        eprintln!("usage error: {message}");
        return 2;
    }
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn validate(command: &Command) -> Result<(), String> {
    match command {
        Command::Eval {
            mode: Mode::Mirror,
            judge_b: None,
            ..
        } => Err("--judge-b is required when --mode mirror".into()),
        Command::Generate {
            sample: Some(_),
            seed: None,
            ..
        } => Err("--seed is required with --sample".into()),
        _ => Ok(()),
    }
}

/// Reproducibility record written once per invocation.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub params: serde_json::Value,
    pub config_digests: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub datasets: Vec<String>,
    pub tool_version: String,
    pub started_at: String,
    pub finished_at: String,
    #[serde(default)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

struct ManifestBuilder {
    command: &'static str,
    params: serde_json::Value,
    config_digests: BTreeMap<String, String>,
    seed: Option<u64>,
    datasets: Vec<String>,
    started_at: String,
    extra: BTreeMap<String, serde_json::Value>,
}

fn now_rfc3339() -> String {
    chrono::Utc::now().to_rfc3339()
}

impl ManifestBuilder {
    fn new(command: &'static str) -> ManifestBuilder {
        ManifestBuilder {
            command,
            params: serde_json::Value::Null,
            config_digests: BTreeMap::new(),
            seed: None,
            datasets: Vec::new(),
            started_at: now_rfc3339(),
            extra: BTreeMap::new(),
        }
    }

    fn dataset(&mut self, path: &Path) -> &mut Self {
        self.datasets.push(path.display().to_string());
        self
    }

    fn config(&mut self, name: &str, path: &Path) -> Result<&mut Self> {
        let bytes = std::fs::read(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        self.config_digests
            .insert(name.to_string(), hex_digest(&bytes));
        Ok(self)
    }

    fn extra(&mut self, key: &str, value: impl Into<serde_json::Value>) -> &mut Self {
        self.extra.insert(key.to_string(), value.into());
        self
    }

    fn write(self, path: &Path) -> Result<()> {
        let manifest = RunManifest {
            command: self.command.to_string(),
            params: self.params,
            config_digests: self.config_digests,
            seed: self.seed,
            datasets: self.datasets,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            started_at: self.started_at,
            finished_at: now_rfc3339(),
            extra: self.extra,
        };
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        std::fs::write(path, json)
            .with_context(|| format!("writing manifest {}", path.display()))?;
        Ok(())
    }
}

fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Manifest path for commands writing a single file: `<out>.manifest.json`.
fn manifest_beside(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    out.with_file_name(name)
}

fn load_llm_config(path: &Path) -> Result<LlmConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading model config {}", path.display()))?;
    let config: LlmConfig = serde_json::from_str(&text)
        .with_context(|| format!("parsing model config {}", path.display()))?;
    config.validate()?;
    Ok(config)
}

fn load_prompts(prompt_dir: &Option<PathBuf>) -> Result<PromptSet> {
    match prompt_dir {
        Some(dir) => Ok(PromptSet::from_dir(dir)?),
        None => Ok(PromptSet::builtin()),
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Generate {
            items,
            model,
            out,
            sample,
            seed,
            cache_dir,
            prompt_dir,
        } => cmd_generate(&items, &model, &out, sample, seed, cache_dir, prompt_dir),
        Command::Eval {
            mode,
            items,
            judge_a,
            judge_b,
            max_iterations,
            policy,
            parallelism,
            out,
            omit_raw,
            cache_dir,
            label,
            prompt_dir,
        } => cmd_eval(EvalArgs {
            mode,
            items,
            judge_a,
            judge_b,
            max_iterations,
            policy,
            parallelism,
            out,
            omit_raw,
            cache_dir,
            label,
            prompt_dir,
        }),
        Command::Stats {
            results,
            annotations,
            out_dir,
            integer_categories,
        } => cmd_stats(&results, &annotations, &out_dir, integer_categories),
        Command::Report { stats, out_dir } => cmd_report(&stats, &out_dir),
        Command::Demo {
            out_dir,
            policy,
            parallelism,
        } => cmd_demo(&out_dir, policy, parallelism),
    }
}

fn cmd_generate(
    items_path: &Path,
    model_path: &Path,
    out: &Path,
    sample: Option<usize>,
    seed: Option<u64>,
    cache_dir: Option<PathBuf>,
    prompt_dir: Option<PathBuf>,
) -> Result<()> {
    let mut manifest = ManifestBuilder::new("generate");
    manifest.dataset(items_path);
    manifest.config("model", model_path)?;
    manifest.seed = seed;
    manifest.params = serde_json::json!({
        "items": items_path.display().to_string(),
        "out": out.display().to_string(),
        "sample": sample,
    });

    let config = load_llm_config(model_path)?;
    let prompts = load_prompts(&prompt_dir)?;
    let mut items = dataset::load_items(items_path)?;
    if let Some(n) = sample {
        let seed = seed.expect("validated: --sample implies --seed");
        items = dataset::sample_items(&items, n, seed);
    }

    let http = HttpBackend::new();
    let backend: Box<dyn Backend> = match &cache_dir {
        Some(dir) => Box::new(with_cache(http, dir.clone())?),
        None => Box::new(http),
    };

    let mut generated = 0usize;
    let mut filled = Vec::with_capacity(items.len());
    for item in &items {
        if item.question.as_deref().is_some_and(|q| !q.trim().is_empty()) {
            filled.push(item.clone());
            continue;
        }
        filled.push(engine::generate_question(item, backend.as_ref(), &config, &prompts)?);
        generated += 1;
    }
    dataset::write_items(out, &filled)?;

    manifest.extra("items_total", filled.len());
    manifest.extra("questions_generated", generated);
    manifest.write(&manifest_beside(out))?;
    println!(
        "generated {generated} questions over {} items -> {}",
        filled.len(),
        out.display()
    );
    Ok(())
}

struct EvalArgs {
    mode: Mode,
    items: PathBuf,
    judge_a: PathBuf,
    judge_b: Option<PathBuf>,
    max_iterations: u32,
    policy: ConvergencePolicy,
    parallelism: usize,
    out: PathBuf,
    omit_raw: bool,
    cache_dir: Option<PathBuf>,
    label: Option<String>,
    prompt_dir: Option<PathBuf>,
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let mut manifest = ManifestBuilder::new("eval");
    manifest.dataset(&args.items);
    manifest.config("judge_a", &args.judge_a)?;
    if let Some(judge_b) = &args.judge_b {
        manifest.config("judge_b", judge_b)?;
    }
    manifest.params = serde_json::json!({
        "mode": args.mode.to_string(),
        "max_iterations": args.max_iterations,
        "policy": if args.policy == ConvergencePolicy::Strict { "strict" } else { "simple" },
        "parallelism": args.parallelism,
        "out": args.out.display().to_string(),
        "omit_raw": args.omit_raw,
    });

    let judge_a_cfg = load_llm_config(&args.judge_a)?;
    let judge_b_cfg = match &args.judge_b {
        Some(path) => load_llm_config(path)?,
        None => judge_a_cfg.clone(),
    };
    let prompts = load_prompts(&args.prompt_dir)?;
    let items = dataset::load_items(&args.items)?;

    let mut config = EngineConfig::new(judge_a_cfg, judge_b_cfg);
    config.max_iterations = args.max_iterations;
    config.policy = args.policy;

    let http = HttpBackend::new();
    let backend: Box<dyn Backend> = match &args.cache_dir {
        Some(dir) => Box::new(with_cache(http, dir.clone())?),
        None => Box::new(http),
    };
    let backends = match args.mode {
        Mode::Direct => SessionBackends::Direct {
            judge: backend.as_ref(),
        },
        Mode::Mirror => SessionBackends::Mirror {
            judge_a: backend.as_ref(),
            judge_b: backend.as_ref(),
        },
    };

    let entries = run_batch(&items, &config, &backends, &prompts, args.parallelism);
    let failures = entries.iter().filter(|e| e.outcome.is_err()).count();
    for entry in entries.iter().filter(|e| e.outcome.is_err()) {
        if let Err(e) = &entry.outcome {
            eprintln!("warning: {e}");
        }
    }

    let mut records = batch_to_records(&entries, !args.omit_raw);
    if let Some(label) = &args.label {
        for record in &mut records {
            if let ResultRecord::Ok(result) = record {
                result.model = label.clone();
            }
        }
    }
    engine::write_results(&args.out, &records)?;

    manifest.extra("items_total", entries.len());
    manifest.extra("failures", failures);
    manifest.write(&manifest_beside(&args.out))?;
    println!(
        "evaluated {} items ({failures} failed) -> {}",
        entries.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_stats(
    results: &Path,
    annotations: &Path,
    out_dir: &Path,
    integer_cats: bool,
) -> Result<()> {
    let mut manifest = ManifestBuilder::new("stats");
    manifest.dataset(results);
    manifest.dataset(annotations);
    manifest.params = serde_json::json!({
        "out_dir": out_dir.display().to_string(),
        "integer_categories": integer_cats,
    });

    let summary = run_stats(results, annotations, out_dir, integer_cats)?;

    manifest.extra("sessions", summary.sessions);
    manifest.extra("skipped_failures", summary.skipped_failures);
    manifest.extra("groups", summary.groups);
    manifest.write(&out_dir.join("manifest.json"))?;
    println!(
        "stats over {} sessions in {} groups -> {}",
        summary.sessions,
        summary.groups,
        out_dir.display()
    );
    Ok(())
}

fn cmd_report(stats_dir: &Path, out_dir: &Path) -> Result<()> {
    let mut manifest = ManifestBuilder::new("report");
    manifest.dataset(stats_dir);
    manifest.params = serde_json::json!({
        "out_dir": out_dir.display().to_string(),
    });

    let written = run_report(stats_dir, out_dir)?;

    manifest.extra("tables_written", written.clone());
    manifest.write(&out_dir.join("manifest.json"))?;
    println!("wrote {} table files -> {}", written.len(), out_dir.display());
    Ok(())
}

fn cmd_demo(out_dir: &Path, policy: ConvergencePolicy, parallelism: usize) -> Result<()> {
    let mut manifest = ManifestBuilder::new("demo");
    manifest.params = serde_json::json!({
        "out_dir": out_dir.display().to_string(),
        "policy": if policy == ConvergencePolicy::Strict { "strict" } else { "simple" },
        "parallelism": parallelism,
    });

    let outcome = run_demo(out_dir, policy, parallelism)?;

    manifest.dataset(&out_dir.join("items.jsonl"));
    manifest.dataset(&out_dir.join("annotations.jsonl"));
    manifest.extra("backend_calls", outcome.backend_calls);
    manifest.extra("sessions", outcome.sessions);
    manifest.extra("converged_sessions", outcome.converged);
    manifest.write(&out_dir.join("manifest.json"))?;
    println!(
        "demo: {} sessions ({} converged), {} backend calls -> {}",
        outcome.sessions,
        outcome.converged,
        outcome.backend_calls,
        out_dir.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// Stats and report pipelines (shared with the demo)
// ---------------------------------------------------------------------------

/// Row of `aggregate.jsonl`; `mode` is direct, mirror, or human.
#[derive(Debug, Serialize, Deserialize)]
pub struct ScoreRowIo {
    pub label: String,
    pub mode: String,
    pub n: usize,
    pub means: MeanVector,
}

/// Row of `correlations.jsonl`.
#[derive(Debug, Serialize, Deserialize)]
pub struct CorrelationRowIo {
    pub label: String,
    pub mode: String,
    pub metric: MetricKind,
    pub r: f64,
    pub n: usize,
}

/// Row of `exact_match.jsonl`.
#[derive(Debug, Serialize, Deserialize)]
pub struct ExactMatchRowIo {
    pub label: String,
    pub mode: String,
    pub metric: MetricKind,
    pub percent: f64,
    pub n: usize,
}

/// Row of `kappa.jsonl`.
#[derive(Debug, Serialize, Deserialize)]
pub struct KappaRowIo {
    pub metric: MetricKind,
    pub kappa: f64,
    pub n_items: usize,
    pub n_raters: u32,
    pub categories: Vec<String>,
}

pub struct StatsSummary {
    pub sessions: usize,
    pub skipped_failures: usize,
    pub groups: usize,
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut out =
        File::create(path).with_context(|| format!("creating {}", path.display()))?;
    for row in rows {
        writeln!(out, "{}", serde_json::to_string(row).expect("row serializes"))?;
    }
    Ok(())
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let reader = BufReader::new(
        File::open(path).with_context(|| format!("opening {}", path.display()))?,
    );
    let mut rows = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(
            serde_json::from_str(&line)
                .with_context(|| format!("parsing a row of {}", path.display()))?,
        );
    }
    Ok(rows)
}

/// Compute every statistic over a results file and write the stats JSONL
/// files into `out_dir`.
pub fn run_stats(
    results_path: &Path,
    annotations_path: &Path,
    out_dir: &Path,
    integer_cats: bool,
) -> Result<StatsSummary> {
    std::fs::create_dir_all(out_dir)?;
    let records = engine::read_results(results_path)?;
    let sessions: Vec<&SessionResult> = records.iter().filter_map(ResultRecord::session).collect();
    let skipped_failures = records.len() - sessions.len();
    for record in &records {
        if let ResultRecord::Error { item_id, error } = record {
            eprintln!("warning: skipping failed item {item_id}: {error}");
        }
    }
    if sessions.is_empty() {
        bail!("no successful sessions in {}", results_path.display());
    }
    let annotations = dataset::load_annotations(annotations_path)?;

    // Consensus over the union of evaluated items, first-seen order.
    let mut unique_ids: Vec<&str> = Vec::new();
    for session in &sessions {
        if !unique_ids.contains(&session.item_id.as_str()) {
            unique_ids.push(&session.item_id);
        }
    }
    let consensus = consensus_for_items(unique_ids.iter().copied(), &annotations)?;
    let consensus_by_id: BTreeMap<&str, &ConsensusScore> =
        consensus.iter().map(|c| (c.item_id.as_str(), c)).collect();
    write_jsonl(&out_dir.join("consensus.jsonl"), &consensus)?;

    // Score means: human baseline first, then per (label, mode) groups.
    let mut score_rows = vec![ScoreRowIo {
        label: "Human Baseline".to_string(),
        mode: "human".to_string(),
        n: consensus.len(),
        means: mean_of_consensus(&consensus)?,
    }];
    for group in aggregate_means(&sessions)? {
        score_rows.push(ScoreRowIo {
            label: group.label,
            mode: group.mode.to_string(),
            n: group.n,
            means: group.means,
        });
    }
    write_jsonl(&out_dir.join("aggregate.jsonl"), &score_rows)?;

    // Per-group correlations and exact-match rates.
    let mut groups: BTreeMap<(String, String), Vec<&SessionResult>> = BTreeMap::new();
    for session in &sessions {
        groups
            .entry((session.model.clone(), session.mode.to_string()))
            .or_default()
            .push(session);
    }
    let mut correlation_rows = Vec::new();
    let mut exact_rows = Vec::new();
    for ((label, mode), group) in &groups {
        let mut by_id: BTreeMap<String, &SessionResult> = BTreeMap::new();
        for session in group {
            by_id.insert(session.item_id.clone(), session);
        }
        let group_consensus: Vec<ConsensusScore> = by_id
            .keys()
            .map(|id| (*consensus_by_id[id.as_str()]).clone())
            .collect();
        for metric in MetricKind::ALL {
            let x: Vec<f64> = by_id
                .values()
                .map(|s| s.final_scores.get(metric).value())
                .collect();
            let y: Vec<f64> = group_consensus.iter().map(|c| c.mean.get(metric)).collect();
            match pearson(&x, &y) {
                Ok(r) => correlation_rows.push(CorrelationRowIo {
                    label: label.clone(),
                    mode: mode.clone(),
                    metric,
                    r,
                    n: x.len(),
                }),
                Err(StatsError::DegenerateSeries) | Err(StatsError::TooFewSamples(_)) => {
                    eprintln!(
                        "warning: skipping correlation for {label}/{mode}/{metric}: series degenerate or too short"
                    );
                }
                Err(e) => return Err(e.into()),
            }
            let model_scores: BTreeMap<String, crate::metrics::ScoreVector> = by_id
                .iter()
                .map(|(id, s)| (id.clone(), s.final_scores))
                .collect();
            exact_rows.push(ExactMatchRowIo {
                label: label.clone(),
                mode: mode.clone(),
                metric,
                percent: exact_match_rate(&model_scores, &group_consensus, metric)?,
                n: model_scores.len(),
            });
        }
    }
    write_jsonl(&out_dir.join("correlations.jsonl"), &correlation_rows)?;
    write_jsonl(&out_dir.join("exact_match.jsonl"), &exact_rows)?;

    // Inter-annotator agreement per metric over all annotations.
    let categories = if integer_cats {
        integer_categories()
    } else {
        half_point_categories()
    };
    let category_labels: Vec<String> = categories.iter().map(|c| c.to_string()).collect();
    let mut kappa_rows = Vec::new();
    for metric in MetricKind::ALL {
        let matrix = rating_matrix(&annotations, metric, &categories)?;
        match fleiss_kappa(&matrix, &category_labels) {
            Ok(result) => kappa_rows.push(KappaRowIo {
                metric,
                kappa: result.kappa,
                n_items: result.n_items,
                n_raters: result.n_raters,
                categories: result.categories,
            }),
            Err(StatsError::DegenerateAgreement) => {
                eprintln!("warning: kappa undefined for {metric}: all ratings in one category");
            }
            Err(e) => return Err(e.into()),
        }
    }
    write_jsonl(&out_dir.join("kappa.jsonl"), &kappa_rows)?;

    Ok(StatsSummary {
        sessions: sessions.len(),
        skipped_failures,
        groups: groups.len(),
    })
}

fn mode_caption(mode: &str) -> Option<String> {
    match mode {
        "direct" => Some("Direct Approach".to_string()),
        "mirror" => Some("Feedback-based Approach".to_string()),
        _ => None,
    }
}

fn means_to_values(means: &MeanVector) -> [f64; 5] {
    MetricKind::ALL.map(|m| means.get(m))
}

/// Render the stats files in `stats_dir` as markdown/CSV tables in `out_dir`.
/// Returns the file names written.
pub fn run_report(stats_dir: &Path, out_dir: &Path) -> Result<Vec<String>> {
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();

    let score_rows: Vec<ScoreRowIo> = read_jsonl(&stats_dir.join("aggregate.jsonl"))?;
    let mut scores_table = TableSpec::new("Average scores by model and approach", "Model");
    for mode in ["human", "direct", "mirror"] {
        let mut rows: Vec<TableRow> = score_rows
            .iter()
            .filter(|r| r.mode == mode)
            .map(|r| TableRow {
                label: r.label.clone(),
                values: means_to_values(&r.means),
            })
            .collect();
        rows.sort_by(|a, b| a.label.cmp(&b.label));
        if !rows.is_empty() {
            scores_table.push_group(mode_caption(mode), rows);
        }
    }
    write_table(out_dir, "scores", &scores_table, &mut written)?;

    let correlation_rows: Vec<CorrelationRowIo> =
        read_jsonl(&stats_dir.join("correlations.jsonl"))?;
    let corr_table = rows_by_metric_table(
        "Correlation with the human consensus",
        &correlation_rows,
        |r| (r.label.clone(), r.mode.clone(), r.metric, r.r),
    );
    write_table(out_dir, "correlations", &corr_table, &mut written)?;

    let exact_rows: Vec<ExactMatchRowIo> = read_jsonl(&stats_dir.join("exact_match.jsonl"))?;
    let exact_table = rows_by_metric_table(
        "Exact-match rate against the rounded consensus (%)",
        &exact_rows,
        |r| (r.label.clone(), r.mode.clone(), r.metric, r.percent),
    );
    write_table(out_dir, "exact_match", &exact_table, &mut written)?;

    Ok(written)
}

// Pivot (label, mode, metric, value) rows into one table row per
// (label, mode), grouped by mode. Rows missing any metric are dropped.
fn rows_by_metric_table<T>(
    title: &str,
    rows: &[T],
    extract: impl Fn(&T) -> (String, String, MetricKind, f64),
) -> TableSpec {
    let mut cells: BTreeMap<(String, String), BTreeMap<MetricKind, f64>> = BTreeMap::new();
    for row in rows {
        let (label, mode, metric, value) = extract(row);
        cells.entry((label, mode)).or_default().insert(metric, value);
    }
    let mut table = TableSpec::new(title, "Model");
    for mode in ["direct", "mirror"] {
        let mut group_rows = Vec::new();
        for ((label, row_mode), values) in &cells {
            if row_mode != mode || values.len() != 5 {
                continue;
            }
            group_rows.push(TableRow {
                label: label.clone(),
                values: MetricKind::ALL.map(|m| values[&m]),
            });
        }
        if !group_rows.is_empty() {
            table.push_group(mode_caption(mode), group_rows);
        }
    }
    table
}

fn write_table(
    out_dir: &Path,
    stem: &str,
    table: &TableSpec,
    written: &mut Vec<String>,
) -> Result<()> {
    if table.groups.iter().all(|g| g.rows.is_empty()) {
        eprintln!("warning: no rows for the {stem} table, skipping");
        return Ok(());
    }
    let md = render_markdown(table)?;
    let csv = render_csv(table)?;
    std::fs::write(out_dir.join(format!("{stem}.md")), md)?;
    std::fs::write(out_dir.join(format!("{stem}.csv")), csv)?;
    written.push(format!("{stem}.md"));
    written.push(format!("{stem}.csv"));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mirror_without_judge_b_is_a_usage_error() {
        let code = run([
            "qjudge", "eval", "--mode", "mirror", "--items", "x.jsonl", "--judge-a", "a.json",
            "--out", "out.jsonl",
        ]);
        assert_eq!(code, 2);
    }

    #[test]
    fn unknown_flag_is_a_usage_error() {
        let code = run(["qjudge", "demo", "--out-dir", "d", "--bogus"]);
        assert_eq!(code, 2);
    }

    #[test]
    fn help_exits_zero() {
        assert_eq!(run(["qjudge", "--help"]), 0);
    }

    #[test]
    fn sample_without_seed_is_a_usage_error() {
        let code = run([
            "qjudge", "generate", "--items", "x.jsonl", "--model", "m.json", "--out", "o.jsonl",
            "--sample", "3",
        ]);
        assert_eq!(code, 2);
    }

    #[test]
    fn missing_input_file_is_a_runtime_error() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        let code = run([
            "qjudge",
            "stats",
            "--results",
            "/nonexistent/results.jsonl",
            "--annotations",
            "/nonexistent/annotations.jsonl",
            "--out-dir",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, 1);
    }
}
