//! Offline end-to-end pipeline over five bundled items.
//!
//! Generation and both judges are scripted lookups keyed on prompt content,
//! wrapped in the response cache, so a repeat run over a warm cache performs
//! zero backend calls and rewrites byte-identical outputs (the manifest's
//! timestamps aside). No network is touched; an unexpected prompt is an
//! error, not a remote call.

use std::path::Path;

use anyhow::{bail, Context, Result};

use crate::dataset;
use crate::engine::{
    batch_to_records, run_batch, ConvergencePolicy, EngineConfig, SessionBackends,
};
use crate::llm::{
    with_cache, Backend, CacheBackend, CallbackBackend, CompletionRequest, CountingBackend,
    LlmConfig, LlmError,
};
use crate::prompts::PromptSet;

const DEMO_ITEMS: &str = include_str!("../../assets/demo/items.jsonl");
const DEMO_ANNOTATIONS: &str = include_str!("../../assets/demo/annotations.jsonl");

struct DemoCase {
    context_key: &'static str,
    question: &'static str,
    judge_a: &'static str,
    judge_b: &'static str,
}

const CASES: [DemoCase; 5] = [
    DemoCase {
        context_key: "Purchasing power parity",
        question: "What does purchasing power parity do?",
        judge_a: include_str!("../../assets/transcripts/economics_judge_a.txt"),
        judge_b: include_str!("../../assets/transcripts/economics_judge_b.txt"),
    },
    DemoCase {
        context_key: "medieval period in India",
        question: "How did medieval period contribute to India?",
        judge_a: include_str!("../../assets/transcripts/history_judge_a.txt"),
        judge_b: include_str!("../../assets/transcripts/history_judge_b.txt"),
    },
    DemoCase {
        context_key: "monsoon winds",
        question: "How do monsoon winds shape farming seasons across the Indian subcontinent?",
        judge_a: include_str!("../../assets/transcripts/geography_judge_a.txt"),
        judge_b: include_str!("../../assets/transcripts/geography_judge_b.txt"),
    },
    DemoCase {
        context_key: "Mesophiles grow best",
        question: "Where is Mesophiles found?",
        judge_a: include_str!("../../assets/transcripts/biology_judge_a.txt"),
        judge_b: include_str!("../../assets/transcripts/biology_judge_b.txt"),
    },
    DemoCase {
        context_key: "Coriolis effect",
        question: "How does Coriolis effect impact global winds?",
        judge_a: include_str!("../../assets/transcripts/earth_science_judge_a.txt"),
        judge_b: include_str!("../../assets/transcripts/earth_science_judge_b.txt"),
    },
];

fn generation_reply(request: &CompletionRequest) -> Result<String, LlmError> {
    CASES
        .iter()
        .find(|case| request.prompt.contains(case.context_key))
        .map(|case| case.question.to_string())
        .ok_or_else(|| {
            LlmError::MalformedResponse("demo generator got a prompt for no bundled item".into())
        })
}

fn judge_reply(request: &CompletionRequest, pick: fn(&DemoCase) -> &'static str) -> Result<String, LlmError> {
    CASES
        .iter()
        .find(|case| request.prompt.contains(case.question))
        .map(|case| pick(case).to_string())
        .ok_or_else(|| {
            LlmError::MalformedResponse("demo judge got a prompt for no bundled item".into())
        })
}

pub struct DemoOutcome {
    pub backend_calls: u64,
    pub sessions: usize,
    pub converged: usize,
}

type DemoBackend = CacheBackend<CountingBackend<CallbackBackend>>;

fn demo_backend(
    cache_dir: &Path,
    reply: impl Fn(&CompletionRequest) -> Result<String, LlmError> + Send + Sync + 'static,
) -> Result<DemoBackend, LlmError> {
    with_cache(CountingBackend::new(CallbackBackend::new(reply)), cache_dir)
}

/// Run generate, eval (mirror), stats, and report over the bundled items.
pub fn run_demo(
    out_dir: &Path,
    policy: ConvergencePolicy,
    parallelism: usize,
) -> Result<DemoOutcome> {
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))?;
    let items_path = out_dir.join("items.jsonl");
    let annotations_path = out_dir.join("annotations.jsonl");
    std::fs::write(&items_path, DEMO_ITEMS)?;
    std::fs::write(&annotations_path, DEMO_ANNOTATIONS)?;

    let cache_dir = out_dir.join("cache");
    let generator = demo_backend(&cache_dir, generation_reply)?;
    let judge_a = demo_backend(&cache_dir, |req| judge_reply(req, |c| c.judge_a))?;
    let judge_b = demo_backend(&cache_dir, |req| judge_reply(req, |c| c.judge_b))?;

    let prompts = PromptSet::builtin();
    let items = dataset::load_items(&items_path)?;

    let generator_cfg = LlmConfig::offline("generator-demo");
    let mut generated = Vec::with_capacity(items.len());
    for item in &items {
        generated.push(crate::engine::generate_question(
            item,
            &generator,
            &generator_cfg,
            &prompts,
        )?);
    }
    dataset::write_items(&out_dir.join("generated_items.jsonl"), &generated)?;

    let mut config = EngineConfig::new(
        LlmConfig::offline("judge-a-demo"),
        LlmConfig::offline("judge-b-demo"),
    );
    config.policy = policy;
    let backends = SessionBackends::Mirror {
        judge_a: &judge_a,
        judge_b: &judge_b,
    };
    let entries = run_batch(&generated, &config, &backends, &prompts, parallelism.max(1));
    for entry in &entries {
        if let Err(e) = &entry.outcome {
            bail!("demo session failed: {e}");
        }
    }
    let converged = entries
        .iter()
        .filter(|e| e.outcome.as_ref().is_ok_and(|r| r.converged))
        .count();
    let records = batch_to_records(&entries, true);
    let results_path = out_dir.join("results.jsonl");
    crate::engine::write_results(&results_path, &records)?;

    super::run_stats(&results_path, &annotations_path, out_dir, false)?;
    super::run_report(out_dir, out_dir)?;

    let backend_calls = generator.inner().calls()
        + judge_a.inner().calls()
        + judge_b.inner().calls();
    Ok(DemoOutcome {
        backend_calls,
        sessions: entries.len(),
        converged,
    })
}
