//! Session control flow: single-pass evaluation, the iterative two-judge
//! feedback loop, and batch execution over many items.
//!
//! A feedback session runs one initial pass by judge A (no feedback exists
//! yet, so it answers the direct prompt), then alternates B and A turns.
//! Each turn receives the critique extracted from the immediately preceding
//! turn. After each iteration the two fresh score vectors are compared; the
//! strict policy stops once they match on two consecutive iterations, the
//! simple policy on the first match. Sessions that hit the iteration cap
//! report the last judge-A scores with `converged = false`.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write as _};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::dataset::QuestionItem;
use crate::llm::{self, Backend, CompletionRequest, LlmConfig, LlmError};
use crate::metrics::{score_vectors_equal, ScoreVector};
use crate::parse::{parse_turn, ParseError, ParsedTurn};
use crate::prompts::{PromptError, PromptSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvaluatorRole {
    JudgeA,
    JudgeB,
}

impl fmt::Display for EvaluatorRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EvaluatorRole::JudgeA => "judge_a",
            EvaluatorRole::JudgeB => "judge_b",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Direct,
    Mirror,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Direct => "direct",
            Mode::Mirror => "mirror",
        })
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "direct" => Ok(Mode::Direct),
            "mirror" => Ok(Mode::Mirror),
            other => Err(format!("unknown mode {other:?}, expected direct or mirror")),
        }
    }
}

/// Termination rule for the feedback loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConvergencePolicy {
    /// Judges must produce identical scores on two consecutive iterations.
    Strict,
    /// A single iteration with identical scores suffices.
    Simple,
}

impl std::str::FromStr for ConvergencePolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "strict" => Ok(ConvergencePolicy::Strict),
            "simple" => Ok(ConvergencePolicy::Simple),
            other => Err(format!(
                "unknown policy {other:?}, expected strict or simple"
            )),
        }
    }
}

pub const DEFAULT_MAX_ITERATIONS: u32 = 5;

#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub max_iterations: u32,
    pub policy: ConvergencePolicy,
    pub judge_a: LlmConfig,
    pub judge_b: LlmConfig,
}

impl EngineConfig {
    pub fn new(judge_a: LlmConfig, judge_b: LlmConfig) -> EngineConfig {
        EngineConfig {
            max_iterations: DEFAULT_MAX_ITERATIONS,
            policy: ConvergencePolicy::Strict,
            judge_a,
            judge_b,
        }
    }
}

/// One judge pass. Iteration 0 exists only for judge A's initial pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub role: EvaluatorRole,
    pub iteration: u32,
    pub parsed: ParsedTurn,
}

/// The full outcome of evaluating one item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionResult {
    pub item_id: String,
    pub model: String,
    pub mode: Mode,
    pub transcript: Vec<TurnRecord>,
    pub final_scores: ScoreVector,
    pub converged: bool,
    pub iterations_used: u32,
}

#[derive(Debug, thiserror::Error)]
pub enum EngineErrorKind {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("generation returned a blank response")]
    EmptyGeneration,
    #[error("item has no question to evaluate")]
    MissingQuestion,
}

/// An error tagged with the item and, when applicable, the judge turn that
/// produced it.
#[derive(Debug)]
pub struct EngineError {
    pub item_id: String,
    pub role: Option<EvaluatorRole>,
    pub iteration: Option<u32>,
    pub kind: EngineErrorKind,
}

impl fmt::Display for EngineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "item {}", self.item_id)?;
        if let Some(role) = self.role {
            write!(f, ", {role}")?;
        }
        if let Some(iteration) = self.iteration {
            write!(f, " at iteration {iteration}")?;
        }
        write!(f, ": {}", self.kind)
    }
}

impl std::error::Error for EngineError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.kind)
    }
}

fn session_error(item_id: &str, kind: impl Into<EngineErrorKind>) -> EngineError {
    EngineError {
        item_id: item_id.to_string(),
        role: None,
        iteration: None,
        kind: kind.into(),
    }
}

/// Fill `item.question` from the backend's response to the generation
/// prompt; the input item is left untouched.
pub fn generate_question(
    item: &QuestionItem,
    backend: &dyn Backend,
    config: &LlmConfig,
    prompts: &PromptSet,
) -> Result<QuestionItem, EngineError> {
    let err = |kind: EngineErrorKind| session_error(&item.id, kind);
    let prompt = prompts
        .build_generation_prompt(&item.context)
        .map_err(|e| err(e.into()))?;
    let outcome = llm::complete(backend, &CompletionRequest::new(prompt, config.clone()))
        .map_err(|e| err(e.into()))?;
    let question = outcome.text.trim();
    if question.is_empty() {
        return Err(err(EngineErrorKind::EmptyGeneration));
    }
    let mut filled = item.clone();
    filled.question = Some(question.to_string());
    Ok(filled)
}

fn run_judge_turn(
    item_id: &str,
    backend: &dyn Backend,
    config: &LlmConfig,
    prompt: String,
    role: EvaluatorRole,
    iteration: u32,
) -> Result<TurnRecord, EngineError> {
    let err = |kind: EngineErrorKind| EngineError {
        item_id: item_id.to_string(),
        role: Some(role),
        iteration: Some(iteration),
        kind,
    };
    let outcome = llm::complete(backend, &CompletionRequest::new(prompt, config.clone()))
        .map_err(|e| err(e.into()))?;
    let parsed = parse_turn(&outcome.text).map_err(|e| err(e.into()))?;
    Ok(TurnRecord {
        role,
        iteration,
        parsed,
    })
}

fn question_of(item: &QuestionItem) -> Result<&str, EngineError> {
    item.question
        .as_deref()
        .filter(|q| !q.trim().is_empty())
        .ok_or_else(|| session_error(&item.id, EngineErrorKind::MissingQuestion))
}

/// Single-pass evaluation: one prompt, one completion, one parse.
pub fn evaluate_direct(
    item: &QuestionItem,
    backend: &dyn Backend,
    config: &LlmConfig,
    prompts: &PromptSet,
) -> Result<SessionResult, EngineError> {
    let question = question_of(item)?;
    let prompt = prompts
        .build_direct_prompt(&item.context, question)
        .map_err(|e| session_error(&item.id, e))?;
    let turn = run_judge_turn(&item.id, backend, config, prompt, EvaluatorRole::JudgeA, 0)?;
    let final_scores = turn.parsed.scores;
    Ok(SessionResult {
        item_id: item.id.clone(),
        model: config.model_id.clone(),
        mode: Mode::Direct,
        transcript: vec![turn],
        final_scores,
        converged: true,
        iterations_used: 0,
    })
}

/// Iterative two-judge evaluation.
///
/// Judge A answers the direct prompt first (the initial strengths and flaws
/// sets are empty, so there is no feedback to pass). Each iteration then has
/// judge B and judge A answer feedback prompts in turn, always carrying the
/// critique from the immediately preceding turn.
pub fn evaluate_mirror(
    item: &QuestionItem,
    config: &EngineConfig,
    backend_a: &dyn Backend,
    backend_b: &dyn Backend,
    prompts: &PromptSet,
) -> Result<SessionResult, EngineError> {
    let question = question_of(item)?;
    let prompt_err = |e: PromptError| session_error(&item.id, e);

    let initial_prompt = prompts
        .build_direct_prompt(&item.context, question)
        .map_err(prompt_err)?;
    let initial = run_judge_turn(
        &item.id,
        backend_a,
        &config.judge_a,
        initial_prompt,
        EvaluatorRole::JudgeA,
        0,
    )?;

    let mut feedback = initial.parsed.critique.clone();
    let mut last_a_scores = initial.parsed.scores;
    let mut transcript = vec![initial];
    let mut previous_agreed = false;
    let mut converged = false;
    let mut iterations_used = 0;

    for iteration in 1..=config.max_iterations {
        let prompt_b = prompts
            .build_feedback_prompt(&item.context, question, &feedback.strengths, &feedback.flaws)
            .map_err(prompt_err)?;
        let turn_b = run_judge_turn(
            &item.id,
            backend_b,
            &config.judge_b,
            prompt_b,
            EvaluatorRole::JudgeB,
            iteration,
        )?;
        let b_scores = turn_b.parsed.scores;
        let b_critique = turn_b.parsed.critique.clone();
        transcript.push(turn_b);

        let prompt_a = prompts
            .build_feedback_prompt(
                &item.context,
                question,
                &b_critique.strengths,
                &b_critique.flaws,
            )
            .map_err(prompt_err)?;
        let turn_a = run_judge_turn(
            &item.id,
            backend_a,
            &config.judge_a,
            prompt_a,
            EvaluatorRole::JudgeA,
            iteration,
        )?;
        last_a_scores = turn_a.parsed.scores;
        feedback = turn_a.parsed.critique.clone();
        transcript.push(turn_a);

        let agreed = score_vectors_equal(&last_a_scores, &b_scores);
        iterations_used = iteration;
        let done = match config.policy {
            ConvergencePolicy::Simple => agreed,
            ConvergencePolicy::Strict => agreed && previous_agreed,
        };
        previous_agreed = agreed;
        if done {
            converged = true;
            break;
        }
    }

    Ok(SessionResult {
        item_id: item.id.clone(),
        model: config.judge_a.model_id.clone(),
        mode: Mode::Mirror,
        transcript,
        final_scores: last_a_scores,
        converged,
        iterations_used,
    })
}

/// Which backends a batch run drives; determines the session mode.
pub enum SessionBackends<'a> {
    Direct {
        judge: &'a dyn Backend,
    },
    Mirror {
        judge_a: &'a dyn Backend,
        judge_b: &'a dyn Backend,
    },
}

impl SessionBackends<'_> {
    pub fn mode(&self) -> Mode {
        match self {
            SessionBackends::Direct { .. } => Mode::Direct,
            SessionBackends::Mirror { .. } => Mode::Mirror,
        }
    }
}

/// One batch slot: the item and either its session result or the error that
/// stopped it.
#[derive(Debug)]
pub struct BatchEntry {
    pub item_id: String,
    pub outcome: Result<SessionResult, EngineError>,
}

/// Evaluate every item with at most `parallelism` sessions in flight.
///
/// Results come back in input order regardless of completion order, and a
/// failing item never aborts the rest of the batch.
pub fn run_batch(
    items: &[QuestionItem],
    config: &EngineConfig,
    backends: &SessionBackends<'_>,
    prompts: &PromptSet,
    parallelism: usize,
) -> Vec<BatchEntry> {
    let workers = parallelism.max(1).min(items.len().max(1));
    let slots: Vec<OnceLock<BatchEntry>> = (0..items.len()).map(|_| OnceLock::new()).collect();
    let next = AtomicUsize::new(0);

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let index = next.fetch_add(1, Ordering::SeqCst);
                let Some(item) = items.get(index) else {
                    return;
                };
                let outcome = match backends {
                    SessionBackends::Direct { judge } => {
                        evaluate_direct(item, *judge, &config.judge_a, prompts)
                    }
                    SessionBackends::Mirror { judge_a, judge_b } => {
                        evaluate_mirror(item, config, *judge_a, *judge_b, prompts)
                    }
                };
                let entry = BatchEntry {
                    item_id: item.id.clone(),
                    outcome,
                };
                slots[index].set(entry).expect("each slot filled once");
            });
        }
    });

    slots
        .into_iter()
        .map(|slot| slot.into_inner().expect("all slots filled"))
        .collect()
}

/// One line of a results file: a session or the error that replaced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ResultRecord {
    Ok(SessionResult),
    Error { item_id: String, error: String },
}

impl ResultRecord {
    pub fn item_id(&self) -> &str {
        match self {
            ResultRecord::Ok(result) => &result.item_id,
            ResultRecord::Error { item_id, .. } => item_id,
        }
    }

    pub fn session(&self) -> Option<&SessionResult> {
        match self {
            ResultRecord::Ok(result) => Some(result),
            ResultRecord::Error { .. } => None,
        }
    }
}

pub fn batch_to_records(entries: &[BatchEntry], include_raw: bool) -> Vec<ResultRecord> {
    entries
        .iter()
        .map(|entry| match &entry.outcome {
            Ok(result) => {
                let mut result = result.clone();
                if !include_raw {
                    for turn in &mut result.transcript {
                        turn.parsed.raw_text.clear();
                    }
                }
                ResultRecord::Ok(result)
            }
            Err(e) => ResultRecord::Error {
                item_id: entry.item_id.clone(),
                error: e.to_string(),
            },
        })
        .collect()
}

/// Write one record per line.
pub fn write_results(path: &Path, records: &[ResultRecord]) -> std::io::Result<()> {
    let mut out = File::create(path)?;
    for record in records {
        writeln!(out, "{}", serde_json::to_string(record).expect("record serializes"))?;
    }
    Ok(())
}

pub fn read_results(path: &Path) -> std::io::Result<Vec<ResultRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        records.push(record);
    }
    Ok(records)
}
