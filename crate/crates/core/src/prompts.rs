//! The three prompt texts: question generation, direct evaluation, and
//! feedback-based evaluation.
//!
//! Templates are embedded constants with `{placeholder}` slots; an override
//! directory may supply replacement files honoring the same placeholder
//! contract. Building a prompt is pure: identical inputs yield byte-identical
//! text.

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;

use crate::metrics::metric_definitions;

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("context is empty")]
    EmptyContext,
    #[error("question is empty")]
    EmptyQuestion,
    #[error("template {template}: unknown placeholder {{{name}}}")]
    UnknownPlaceholder { template: TemplateName, name: String },
    #[error("template {template}: placeholder {{{name}}} does not apply to this template")]
    UnexpectedPlaceholder { template: TemplateName, name: String },
    #[error("template {template}: required placeholder {{{name}}} must appear exactly once, found {count}")]
    PlaceholderCount {
        template: TemplateName,
        name: String,
        count: usize,
    },
    #[error("failed to read template {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TemplateName {
    Generation,
    DirectEval,
    FeedbackEval,
}

impl TemplateName {
    pub fn as_str(self) -> &'static str {
        match self {
            TemplateName::Generation => "generation",
            TemplateName::DirectEval => "direct_eval",
            TemplateName::FeedbackEval => "feedback_eval",
        }
    }

    fn required_placeholders(self) -> &'static [&'static str] {
        match self {
            TemplateName::Generation => &["context"],
            TemplateName::DirectEval => &["context", "question", "metric_definitions"],
            TemplateName::FeedbackEval => &[
                "context",
                "question",
                "metric_definitions",
                "strengths",
                "flaws",
            ],
        }
    }
}

impl std::fmt::Display for TemplateName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

const ALL_PLACEHOLDERS: [&str; 5] = [
    "context",
    "question",
    "metric_definitions",
    "strengths",
    "flaws",
];

const GENERATION_TEMPLATE: &str = "\
Read the context below and write exactly one open-ended question that a learner could answer from this context alone.

Reply with the question itself on a single line, with no numbering, preamble, or commentary.

Context:
{context}
";

const SCORING_INSTRUCTIONS: &str = "\
Score every metric on the 1 to 5 scale; half points such as 3.5 are allowed. Begin your reply with one line per metric in exactly this form, with no other text on those lines:

Grammaticality: X/5
Appropriateness: X/5
Relevance: X/5
Novelty: X/5
Complexity: X/5

After the score lines, explain each score with a short \"Strengths:\" line and a short \"Flaws:\" line (write \"None.\" when there is nothing to report). End with two summary sections, one headed \"Strengths in the Question:\" and one headed \"Flaws in the Question:\", each listing one item per line.
";

const EVAL_PREAMBLE: &str = "\
You are an expert reviewer of automatically generated study questions. Evaluate the question below against its source context.

Evaluation metrics:
{metric_definitions}

Context:
{context}

Question:
{question}
";

const FEEDBACK_BLOCK: &str = "\
Another reviewer has already assessed this question. Reconsider every score in light of their feedback before scoring.

Prior strengths:
{strengths}

Prior flaws:
{flaws}
";

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{([a-z_]+)\}").unwrap())
}

/// A named template body whose placeholders have been validated against the
/// template's contract.
#[derive(Debug, Clone)]
pub struct PromptTemplate {
    pub name: TemplateName,
    body: String,
}

impl PromptTemplate {
    pub fn new(name: TemplateName, body: impl Into<String>) -> Result<Self, PromptError> {
        let body = body.into();
        let mut counts: std::collections::BTreeMap<&str, usize> = Default::default();
        for cap in placeholder_re().captures_iter(&body) {
            let found = cap.get(1).unwrap().as_str();
            let canonical = ALL_PLACEHOLDERS.iter().find(|p| **p == found);
            match canonical {
                Some(p) => *counts.entry(p).or_default() += 1,
                None => {
                    return Err(PromptError::UnknownPlaceholder {
                        template: name,
                        name: found.to_string(),
                    })
                }
            }
        }
        let required: BTreeSet<&str> = name.required_placeholders().iter().copied().collect();
        for (&p, &count) in &counts {
            if !required.contains(p) {
                return Err(PromptError::UnexpectedPlaceholder {
                    template: name,
                    name: p.to_string(),
                });
            }
            if count != 1 {
                return Err(PromptError::PlaceholderCount {
                    template: name,
                    name: p.to_string(),
                    count,
                });
            }
        }
        for &p in &required {
            if !counts.contains_key(p) {
                return Err(PromptError::PlaceholderCount {
                    template: name,
                    name: p.to_string(),
                    count: 0,
                });
            }
        }
        Ok(PromptTemplate { name, body })
    }

    pub fn body(&self) -> &str {
        &self.body
    }

    // Single left-to-right pass; substituted values are never rescanned, so a
    // context containing "{question}" stays literal.
    fn render(&self, lookup: impl Fn(&str) -> String) -> String {
        let mut out = String::with_capacity(self.body.len());
        let mut last = 0;
        for cap in placeholder_re().captures_iter(&self.body) {
            let whole = cap.get(0).unwrap();
            out.push_str(&self.body[last..whole.start()]);
            out.push_str(&lookup(cap.get(1).unwrap().as_str()));
            last = whole.end();
        }
        out.push_str(&self.body[last..]);
        out
    }
}

/// The validated generation, direct, and feedback templates used by a run.
#[derive(Debug, Clone)]
pub struct PromptSet {
    generation: PromptTemplate,
    direct_eval: PromptTemplate,
    feedback_eval: PromptTemplate,
}

impl PromptSet {
    /// The embedded templates.
    pub fn builtin() -> PromptSet {
        let direct_body = format!("{EVAL_PREAMBLE}\n{SCORING_INSTRUCTIONS}");
        let feedback_body = format!("{EVAL_PREAMBLE}\n{FEEDBACK_BLOCK}\n{SCORING_INSTRUCTIONS}");
        PromptSet {
            generation: PromptTemplate::new(TemplateName::Generation, GENERATION_TEMPLATE)
                .expect("builtin generation template is valid"),
            direct_eval: PromptTemplate::new(TemplateName::DirectEval, direct_body)
                .expect("builtin direct template is valid"),
            feedback_eval: PromptTemplate::new(TemplateName::FeedbackEval, feedback_body)
                .expect("builtin feedback template is valid"),
        }
    }

    /// Builtin templates with any of `generation.txt`, `direct_eval.txt`,
    /// `feedback_eval.txt` replaced by files from `dir`. Replacements are
    /// validated on load.
    pub fn from_dir(dir: &Path) -> Result<PromptSet, PromptError> {
        let mut set = PromptSet::builtin();
        for (name, slot) in [
            (TemplateName::Generation, &mut set.generation),
            (TemplateName::DirectEval, &mut set.direct_eval),
            (TemplateName::FeedbackEval, &mut set.feedback_eval),
        ] {
            let path = dir.join(format!("{}.txt", name.as_str()));
            if path.exists() {
                let body = std::fs::read_to_string(&path).map_err(|e| PromptError::Io {
                    path: path.display().to_string(),
                    source: e,
                })?;
                *slot = PromptTemplate::new(name, body)?;
            }
        }
        Ok(set)
    }

    /// Prompt asking the generator model for exactly one open-ended question.
    pub fn build_generation_prompt(&self, context: &str) -> Result<String, PromptError> {
        if context.trim().is_empty() {
            return Err(PromptError::EmptyContext);
        }
        Ok(self.generation.render(|name| match name {
            "context" => context.to_string(),
            _ => unreachable!("validated template"),
        }))
    }

    /// Single-pass evaluation prompt: metric definitions, context, question,
    /// and the machine-parsable output format.
    pub fn build_direct_prompt(
        &self,
        context: &str,
        question: &str,
    ) -> Result<String, PromptError> {
        check_pair(context, question)?;
        Ok(self.direct_eval.render(|name| match name {
            "context" => context.to_string(),
            "question" => question.to_string(),
            "metric_definitions" => definitions_block(),
            _ => unreachable!("validated template"),
        }))
    }

    /// Evaluation prompt carrying the previous reviewer's strengths and flaws.
    /// Items are passed verbatim apart from whitespace normalization; empty
    /// lists render an explicit "(none)" marker.
    pub fn build_feedback_prompt(
        &self,
        context: &str,
        question: &str,
        strengths: &[String],
        flaws: &[String],
    ) -> Result<String, PromptError> {
        check_pair(context, question)?;
        Ok(self.feedback_eval.render(|name| match name {
            "context" => context.to_string(),
            "question" => question.to_string(),
            "metric_definitions" => definitions_block(),
            "strengths" => bullet_list(strengths),
            "flaws" => bullet_list(flaws),
            _ => unreachable!("validated template"),
        }))
    }
}

fn check_pair(context: &str, question: &str) -> Result<(), PromptError> {
    if context.trim().is_empty() {
        return Err(PromptError::EmptyContext);
    }
    if question.trim().is_empty() {
        return Err(PromptError::EmptyQuestion);
    }
    Ok(())
}

/// The shared metric-definition block, one `- Name: definition` line per
/// metric.
pub fn definitions_block() -> String {
    metric_definitions()
        .iter()
        .map(|(metric, text)| format!("- {}: {}", metric.display_name(), text))
        .collect::<Vec<_>>()
        .join("\n")
}

fn bullet_list(items: &[String]) -> String {
    if items.is_empty() {
        return "(none)".to_string();
    }
    items
        .iter()
        .map(|item| format!("- {}", single_line(item)))
        .collect::<Vec<_>>()
        .join("\n")
}

fn single_line(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::MetricKind;

    #[test]
    fn generation_prompt_embeds_context() {
        let set = PromptSet::builtin();
        let ctx = "Purchasing power parity (PPP) is an economic indicator.";
        let prompt = set.build_generation_prompt(ctx).unwrap();
        assert!(prompt.contains(ctx));
        assert!(prompt.contains("exactly one open-ended question"));
        assert!(matches!(
            set.build_generation_prompt("  "),
            Err(PromptError::EmptyContext)
        ));
    }

    #[test]
    fn generation_prompts_differ_only_in_context() {
        let set = PromptSet::builtin();
        let a = set.build_generation_prompt("context alpha").unwrap();
        let b = set.build_generation_prompt("context beta").unwrap();
        assert_eq!(
            a.replace("context alpha", "<SLOT>"),
            b.replace("context beta", "<SLOT>")
        );
    }

    #[test]
    fn direct_prompt_contains_all_parts() {
        let set = PromptSet::builtin();
        let prompt = set
            .build_direct_prompt("ctx body", "What is PPP?")
            .unwrap();
        for metric in MetricKind::ALL {
            assert!(prompt.contains(metric.display_name()), "{metric}");
        }
        assert!(prompt.contains("ctx body"));
        assert!(prompt.contains("What is PPP?"));
        assert!(prompt.contains("X/5"));
        assert!(prompt.contains("Strengths in the Question"));
        assert!(prompt.contains("Flaws in the Question"));
        assert!(matches!(
            set.build_direct_prompt("ctx", ""),
            Err(PromptError::EmptyQuestion)
        ));
        assert!(matches!(
            set.build_direct_prompt("", "q"),
            Err(PromptError::EmptyContext)
        ));
    }

    #[test]
    fn feedback_prompt_lists_items_or_none_markers() {
        let set = PromptSet::builtin();
        let prompt = set
            .build_feedback_prompt(
                "ctx",
                "q?",
                &["well-formed".into()],
                &["too simple".into()],
            )
            .unwrap();
        assert!(prompt.contains("Prior strengths:\n- well-formed"));
        assert!(prompt.contains("Prior flaws:\n- too simple"));

        let empty = set.build_feedback_prompt("ctx", "q?", &[], &[]).unwrap();
        assert!(empty.contains("Prior strengths:\n(none)"));
        assert!(empty.contains("Prior flaws:\n(none)"));
    }

    #[test]
    fn feedback_items_are_normalized_to_one_line() {
        let set = PromptSet::builtin();
        let prompt = set
            .build_feedback_prompt("ctx", "q?", &["spans\ntwo  lines".into()], &[])
            .unwrap();
        assert!(prompt.contains("- spans two lines"));
    }

    #[test]
    fn direct_and_feedback_share_the_definition_block() {
        let set = PromptSet::builtin();
        let block = definitions_block();
        assert!(set.build_direct_prompt("c", "q").unwrap().contains(&block));
        assert!(set
            .build_feedback_prompt("c", "q", &[], &[])
            .unwrap()
            .contains(&block));
    }

    #[test]
    fn building_is_deterministic() {
        let set = PromptSet::builtin();
        let a = set.build_feedback_prompt("c", "q", &["x".into()], &[]).unwrap();
        let b = set.build_feedback_prompt("c", "q", &["x".into()], &[]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn substituted_values_are_not_rescanned() {
        let set = PromptSet::builtin();
        let prompt = set
            .build_direct_prompt("context holding a literal {question} token", "q?")
            .unwrap();
        assert!(prompt.contains("a literal {question} token"));
    }

    #[test]
    fn template_validation_rejects_bad_bodies() {
        assert!(matches!(
            PromptTemplate::new(TemplateName::Generation, "no slot at all"),
            Err(PromptError::PlaceholderCount { count: 0, .. })
        ));
        assert!(matches!(
            PromptTemplate::new(TemplateName::Generation, "{context} and {context}"),
            Err(PromptError::PlaceholderCount { count: 2, .. })
        ));
        assert!(matches!(
            PromptTemplate::new(TemplateName::Generation, "{context} {typo}"),
            Err(PromptError::UnknownPlaceholder { .. })
        ));
        assert!(matches!(
            PromptTemplate::new(TemplateName::Generation, "{context} {flaws}"),
            Err(PromptError::UnexpectedPlaceholder { .. })
        ));
    }

    #[test]
    fn override_directory_replaces_templates() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("generation.txt"),
            "Custom ask.\n\n{context}\n",
        )
        .unwrap();
        let set = PromptSet::from_dir(dir.path()).unwrap();
        let prompt = set.build_generation_prompt("the ctx").unwrap();
        assert!(prompt.starts_with("Custom ask."));
        assert!(prompt.contains("the ctx"));
        // untouched templates fall back to the builtins
        assert!(set.build_direct_prompt("c", "q").unwrap().contains("X/5"));

        std::fs::write(dir.path().join("direct_eval.txt"), "{context} only").unwrap();
        assert!(PromptSet::from_dir(dir.path()).is_err());
    }
}
