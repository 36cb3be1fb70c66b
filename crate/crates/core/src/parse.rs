//! Rule-based pattern matching that recovers scores and critiques from
//! free-text judge output.
//!
//! Score lines are matched per metric with a first-match-wins policy: judge
//! transcripts put the score block before the discussion, so the first line
//! shaped like `Metric: X/5` carries the score and later prose mentions of
//! the metric are ignored. A bare number with no `/5` counts only when the
//! line starts with the metric name, which keeps years and percentages in
//! prose from being captured.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::metrics::{round_to_half, MetricKind, ScoreVector};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ParseError {
    #[error("no score line found for {0}")]
    MissingMetric(MetricKind),
    #[error("conflicting scores for {0} on one line")]
    AmbiguousScore(MetricKind),
    #[error("{metric} score out of range: {value}")]
    OutOfRange { metric: MetricKind, value: f64 },
    #[error("no strengths/flaws sections or per-metric critique lines found")]
    NoCritiqueFound,
}

/// Strengths and flaws extracted from one judge turn, in output order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Critique {
    pub strengths: Vec<String>,
    pub flaws: Vec<String>,
}

/// One fully parsed judge pass: the scores, the critique, and the verbatim
/// text they came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedTurn {
    pub scores: ScoreVector,
    pub critique: Critique,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub raw_text: String,
}

// Decorations (bullets, emphasis, enumerators), metric name, optional colon,
// number, optional "/5" or "out of 5".
fn score_line_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"(?i)^[\s*_`#>•+-]*(?:\d+[.)][\s*_`]*)?(grammaticality|appropriateness|relevance|novelty|complexity)[\s*_`]*:?[\s*_`]*([0-9]+(?:\.[0-9]+)?)\s*(?:/\s*5|out\s+of\s+5)?",
        )
        .unwrap()
    })
}

// A score-shaped token anywhere in a line; used to detect conflicts after an
// accepted match.
fn conflict_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)([0-9]+(?:\.[0-9]+)?)\s*(?:/\s*5|out\s+of\s+5)").unwrap())
}

/// Recover the five scores from judge output.
///
/// For each metric, the first line matching the score-line grammar wins; a
/// second score-shaped token with a different value on that same line is an
/// error. Values are quantized to the half-point scale.
pub fn extract_scores(text: &str) -> Result<ScoreVector, ParseError> {
    let mut found: BTreeMap<MetricKind, crate::metrics::Score> = BTreeMap::new();
    for line in text.lines() {
        let Some(cap) = score_line_re().captures(line) else {
            continue;
        };
        let metric: MetricKind = cap[1].to_lowercase().parse().expect("alternation is exact");
        if found.contains_key(&metric) {
            continue;
        }
        let value: f64 = cap[2].parse().expect("regex yields a decimal");
        let rest = &line[cap.get(0).unwrap().end()..];
        for conflict in conflict_re().captures_iter(rest) {
            let other: f64 = conflict[1].parse().expect("regex yields a decimal");
            if other != value {
                return Err(ParseError::AmbiguousScore(metric));
            }
        }
        let score =
            round_to_half(value).map_err(|_| ParseError::OutOfRange { metric, value })?;
        found.insert(metric, score);
    }
    ScoreVector::try_from_fn(|metric| {
        found
            .get(&metric)
            .copied()
            .ok_or(ParseError::MissingMetric(metric))
    })
}

#[derive(PartialEq, Clone, Copy)]
enum Section {
    Strengths,
    Flaws,
}

fn heading_of(line: &str) -> Option<Section> {
    let lower = line.to_lowercase();
    if lower.contains("strengths in the question") {
        Some(Section::Strengths)
    } else if lower.contains("flaws in the question") {
        Some(Section::Flaws)
    } else {
        None
    }
}

// Per-metric rationale lines like "Strengths: The question is clear."
fn inline_critique_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)^[\s*_`#>•+-]*(strengths|flaws)[\s*_`]*:\s*(.*)$").unwrap()
    })
}

fn normalize_item(line: &str) -> Option<String> {
    static BULLET: OnceLock<Regex> = OnceLock::new();
    let bullet = BULLET.get_or_init(|| Regex::new(r"^[\s*_`>•+-]*(?:\d+[.)]\s+)?").unwrap());
    let stripped = bullet.replace(line, "");
    let collapsed = stripped.split_whitespace().collect::<Vec<_>>().join(" ");
    if collapsed.is_empty() {
        return None;
    }
    let lowered = collapsed.to_lowercase();
    if lowered == "none" || lowered == "none." || lowered == "(none)" {
        return None;
    }
    Some(collapsed)
}

/// Recover the strengths and flaws sets from judge output.
///
/// The summary sections headed "Strengths in the question ..." / "Flaws in
/// the question ..." are authoritative when present; otherwise every
/// per-metric "Strengths:" / "Flaws:" line body is collected. Items are
/// trimmed of bullets, whitespace-collapsed, and dropped when they amount
/// to "None".
pub fn extract_critique(text: &str) -> Result<Critique, ParseError> {
    let has_headings = text.lines().any(|l| heading_of(l).is_some());
    let mut critique = Critique::default();

    if has_headings {
        let mut current: Option<Section> = None;
        for line in text.lines() {
            if let Some(section) = heading_of(line) {
                current = Some(section);
                continue;
            }
            let Some(section) = current else { continue };
            let Some(item) = normalize_item(line) else {
                continue;
            };
            match section {
                Section::Strengths => critique.strengths.push(item),
                Section::Flaws => critique.flaws.push(item),
            }
        }
        return Ok(critique);
    }

    let mut saw_inline = false;
    for line in text.lines() {
        let Some(cap) = inline_critique_re().captures(line) else {
            continue;
        };
        saw_inline = true;
        let Some(item) = normalize_item(&cap[2]) else {
            continue;
        };
        if cap[1].eq_ignore_ascii_case("strengths") {
            critique.strengths.push(item);
        } else {
            critique.flaws.push(item);
        }
    }
    if !saw_inline {
        return Err(ParseError::NoCritiqueFound);
    }
    Ok(critique)
}

/// Run both extractors over one judge output, keeping the raw text verbatim.
pub fn parse_turn(text: &str) -> Result<ParsedTurn, ParseError> {
    Ok(ParsedTurn {
        scores: extract_scores(text)?,
        critique: extract_critique(text)?,
        raw_text: text.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::Score;
    use proptest::prelude::*;

    const ECONOMICS_A: &str = include_str!("../assets/transcripts/economics_judge_a.txt");
    const HISTORY_A: &str = include_str!("../assets/transcripts/history_judge_a.txt");
    const BIOLOGY_A: &str = include_str!("../assets/transcripts/biology_judge_a.txt");
    const EARTH_A: &str = include_str!("../assets/transcripts/earth_science_judge_a.txt");

    fn vector(vals: [f64; 5]) -> ScoreVector {
        ScoreVector::new(vals.map(|v| Score::from_f64(v).unwrap()))
    }

    #[test]
    fn economics_transcript_scores() {
        let scores = extract_scores(ECONOMICS_A).unwrap();
        assert_eq!(scores, vector([5.0, 4.5, 5.0, 2.5, 2.0]));
    }

    #[test]
    fn history_transcript_scores() {
        let scores = extract_scores(HISTORY_A).unwrap();
        assert_eq!(scores, vector([3.5, 4.5, 5.0, 3.5, 4.0]));
    }

    #[test]
    fn earth_science_transcript_scores() {
        let scores = extract_scores(EARTH_A).unwrap();
        assert_eq!(scores, vector([5.0, 5.0, 4.0, 2.0, 2.0]));
    }

    #[test]
    fn economics_transcript_critique() {
        let critique = extract_critique(ECONOMICS_A).unwrap();
        assert_eq!(critique.strengths.len(), 3);
        assert!(critique.strengths[0].starts_with("Grammatical Correctness"));
        assert_eq!(critique.flaws.len(), 2);
        assert!(critique.flaws[0].starts_with("Complexity"));
    }

    #[test]
    fn biology_transcript_parses_fully() {
        let turn = parse_turn(BIOLOGY_A).unwrap();
        assert_eq!(turn.scores, vector([5.0, 5.0, 5.0, 4.0, 3.0]));
        assert!(!turn.critique.strengths.is_empty());
        assert_eq!(turn.raw_text, BIOLOGY_A);
    }

    #[test]
    fn empty_text_reports_grammaticality_first() {
        assert_eq!(
            extract_scores(""),
            Err(ParseError::MissingMetric(MetricKind::Grammaticality))
        );
    }

    #[test]
    fn out_of_range_scores_are_errors_not_clamped() {
        let text = "Grammaticality: 7/5\nAppropriateness: 5/5\nRelevance: 5/5\nNovelty: 5/5\nComplexity: 5/5";
        assert_eq!(
            extract_scores(text),
            Err(ParseError::OutOfRange {
                metric: MetricKind::Grammaticality,
                value: 7.0
            })
        );
    }

    #[test]
    fn conflicting_scores_on_one_line_are_ambiguous() {
        let text = "Grammaticality: 4/5 or 5/5\nAppropriateness: 5/5\nRelevance: 5/5\nNovelty: 5/5\nComplexity: 5/5";
        assert_eq!(
            extract_scores(text),
            Err(ParseError::AmbiguousScore(MetricKind::Grammaticality))
        );
        // a repeated identical token is not a conflict
        let text = "Grammaticality: 4/5 (4 out of 5)\nAppropriateness: 5/5\nRelevance: 5/5\nNovelty: 5/5\nComplexity: 5/5";
        assert!(extract_scores(text).is_ok());
    }

    #[test]
    fn first_match_wins_across_lines() {
        let text = "Relevance: 4/5\nlater prose\nRelevance: 2/5\nGrammaticality: 5/5\nAppropriateness: 5/5\nNovelty: 5/5\nComplexity: 5/5";
        let scores = extract_scores(text).unwrap();
        assert_eq!(scores.get(MetricKind::Relevance).value(), 4.0);
    }

    #[test]
    fn bare_numbers_in_prose_are_ignored() {
        let text = "In 1947 the country changed.\nGrammaticality: 5\nAppropriateness: 4.5\nRelevance: 5\nNovelty: 3\nComplexity: 2 out of 5";
        let scores = extract_scores(text).unwrap();
        assert_eq!(scores.get(MetricKind::Grammaticality).value(), 5.0);
        assert_eq!(scores.get(MetricKind::Complexity).value(), 2.0);
    }

    #[test]
    fn non_half_values_are_quantized() {
        let text = "Grammaticality: 4.7/5\nAppropriateness: 4.75/5\nRelevance: 5/5\nNovelty: 3/5\nComplexity: 2/5";
        let scores = extract_scores(text).unwrap();
        assert_eq!(scores.get(MetricKind::Grammaticality).value(), 4.5);
        assert_eq!(scores.get(MetricKind::Appropriateness).value(), 5.0);
    }

    #[test]
    fn inline_fallback_and_none_filter() {
        let text = "Strengths: The question is clear.\nFlaws: None.";
        let critique = extract_critique(text).unwrap();
        assert_eq!(critique.strengths, vec!["The question is clear."]);
        assert!(critique.flaws.is_empty());
    }

    #[test]
    fn missing_critique_is_an_error() {
        assert_eq!(
            extract_critique("Grammaticality: 5/5"),
            Err(ParseError::NoCritiqueFound)
        );
    }

    #[test]
    fn summary_sections_win_over_inline_lines() {
        let text = "\
Strengths: per-metric strength.
Flaws: per-metric flaw.

Strengths in the question:
- summary strength

Flaws in the question:
- summary flaw
";
        let critique = extract_critique(text).unwrap();
        assert_eq!(critique.strengths, vec!["summary strength"]);
        assert_eq!(critique.flaws, vec!["summary flaw"]);
    }

    #[test]
    fn parsing_is_pure() {
        assert_eq!(parse_turn(ECONOMICS_A), parse_turn(ECONOMICS_A));
    }

    fn decorate(bullet: &str, open: &str, name: String, close: &str, sep: &str, tail: &str) -> String {
        format!("{bullet}{open}{name}{close}{sep}{tail}")
    }

    proptest! {
        #[test]
        fn scores_survive_random_decorations(
            bullet in prop::sample::select(vec!["", "- ", "* ", "  • ", "> ", "1. ", "### "]),
            emphasis in prop::sample::select(vec![("", ""), ("**", "**"), ("*", "*"), ("_", "_"), ("`", "`")]),
            casing in prop::sample::select(vec!["lower", "upper", "as-is"]),
            sep in prop::sample::select(vec![": ", " : ", ":", " "]),
            suffix in prop::sample::select(vec!["/5", " / 5", " out of 5", ""]),
        ) {
            let values = [5.0, 4.5, 5.0, 2.5, 2.0];
            let mut lines = Vec::new();
            for (metric, value) in MetricKind::ALL.into_iter().zip(values) {
                let name = match casing {
                    "lower" => metric.display_name().to_lowercase(),
                    "upper" => metric.display_name().to_uppercase(),
                    _ => metric.display_name().to_string(),
                };
                let tail = format!("{value}{suffix}");
                lines.push(decorate(bullet, emphasis.0, name, emphasis.1, sep, &tail));
            }
            let text = lines.join("\n");
            let scores = extract_scores(&text).unwrap();
            prop_assert_eq!(scores, vector(values));
        }

        #[test]
        fn critique_items_carry_no_bullets_or_edge_whitespace(
            texts in prop::sample::select(vec![ECONOMICS_A, HISTORY_A, BIOLOGY_A, EARTH_A]),
        ) {
            let critique = extract_critique(texts).unwrap();
            for item in critique.strengths.iter().chain(&critique.flaws) {
                prop_assert_eq!(item.trim(), item.as_str());
                prop_assert!(!item.starts_with(['-', '*', '•', '>']));
                prop_assert!(!item.contains("  "));
            }
        }
    }
}
