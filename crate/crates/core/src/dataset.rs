//! Line-delimited dataset files: question items, human annotations, and
//! deterministic sampling.

use std::collections::BTreeMap;
use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::metrics::{MetricKind, MetricsError, Score, ScoreVector};

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("file not found: {0}")]
    FileNotFound(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed record: {reason}")]
    MalformedRecord {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("{path}:{line}: duplicate item id {id:?}")]
    DuplicateId {
        path: String,
        line: usize,
        id: String,
    },
    #[error("{path}:{line}: item {id:?} has an empty context")]
    MissingContext {
        path: String,
        line: usize,
        id: String,
    },
    #[error("{path}:{line}: duplicate annotation for item {item_id:?} by {annotator_id:?}")]
    DuplicateAnnotation {
        path: String,
        line: usize,
        item_id: String,
        annotator_id: String,
    },
    #[error("{path}:{line}: {metric} score out of range: {value}")]
    OutOfRange {
        path: String,
        line: usize,
        metric: MetricKind,
        value: f64,
    },
}

/// A <context, question> pair with provenance. `question` is absent before
/// generation; `gold_question` is the dataset's reference question when one
/// exists.
///
/// Unknown fields are preserved on read and written back untouched.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionItem {
    pub id: String,
    pub dataset: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject: Option<String>,
    pub context: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_question: Option<String>,
    #[serde(flatten)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

/// One human annotator's scores for one item.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnnotationRecord {
    pub item_id: String,
    pub annotator_id: String,
    pub scores: ScoreVector,
}

fn open(path: &Path) -> Result<BufReader<File>, DatasetError> {
    match File::open(path) {
        Ok(f) => Ok(BufReader::new(f)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            Err(DatasetError::FileNotFound(path.display().to_string()))
        }
        Err(e) => Err(DatasetError::Io {
            path: path.display().to_string(),
            source: e,
        }),
    }
}

/// Read every line of a JSONL item file, preserving order and validating
/// id uniqueness and nonempty contexts. Blank lines are skipped.
pub fn load_items(path: &Path) -> Result<Vec<QuestionItem>, DatasetError> {
    let reader = open(path)?;
    let display = path.display().to_string();
    let mut items = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| DatasetError::Io {
            path: display.clone(),
            source: e,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let item: QuestionItem =
            serde_json::from_str(&line).map_err(|e| DatasetError::MalformedRecord {
                path: display.clone(),
                line: line_no,
                reason: e.to_string(),
            })?;
        if item.id.trim().is_empty() {
            return Err(DatasetError::MalformedRecord {
                path: display,
                line: line_no,
                reason: "empty id".into(),
            });
        }
        if !seen.insert(item.id.clone()) {
            return Err(DatasetError::DuplicateId {
                path: display,
                line: line_no,
                id: item.id,
            });
        }
        if item.context.trim().is_empty() {
            return Err(DatasetError::MissingContext {
                path: display,
                line: line_no,
                id: item.id,
            });
        }
        items.push(item);
    }
    Ok(items)
}

/// Write items as JSONL, one object per line.
pub fn write_items(path: &Path, items: &[QuestionItem]) -> Result<(), DatasetError> {
    let io_err = |e| DatasetError::Io {
        path: path.display().to_string(),
        source: e,
    };
    let mut out = File::create(path).map_err(io_err)?;
    for item in items {
        let line = serde_json::to_string(item).expect("item serializes");
        writeln!(out, "{line}").map_err(io_err)?;
    }
    Ok(())
}

// Raw shape for annotation lines; scores validated by hand so errors carry
// the metric name and line number.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAnnotation {
    item_id: String,
    annotator_id: String,
    scores: BTreeMap<String, f64>,
}

/// Read a JSONL annotation file. Scores must already lie on the half-point
/// scale; integer and half-point values are both accepted.
pub fn load_annotations(path: &Path) -> Result<Vec<AnnotationRecord>, DatasetError> {
    let reader = open(path)?;
    let display = path.display().to_string();
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| DatasetError::Io {
            path: display.clone(),
            source: e,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |reason: String| DatasetError::MalformedRecord {
            path: display.clone(),
            line: line_no,
            reason,
        };
        let raw: RawAnnotation = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        for key in raw.scores.keys() {
            if key.parse::<MetricKind>().is_err() {
                return Err(malformed(format!("unknown metric key {key:?}")));
            }
        }
        let scores = ScoreVector::try_from_fn(|metric| {
            let value = *raw
                .scores
                .get(metric.as_str())
                .ok_or_else(|| malformed(format!("missing {} score", metric)))?;
            Score::from_f64(value).map_err(|e| match e {
                MetricsError::OutOfRange(v) => DatasetError::OutOfRange {
                    path: display.clone(),
                    line: line_no,
                    metric,
                    value: v,
                },
                other => malformed(format!("{} score: {}", metric, other)),
            })
        })?;
        if !seen.insert((raw.item_id.clone(), raw.annotator_id.clone())) {
            return Err(DatasetError::DuplicateAnnotation {
                path: display,
                line: line_no,
                item_id: raw.item_id,
                annotator_id: raw.annotator_id,
            });
        }
        records.push(AnnotationRecord {
            item_id: raw.item_id,
            annotator_id: raw.annotator_id,
            scores,
        });
    }
    Ok(records)
}

/// Deterministic sample of `n` items without replacement.
///
/// Uses a ChaCha8 generator seeded with `seed` driving a partial
/// Fisher-Yates shuffle over the item indices; the selected items are
/// returned in their original file order. When `n >= items.len()` the whole
/// list is returned unchanged.
pub fn sample_items(items: &[QuestionItem], n: usize, seed: u64) -> Vec<QuestionItem> {
    if n >= items.len() {
        return items.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices: Vec<usize> = (0..items.len()).collect();
    for i in 0..n {
        let j = rng.random_range(i..indices.len());
        indices.swap(i, j);
    }
    let mut chosen: Vec<usize> = indices[..n].to_vec();
    chosen.sort_unstable();
    chosen.into_iter().map(|i| items[i].clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write as _;

    fn item(id: &str, context: &str) -> QuestionItem {
        QuestionItem {
            id: id.into(),
            dataset: "eduprobe".into(),
            subject: Some("Economics".into()),
            context: context.into(),
            question: None,
            gold_question: None,
            extra: serde_json::Map::new(),
        }
    }

    fn write_lines(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for line in lines {
            writeln!(f, "{line}").unwrap();
        }
        f
    }

    #[test]
    fn load_items_preserves_order() {
        let f = write_lines(&[
            r#"{"id":"q1","dataset":"eduprobe","context":"first"}"#,
            r#"{"id":"q2","dataset":"sciq","context":"second","question":"Why?"}"#,
        ]);
        let items = load_items(f.path()).unwrap();
        assert_eq!(items.len(), 2);
        assert_eq!(items[0].id, "q1");
        assert_eq!(items[1].question.as_deref(), Some("Why?"));
    }

    #[test]
    fn load_items_rejects_empty_context_and_duplicates() {
        let f = write_lines(&[r#"{"id":"q1","dataset":"d","context":"   "}"#]);
        assert!(matches!(
            load_items(f.path()),
            Err(DatasetError::MissingContext { line: 1, .. })
        ));

        let f = write_lines(&[
            r#"{"id":"q1","dataset":"d","context":"a"}"#,
            r#"{"id":"q1","dataset":"d","context":"b"}"#,
        ]);
        assert!(matches!(
            load_items(f.path()),
            Err(DatasetError::DuplicateId { line: 2, .. })
        ));
    }

    #[test]
    fn load_items_reports_missing_file_and_bad_json() {
        assert!(matches!(
            load_items(Path::new("/nonexistent/items.jsonl")),
            Err(DatasetError::FileNotFound(_))
        ));
        let f = write_lines(&["not json"]);
        assert!(matches!(
            load_items(f.path()),
            Err(DatasetError::MalformedRecord { line: 1, .. })
        ));
    }

    #[test]
    fn unknown_fields_survive_a_round_trip() {
        let f = write_lines(&[
            r#"{"id":"q1","dataset":"d","context":"a","difficulty":"hard","tags":[1,2]}"#,
        ]);
        let items = load_items(f.path()).unwrap();
        assert_eq!(items[0].extra["difficulty"], "hard");

        let out = tempfile::NamedTempFile::new().unwrap();
        write_items(out.path(), &items).unwrap();
        let again = load_items(out.path()).unwrap();
        assert_eq!(items, again);
    }

    #[test]
    fn load_annotations_happy_path_and_errors() {
        let f = write_lines(&[
            r#"{"item_id":"q1","annotator_id":"r1","scores":{"grammaticality":5,"appropriateness":5,"relevance":5,"novelty":5,"complexity":5}}"#,
        ]);
        let recs = load_annotations(f.path()).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].scores.get(MetricKind::Novelty).value(), 5.0);

        // missing complexity
        let f = write_lines(&[
            r#"{"item_id":"q1","annotator_id":"r1","scores":{"grammaticality":5,"appropriateness":5,"relevance":5,"novelty":5}}"#,
        ]);
        assert!(matches!(
            load_annotations(f.path()),
            Err(DatasetError::MalformedRecord { .. })
        ));

        // out-of-range score
        let f = write_lines(&[
            r#"{"item_id":"q1","annotator_id":"r1","scores":{"grammaticality":0.5,"appropriateness":5,"relevance":5,"novelty":5,"complexity":5}}"#,
        ]);
        assert!(matches!(
            load_annotations(f.path()),
            Err(DatasetError::OutOfRange {
                metric: MetricKind::Grammaticality,
                ..
            })
        ));

        // duplicate (item, annotator)
        let line = r#"{"item_id":"q1","annotator_id":"r1","scores":{"grammaticality":5,"appropriateness":5,"relevance":5,"novelty":5,"complexity":5}}"#;
        let f = write_lines(&[line, line]);
        assert!(matches!(
            load_annotations(f.path()),
            Err(DatasetError::DuplicateAnnotation { line: 2, .. })
        ));
    }

    #[test]
    fn half_point_annotations_are_accepted() {
        let f = write_lines(&[
            r#"{"item_id":"q1","annotator_id":"r1","scores":{"grammaticality":4.5,"appropriateness":3.5,"relevance":5,"novelty":2.5,"complexity":1.5}}"#,
        ]);
        let recs = load_annotations(f.path()).unwrap();
        assert_eq!(recs[0].scores.get(MetricKind::Complexity).value(), 1.5);
    }

    #[test]
    fn sampling_edges() {
        let items: Vec<QuestionItem> =
            (0..5).map(|i| item(&format!("q{i}"), "ctx")).collect();
        assert!(sample_items(&items, 0, 7).is_empty());
        assert_eq!(sample_items(&items, 5, 7), items);
        assert_eq!(sample_items(&items, 99, 7), items);
        assert_eq!(sample_items(&items, 3, 7), sample_items(&items, 3, 7));
    }

    proptest! {
        #[test]
        fn sample_is_a_subset_without_duplicates(
            len in 0usize..30, n in 0usize..40, seed in any::<u64>()
        ) {
            let items: Vec<QuestionItem> =
                (0..len).map(|i| item(&format!("q{i}"), "ctx")).collect();
            let sample = sample_items(&items, n, seed);
            prop_assert_eq!(sample.len(), n.min(len));
            let ids: HashSet<&str> = sample.iter().map(|i| i.id.as_str()).collect();
            prop_assert_eq!(ids.len(), sample.len());
            for s in &sample {
                prop_assert!(items.iter().any(|i| i.id == s.id));
            }
        }
    }
}
