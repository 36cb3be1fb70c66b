//! Agreement and aggregate statistics: consensus scores, Pearson
//! correlation, Fleiss kappa, exact-match rates, and per-group score means.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::dataset::AnnotationRecord;
use crate::engine::{Mode, SessionResult};
use crate::metrics::{mean_scores, MeanVector, MetricKind, Score, ScoreVector};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StatsError {
    #[error("series lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least two paired samples, got {0}")]
    TooFewSamples(usize),
    #[error("series is constant, correlation undefined")]
    DegenerateSeries,
    #[error("item {0:?} has no annotations")]
    NoAnnotations(String),
    #[error("results and consensus cover different item sets")]
    ItemSetMismatch,
    #[error("rating matrix is empty")]
    EmptyMatrix,
    #[error("rating row {row} has {found} categories, expected {expected}")]
    CategoryMismatch {
        row: usize,
        found: usize,
        expected: usize,
    },
    #[error("rating row {row} sums to {found} ratings, expected {expected}")]
    UnequalRaterCounts {
        row: usize,
        found: u32,
        expected: u32,
    },
    #[error("need at least two raters, got {0}")]
    TooFewRaters(u32),
    #[error("{metric} rating {value} is not one of the permitted categories")]
    CategoryNotAllowed { metric: MetricKind, value: f64 },
    #[error("expected agreement is 1, kappa undefined")]
    DegenerateAgreement,
    #[error("no results to aggregate")]
    EmptyGroup,
}

/// Per-item human consensus: the unrounded per-metric mean of the
/// annotators, plus its half-point rounding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusScore {
    pub item_id: String,
    pub mean: MeanVector,
    pub rounded: ScoreVector,
}

fn consensus_of(item_id: &str, scores: &[ScoreVector]) -> Result<ConsensusScore, StatsError> {
    if scores.is_empty() {
        return Err(StatsError::NoAnnotations(item_id.to_string()));
    }
    let mean = mean_scores(scores).expect("nonempty annotation group");
    let rounded = mean.round_to_half().expect("means lie on the 1-5 scale");
    Ok(ConsensusScore {
        item_id: item_id.to_string(),
        mean,
        rounded,
    })
}

/// Consensus for every annotated item, in first-appearance order.
pub fn consensus(records: &[AnnotationRecord]) -> Result<Vec<ConsensusScore>, StatsError> {
    let mut order: Vec<&str> = Vec::new();
    let mut groups: BTreeMap<&str, Vec<ScoreVector>> = BTreeMap::new();
    for record in records {
        let slot = groups.entry(&record.item_id).or_default();
        if slot.is_empty() {
            order.push(&record.item_id);
        }
        slot.push(record.scores);
    }
    order
        .into_iter()
        .map(|id| consensus_of(id, &groups[id]))
        .collect()
}

/// Consensus for exactly the requested items; an item without annotations is
/// an error.
pub fn consensus_for_items<'a>(
    item_ids: impl IntoIterator<Item = &'a str>,
    records: &[AnnotationRecord],
) -> Result<Vec<ConsensusScore>, StatsError> {
    item_ids
        .into_iter()
        .map(|id| {
            let scores: Vec<ScoreVector> = records
                .iter()
                .filter(|r| r.item_id == id)
                .map(|r| r.scores)
                .collect();
            consensus_of(id, &scores)
        })
        .collect()
}

/// Per-metric average of consensus means over items; the human-baseline row.
pub fn mean_of_consensus(consensus: &[ConsensusScore]) -> Result<MeanVector, StatsError> {
    if consensus.is_empty() {
        return Err(StatsError::EmptyGroup);
    }
    let n = consensus.len() as f64;
    let values = MetricKind::ALL.map(|m| {
        let sum: f64 = consensus.iter().map(|c| c.mean.get(m)).sum();
        sum / n
    });
    Ok(MeanVector::new(values).expect("averages of in-range means stay in range"))
}

/// Product-moment correlation of two equal-length, non-constant series.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(StatsError::TooFewSamples(x.len()));
    }
    let constant = |series: &[f64]| series.iter().all(|v| *v == series[0]);
    if constant(x) || constant(y) {
        return Err(StatsError::DegenerateSeries);
    }
    let n = x.len() as f64;
    let mean_x = x.iter().sum::<f64>() / n;
    let mean_y = y.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (&xi, &yi) in x.iter().zip(y) {
        let dx = xi - mean_x;
        let dy = yi - mean_y;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    Ok(sxy / (sxx.sqrt() * syy.sqrt()))
}

/// Pearson correlation for one metric, with the sample count attached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub metric: MetricKind,
    pub r: f64,
    pub n: usize,
}

/// Chance-corrected agreement among a fixed number of raters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaResult {
    pub kappa: f64,
    pub categories: Vec<String>,
    pub n_items: usize,
    pub n_raters: u32,
}

/// Fleiss kappa over an items x categories count matrix. Every row must sum
/// to the same rater count (>= 2).
pub fn fleiss_kappa(counts: &[Vec<u32>], categories: &[String]) -> Result<KappaResult, StatsError> {
    if counts.is_empty() || categories.is_empty() {
        return Err(StatsError::EmptyMatrix);
    }
    for (row, item) in counts.iter().enumerate() {
        if item.len() != categories.len() {
            return Err(StatsError::CategoryMismatch {
                row,
                found: item.len(),
                expected: categories.len(),
            });
        }
    }
    let n_raters: u32 = counts[0].iter().sum();
    for (row, item) in counts.iter().enumerate() {
        let sum: u32 = item.iter().sum();
        if sum != n_raters {
            return Err(StatsError::UnequalRaterCounts {
                row,
                found: sum,
                expected: n_raters,
            });
        }
    }
    if n_raters < 2 {
        return Err(StatsError::TooFewRaters(n_raters));
    }

    let n_items = counts.len() as f64;
    let n = f64::from(n_raters);
    let p_bar: f64 = counts
        .iter()
        .map(|item| {
            let sum_sq: f64 = item.iter().map(|&c| f64::from(c) * f64::from(c)).sum();
            (sum_sq - n) / (n * (n - 1.0))
        })
        .sum::<f64>()
        / n_items;
    let p_e: f64 = (0..categories.len())
        .map(|j| {
            let column: f64 = counts.iter().map(|item| f64::from(item[j])).sum();
            let share = column / (n_items * n);
            share * share
        })
        .sum();
    if p_e >= 1.0 {
        return Err(StatsError::DegenerateAgreement);
    }
    Ok(KappaResult {
        kappa: (p_bar - p_e) / (1.0 - p_e),
        categories: categories.to_vec(),
        n_items: counts.len(),
        n_raters,
    })
}

/// The nine half-point categories 1.0, 1.5, ..., 5.0.
pub fn half_point_categories() -> Vec<Score> {
    (2..=10)
        .map(|units| Score::from_f64(f64::from(units) / 2.0).expect("half units in range"))
        .collect()
}

/// The five integer categories 1.0 .. 5.0, for integer-only annotation sets.
pub fn integer_categories() -> Vec<Score> {
    (1..=5)
        .map(|v| Score::from_f64(f64::from(v)).expect("integers in range"))
        .collect()
}

/// Build the per-item category-count matrix for one metric from raw
/// annotations. Items appear in first-annotation order; a rating outside
/// `categories` is an error.
pub fn rating_matrix(
    records: &[AnnotationRecord],
    metric: MetricKind,
    categories: &[Score],
) -> Result<Vec<Vec<u32>>, StatsError> {
    let index_of: BTreeMap<Score, usize> = categories
        .iter()
        .enumerate()
        .map(|(i, s)| (*s, i))
        .collect();
    let mut order: Vec<&str> = Vec::new();
    let mut rows: BTreeMap<&str, Vec<u32>> = BTreeMap::new();
    for record in records {
        let score = record.scores.get(metric);
        let Some(&column) = index_of.get(&score) else {
            return Err(StatsError::CategoryNotAllowed {
                metric,
                value: score.value(),
            });
        };
        let row = rows.entry(&record.item_id).or_insert_with(|| {
            order.push(&record.item_id);
            vec![0; categories.len()]
        });
        row[column] += 1;
    }
    Ok(order.into_iter().map(|id| rows[id].clone()).collect())
}

/// Percentage of items where the model's final score equals the rounded
/// consensus, for one metric. The two item sets must coincide.
pub fn exact_match_rate(
    model_scores: &BTreeMap<String, ScoreVector>,
    consensus: &[ConsensusScore],
    metric: MetricKind,
) -> Result<f64, StatsError> {
    let model_ids: BTreeSet<&str> = model_scores.keys().map(String::as_str).collect();
    let consensus_ids: BTreeSet<&str> = consensus.iter().map(|c| c.item_id.as_str()).collect();
    if model_ids != consensus_ids || consensus.is_empty() {
        return Err(StatsError::ItemSetMismatch);
    }
    let matched = consensus
        .iter()
        .filter(|c| model_scores[&c.item_id].get(metric) == c.rounded.get(metric))
        .count();
    Ok(100.0 * matched as f64 / consensus.len() as f64)
}

/// Per-metric mean of final scores for one (model label, mode) group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMean {
    pub label: String,
    pub mode: Mode,
    pub n: usize,
    pub means: MeanVector,
}

/// Group results by (model label, mode) and average the final scores.
/// Groups come back sorted by label, then mode name.
pub fn aggregate_means(results: &[&SessionResult]) -> Result<Vec<GroupMean>, StatsError> {
    if results.is_empty() {
        return Err(StatsError::EmptyGroup);
    }
    let mut groups: BTreeMap<(String, String), (Mode, Vec<ScoreVector>)> = BTreeMap::new();
    for result in results {
        groups
            .entry((result.model.clone(), result.mode.to_string()))
            .or_insert_with(|| (result.mode, Vec::new()))
            .1
            .push(result.final_scores);
    }
    Ok(groups
        .into_iter()
        .map(|((label, _), (mode, scores))| GroupMean {
            label,
            mode,
            n: scores.len(),
            means: mean_scores(&scores).expect("nonempty group"),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: f64) -> Score {
        Score::from_f64(v).unwrap()
    }

    fn annotation(item: &str, annotator: &str, values: [f64; 5]) -> AnnotationRecord {
        AnnotationRecord {
            item_id: item.into(),
            annotator_id: annotator.into(),
            scores: ScoreVector::new(values.map(|v| s(v))),
        }
    }

    #[test]
    fn consensus_identity_and_arithmetic() {
        let records = vec![annotation("q1", "r1", [5.0; 5])];
        let rows = consensus(&records).unwrap();
        assert_eq!(rows[0].mean.get(MetricKind::Grammaticality), 5.0);
        assert_eq!(rows[0].rounded.get(MetricKind::Grammaticality), s(5.0));

        let records = vec![
            annotation("q1", "r1", [4.0; 5]),
            annotation("q1", "r2", [5.0; 5]),
            annotation("q1", "r3", [5.0; 5]),
        ];
        let rows = consensus(&records).unwrap();
        let gram = rows[0].mean.get(MetricKind::Grammaticality);
        assert!((gram - 14.0 / 3.0).abs() < 1e-12);
        assert_eq!(rows[0].rounded.get(MetricKind::Grammaticality), s(4.5));

        let records = vec![
            annotation("q1", "r1", [4.0; 5]),
            annotation("q1", "r2", [5.0; 5]),
        ];
        let rows = consensus(&records).unwrap();
        assert_eq!(rows[0].mean.get(MetricKind::Grammaticality), 4.5);
        assert_eq!(rows[0].rounded.get(MetricKind::Grammaticality), s(4.5));
    }

    #[test]
    fn consensus_for_items_flags_missing_annotations() {
        let records = vec![annotation("q1", "r1", [5.0; 5])];
        assert!(matches!(
            consensus_for_items(["q1", "q2"], &records),
            Err(StatsError::NoAnnotations(id)) if id == "q2"
        ));
    }

    #[test]
    fn pearson_perfect_and_inverse() {
        let x = [1.0, 2.0, 3.0];
        assert_eq!(pearson(&x, &x).unwrap(), 1.0);
        let y: Vec<f64> = x.iter().map(|v| -v).collect();
        assert_eq!(pearson(&x, &y).unwrap(), -1.0);
    }

    #[test]
    fn pearson_fixed_case() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let y = [2.0, 2.0, 3.0, 5.0, 5.0];
        let expected = 9.0 / 92.0_f64.sqrt();
        assert!((pearson(&x, &y).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn pearson_rejects_bad_input() {
        assert!(matches!(
            pearson(&[1.0], &[1.0]),
            Err(StatsError::TooFewSamples(1))
        ));
        assert!(matches!(
            pearson(&[1.0, 2.0], &[1.0]),
            Err(StatsError::LengthMismatch(2, 1))
        ));
        assert!(matches!(
            pearson(&[2.0, 2.0], &[1.0, 3.0]),
            Err(StatsError::DegenerateSeries)
        ));
    }

    #[test]
    fn fleiss_fixed_case() {
        let categories = vec!["1".to_string(), "2".to_string()];
        let counts = vec![vec![3, 0], vec![1, 2]];
        let result = fleiss_kappa(&counts, &categories).unwrap();
        assert!((result.kappa - 0.25).abs() < 1e-12);
        assert_eq!(result.n_items, 2);
        assert_eq!(result.n_raters, 3);
    }

    #[test]
    fn fleiss_perfect_agreement_and_degenerate() {
        let categories = vec!["1".to_string(), "2".to_string()];
        let counts = vec![vec![3, 0], vec![0, 3]];
        assert_eq!(fleiss_kappa(&counts, &categories).unwrap().kappa, 1.0);

        let counts = vec![vec![3, 0], vec![3, 0]];
        assert!(matches!(
            fleiss_kappa(&counts, &categories),
            Err(StatsError::DegenerateAgreement)
        ));
    }

    #[test]
    fn fleiss_validates_shape() {
        let categories = vec!["1".to_string(), "2".to_string()];
        assert!(matches!(
            fleiss_kappa(&[], &categories),
            Err(StatsError::EmptyMatrix)
        ));
        assert!(matches!(
            fleiss_kappa(&[vec![2, 1], vec![3, 1]], &categories),
            Err(StatsError::UnequalRaterCounts { row: 1, .. })
        ));
        assert!(matches!(
            fleiss_kappa(&[vec![1, 0]], &categories),
            Err(StatsError::TooFewRaters(1))
        ));
    }

    #[test]
    fn rating_matrix_counts_categories() {
        let records = vec![
            annotation("q1", "r1", [5.0; 5]),
            annotation("q1", "r2", [4.5; 5]),
            annotation("q2", "r1", [5.0; 5]),
            annotation("q2", "r2", [5.0; 5]),
        ];
        let cats = half_point_categories();
        let matrix = rating_matrix(&records, MetricKind::Grammaticality, &cats).unwrap();
        assert_eq!(matrix.len(), 2);
        assert_eq!(matrix[0][8], 1); // 5.0
        assert_eq!(matrix[0][7], 1); // 4.5
        assert_eq!(matrix[1][8], 2);

        let cats = integer_categories();
        assert!(matches!(
            rating_matrix(&records, MetricKind::Grammaticality, &cats),
            Err(StatsError::CategoryNotAllowed { .. })
        ));
    }

    #[test]
    fn exact_match_cases() {
        let consensus = vec![
            ConsensusScore {
                item_id: "q1".into(),
                mean: mean_scores(&[ScoreVector::splat(s(5.0))]).unwrap(),
                rounded: ScoreVector::splat(s(5.0)),
            },
            ConsensusScore {
                item_id: "q2".into(),
                mean: mean_scores(&[ScoreVector::splat(s(4.0))]).unwrap(),
                rounded: ScoreVector::splat(s(4.0)),
            },
        ];
        let mut model = BTreeMap::new();
        model.insert("q1".to_string(), ScoreVector::splat(s(5.0)));
        model.insert("q2".to_string(), ScoreVector::splat(s(4.5)));
        let rate = exact_match_rate(&model, &consensus, MetricKind::Grammaticality).unwrap();
        assert_eq!(rate, 50.0);

        model.insert("q2".to_string(), ScoreVector::splat(s(4.0)));
        let rate = exact_match_rate(&model, &consensus, MetricKind::Grammaticality).unwrap();
        assert_eq!(rate, 100.0);

        model.remove("q2");
        model.insert("q3".to_string(), ScoreVector::splat(s(4.0)));
        assert!(matches!(
            exact_match_rate(&model, &consensus, MetricKind::Grammaticality),
            Err(StatsError::ItemSetMismatch)
        ));
    }

    fn result(label: &str, mode: Mode, item: &str, value: f64) -> SessionResult {
        SessionResult {
            item_id: item.into(),
            model: label.into(),
            mode,
            transcript: Vec::new(),
            final_scores: ScoreVector::splat(s(value)),
            converged: true,
            iterations_used: 0,
        }
    }

    #[test]
    fn aggregate_means_grouping() {
        let rows = vec![
            result("m1", Mode::Direct, "q1", 4.0),
            result("m1", Mode::Direct, "q2", 5.0),
            result("m1", Mode::Mirror, "q1", 3.0),
            result("m2", Mode::Direct, "q1", 2.0),
        ];
        let refs: Vec<&SessionResult> = rows.iter().collect();
        let groups = aggregate_means(&refs).unwrap();
        assert_eq!(groups.len(), 3);
        let m1_direct = groups
            .iter()
            .find(|g| g.label == "m1" && g.mode == Mode::Direct)
            .unwrap();
        assert_eq!(m1_direct.means.get(MetricKind::Grammaticality), 4.5);
        assert_eq!(m1_direct.n, 2);

        // groups are independent: dropping m2 leaves m1 group means unchanged
        let refs_without_m2: Vec<&SessionResult> =
            rows.iter().filter(|r| r.model != "m2").collect();
        let again = aggregate_means(&refs_without_m2).unwrap();
        let m1_again = again
            .iter()
            .find(|g| g.label == "m1" && g.mode == Mode::Direct)
            .unwrap();
        assert_eq!(m1_again.means.get(MetricKind::Grammaticality), 4.5);

        assert!(matches!(aggregate_means(&[]), Err(StatsError::EmptyGroup)));
    }
}
