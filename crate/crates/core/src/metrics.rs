//! The five rubric metrics, the half-point score scale, and score-vector
//! arithmetic shared by the rest of the crate.

use std::fmt;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// The five evaluation metrics, in the canonical table-column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MetricKind {
    Grammaticality,
    Appropriateness,
    Relevance,
    Novelty,
    Complexity,
}

impl MetricKind {
    /// All metrics in canonical order (Gram, App, Rel, Nov, Com).
    pub const ALL: [MetricKind; 5] = [
        MetricKind::Grammaticality,
        MetricKind::Appropriateness,
        MetricKind::Relevance,
        MetricKind::Novelty,
        MetricKind::Complexity,
    ];

    /// Lowercase identifier used in file formats and prompts.
    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::Grammaticality => "grammaticality",
            MetricKind::Appropriateness => "appropriateness",
            MetricKind::Relevance => "relevance",
            MetricKind::Novelty => "novelty",
            MetricKind::Complexity => "complexity",
        }
    }

    /// Capitalized name as it appears in judge output and tables.
    pub fn display_name(self) -> &'static str {
        match self {
            MetricKind::Grammaticality => "Grammaticality",
            MetricKind::Appropriateness => "Appropriateness",
            MetricKind::Relevance => "Relevance",
            MetricKind::Novelty => "Novelty",
            MetricKind::Complexity => "Complexity",
        }
    }

    /// Abbreviated column label (Gram, App, Rel, Nov, Com).
    pub fn short_name(self) -> &'static str {
        match self {
            MetricKind::Grammaticality => "Gram",
            MetricKind::Appropriateness => "App",
            MetricKind::Relevance => "Rel",
            MetricKind::Novelty => "Nov",
            MetricKind::Complexity => "Com",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for MetricKind {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for MetricKind {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let name = String::deserialize(deserializer)?;
        name.parse().map_err(D::Error::custom)
    }
}

impl std::str::FromStr for MetricKind {
    type Err = MetricsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MetricKind::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| MetricsError::UnknownMetric(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("score {0} is outside the 1-5 scale")]
    OutOfRange(f64),
    #[error("score {0} is not a multiple of 0.5")]
    NotHalfPoint(f64),
    #[error("unknown metric name: {0}")]
    UnknownMetric(String),
    #[error("empty input")]
    EmptyInput,
}

/// A rubric score on the 1-5 scale, quantized to half points.
///
/// Stored as twice the value in a `u8` (2..=10) so equality and hashing are
/// exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Score(u8);

impl Score {
    pub const MIN: Score = Score(2);
    pub const MAX: Score = Score(10);

    /// Accepts only values already on the half-point scale; use
    /// [`round_to_half`] to quantize free-form numbers.
    pub fn from_f64(value: f64) -> Result<Score, MetricsError> {
        if !value.is_finite() {
            return Err(MetricsError::OutOfRange(value));
        }
        let doubled = value * 2.0;
        if doubled.fract() != 0.0 {
            return Err(MetricsError::NotHalfPoint(value));
        }
        if !(1.0..=5.0).contains(&value) {
            return Err(MetricsError::OutOfRange(value));
        }
        Ok(Score(doubled as u8))
    }

    pub fn value(self) -> f64 {
        f64::from(self.0) / 2.0
    }

    /// Twice the score, an integer in 2..=10. Handy as an exact category key.
    pub fn half_units(self) -> u8 {
        self.0
    }
}

impl fmt::Display for Score {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value())
    }
}

impl Serialize for Score {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_f64(self.value())
    }
}

impl<'de> Deserialize<'de> for Score {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = f64::deserialize(deserializer)?;
        Score::from_f64(raw).map_err(D::Error::custom)
    }
}

/// Round a raw number to the nearest half point; ties round up, which on
/// this scale means toward 5.0.
///
/// The result is validated, not clamped: a raw value whose rounded form
/// falls outside 1.0..=5.0 is an error.
pub fn round_to_half(raw: f64) -> Result<Score, MetricsError> {
    if !raw.is_finite() {
        return Err(MetricsError::OutOfRange(raw));
    }
    let units = (raw * 2.0 + 0.5).floor();
    if !(2.0..=10.0).contains(&units) {
        return Err(MetricsError::OutOfRange(raw));
    }
    Ok(Score(units as u8))
}

macro_rules! metric_map {
    ($name:ident, $elem:ty) => {
        impl $name {
            pub fn get(&self, metric: MetricKind) -> $elem {
                self.0[metric.index()]
            }

            pub fn iter(&self) -> impl Iterator<Item = (MetricKind, $elem)> + '_ {
                MetricKind::ALL.into_iter().map(|m| (m, self.0[m.index()]))
            }
        }
    };
}

/// One [`Score`] per metric; the unit of convergence comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ScoreVector([Score; 5]);

metric_map!(ScoreVector, Score);

impl ScoreVector {
    /// Build from scores in canonical metric order.
    pub fn new(scores: [Score; 5]) -> ScoreVector {
        ScoreVector(scores)
    }

    pub fn from_fn(mut f: impl FnMut(MetricKind) -> Score) -> ScoreVector {
        ScoreVector(MetricKind::ALL.map(&mut f))
    }

    pub fn try_from_fn<E>(
        mut f: impl FnMut(MetricKind) -> Result<Score, E>,
    ) -> Result<ScoreVector, E> {
        Ok(ScoreVector([
            f(MetricKind::Grammaticality)?,
            f(MetricKind::Appropriateness)?,
            f(MetricKind::Relevance)?,
            f(MetricKind::Novelty)?,
            f(MetricKind::Complexity)?,
        ]))
    }

    /// Uniform vector, mostly useful in tests.
    pub fn splat(score: Score) -> ScoreVector {
        ScoreVector([score; 5])
    }
}

/// Exact per-metric equality; the convergence criterion between judges.
pub fn score_vectors_equal(a: &ScoreVector, b: &ScoreVector) -> bool {
    a == b
}

/// One unquantized real per metric, each within [1.0, 5.0].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanVector([f64; 5]);

metric_map!(MeanVector, f64);

impl MeanVector {
    pub fn new(values: [f64; 5]) -> Result<MeanVector, MetricsError> {
        for v in values {
            if !v.is_finite() || !(1.0..=5.0).contains(&v) {
                return Err(MetricsError::OutOfRange(v));
            }
        }
        Ok(MeanVector(values))
    }

    /// Quantize each mean onto the half-point scale.
    pub fn round_to_half(&self) -> Result<ScoreVector, MetricsError> {
        ScoreVector::try_from_fn(|m| round_to_half(self.get(m)))
    }
}

/// Per-metric arithmetic mean of a nonempty list of score vectors.
pub fn mean_scores(vectors: &[ScoreVector]) -> Result<MeanVector, MetricsError> {
    if vectors.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let n = vectors.len() as f64;
    let values = MetricKind::ALL.map(|m| {
        let sum: f64 = vectors.iter().map(|v| v.get(m).value()).sum();
        sum / n
    });
    MeanVector::new(values)
}

/// One-sentence rubric definition per metric, embedded verbatim in every
/// evaluation prompt. Frozen so prompts are reproducible byte for byte.
pub fn metric_definitions() -> [(MetricKind, &'static str); 5] {
    MetricKind::ALL.map(|m| (m, definition(m)))
}

pub fn definition(metric: MetricKind) -> &'static str {
    match metric {
        MetricKind::Grammaticality => {
            "How grammatically correct and well-formed the question is, rated from 1 to 5."
        }
        MetricKind::Appropriateness => {
            "How semantically correct and understandable the question is, rated from 1 to 5."
        }
        MetricKind::Relevance => {
            "How directly the question addresses the topic of the given context, rated from 1 to 5."
        }
        MetricKind::Novelty => {
            "How much originality and distinctiveness the question shows, rated from 1 to 5."
        }
        MetricKind::Complexity => {
            "How much reasoning or cognitive effort the question demands, rated from 1 to 5."
        }
    }
}

// Serde representation: a map keyed by the lowercase metric names, all five
// required, no extras.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VectorRepr<T> {
    grammaticality: T,
    appropriateness: T,
    relevance: T,
    novelty: T,
    complexity: T,
}

impl Serialize for ScoreVector {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        VectorRepr {
            grammaticality: self.get(MetricKind::Grammaticality),
            appropriateness: self.get(MetricKind::Appropriateness),
            relevance: self.get(MetricKind::Relevance),
            novelty: self.get(MetricKind::Novelty),
            complexity: self.get(MetricKind::Complexity),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ScoreVector {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let repr = VectorRepr::<Score>::deserialize(deserializer)?;
        Ok(ScoreVector([
            repr.grammaticality,
            repr.appropriateness,
            repr.relevance,
            repr.novelty,
            repr.complexity,
        ]))
    }
}

impl Serialize for MeanVector {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        VectorRepr {
            grammaticality: self.get(MetricKind::Grammaticality),
            appropriateness: self.get(MetricKind::Appropriateness),
            relevance: self.get(MetricKind::Relevance),
            novelty: self.get(MetricKind::Novelty),
            complexity: self.get(MetricKind::Complexity),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for MeanVector {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let repr = VectorRepr::<f64>::deserialize(deserializer)?;
        MeanVector::new([
            repr.grammaticality,
            repr.appropriateness,
            repr.relevance,
            repr.novelty,
            repr.complexity,
        ])
        .map_err(D::Error::custom)
    }
}
