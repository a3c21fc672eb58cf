//! Domain types shared by every calibration method.
//!
//! All types are immutable after construction. Constructors validate their
//! invariants, so a value that exists is a valid value.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probability vectors whose sum is off by at most this much are renormalized.
pub const REPAIR_TOLERANCE: f64 = 1e-3;
/// Sums within this distance of one are kept as given.
pub const SUM_TOLERANCE: f64 = 1e-6;

/// A dense class index in `0..K`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Label(pub usize);

impl Label {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A classifier's softmax output over `K` labels.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct ProbabilityVector(Vec<f64>);

impl ProbabilityVector {
    /// Validates `probs`. Sums off by more than [`SUM_TOLERANCE`] but within
    /// [`REPAIR_TOLERANCE`] are renormalized; larger deviations are rejected.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        Self::validate_row(probs, 0)
    }

    /// Same as [`ProbabilityVector::new`], reporting `row` in errors.
    pub fn validate_row(mut probs: Vec<f64>, row: usize) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::DimensionMismatch {
                row,
                expected: 2,
                found: 0,
            });
        }
        for (position, &value) in probs.iter().enumerate() {
            if !value.is_finite() || value < 0.0 {
                return Err(Error::InvalidProbability {
                    row,
                    position,
                    value,
                });
            }
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > REPAIR_TOLERANCE {
            return Err(Error::ProbabilitySum {
                row,
                sum,
                tolerance: REPAIR_TOLERANCE,
            });
        }
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            for p in &mut probs {
                *p /= sum;
            }
        }
        // Entries above one can only survive renormalization by rounding.
        for p in &mut probs {
            *p = p.min(1.0);
        }
        Ok(Self(probs))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn prob(&self, label: Label) -> f64 {
        self.0[label.0]
    }

    /// Index of the most probable label; ties go to the lowest index.
    pub fn argmax(&self) -> Label {
        let mut best = 0;
        for (i, &p) in self.0.iter().enumerate() {
            if p > self.0[best] {
                best = i;
            }
        }
        Label(best)
    }
}

impl<'de> Deserialize<'de> for ProbabilityVector {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let raw = Vec::<f64>::deserialize(deserializer)?;
        ProbabilityVector::new(raw).map_err(serde::de::Error::custom)
    }
}

/// A probability vector paired with its true label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub probs: ProbabilityVector,
    pub label: Label,
}

impl LabeledExample {
    pub fn new(probs: ProbabilityVector, label: Label) -> Result<Self> {
        if label.0 >= probs.len() {
            return Err(Error::LabelOutOfRange {
                row: 0,
                label: label.0,
                num_labels: probs.len(),
            });
        }
        Ok(Self { probs, label })
    }

    /// Nonconformity score of the true label.
    pub fn score(&self) -> f64 {
        crate::scp::nonconformity_score(&self.probs, self.label)
    }
}

/// A set of labeled examples sharing one label universe of size `K`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreDataset {
    examples: Vec<LabeledExample>,
    num_labels: usize,
}

impl ScoreDataset {
    /// Builds a dataset from already-validated examples.
    pub fn new(examples: Vec<LabeledExample>, num_labels: usize) -> Result<Self> {
        if num_labels < 2 {
            return Err(Error::TooFewLabels(num_labels));
        }
        for (row, ex) in examples.iter().enumerate() {
            if ex.probs.len() != num_labels {
                return Err(Error::DimensionMismatch {
                    row,
                    expected: num_labels,
                    found: ex.probs.len(),
                });
            }
            if ex.label.0 >= num_labels {
                return Err(Error::LabelOutOfRange {
                    row,
                    label: ex.label.0,
                    num_labels,
                });
            }
        }
        Ok(Self {
            examples,
            num_labels,
        })
    }

    pub fn empty(num_labels: usize) -> Result<Self> {
        Self::new(Vec::new(), num_labels)
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn examples(&self) -> &[LabeledExample] {
        &self.examples
    }

    pub fn iter(&self) -> std::slice::Iter<'_, LabeledExample> {
        self.examples.iter()
    }

    pub fn labels(&self) -> Vec<Label> {
        self.examples.iter().map(|e| e.label).collect()
    }

    /// True-label nonconformity scores, in dataset order.
    pub fn scores(&self) -> Vec<f64> {
        self.examples.iter().map(LabeledExample::score).collect()
    }

    /// Copies the examples at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            examples: indices.iter().map(|&i| self.examples[i].clone()).collect(),
            num_labels: self.num_labels,
        }
    }

    pub(crate) fn fail_if_empty(&self, what: &'static str) -> Result<()> {
        if self.examples.is_empty() {
            Err(Error::Empty(what))
        } else {
            Ok(())
        }
    }
}

impl<'a> IntoIterator for &'a ScoreDataset {
    type Item = &'a LabeledExample;
    type IntoIter = std::slice::Iter<'a, LabeledExample>;

    fn into_iter(self) -> Self::IntoIter {
        self.examples.iter()
    }
}

/// Validates raw `(probabilities, label)` rows into a dataset with `num_labels` classes.
pub fn validate_dataset<I>(raw: I, num_labels: usize) -> Result<ScoreDataset>
where
    I: IntoIterator<Item = (Vec<f64>, usize)>,
{
    if num_labels < 2 {
        return Err(Error::TooFewLabels(num_labels));
    }
    let mut examples = Vec::new();
    for (row, (probs, label)) in raw.into_iter().enumerate() {
        if probs.len() != num_labels {
            return Err(Error::DimensionMismatch {
                row,
                expected: num_labels,
                found: probs.len(),
            });
        }
        if label >= num_labels {
            return Err(Error::LabelOutOfRange {
                row,
                label,
                num_labels,
            });
        }
        examples.push(LabeledExample {
            probs: ProbabilityVector::validate_row(probs, row)?,
            label: Label(label),
        });
    }
    Ok(ScoreDataset {
        examples,
        num_labels,
    })
}

/// User-specified risk level `alpha`, strictly inside `(0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize)]
#[serde(transparent)]
pub struct RiskLevel(f64);

impl RiskLevel {
    pub fn new(alpha: f64) -> Result<Self> {
        if alpha > 0.0 && alpha < 1.0 {
            Ok(Self(alpha))
        } else {
            Err(Error::InvalidRiskLevel(alpha))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// Target coverage `1 - alpha`.
    pub fn coverage(self) -> f64 {
        1.0 - self.0
    }

    /// The nine levels 0.1, 0.2, ..., 0.9.
    pub fn default_grid() -> Vec<RiskLevel> {
        (1..=9).map(|i| RiskLevel(i as f64 / 10.0)).collect()
    }
}

impl<'de> Deserialize<'de> for RiskLevel {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        RiskLevel::new(f64::deserialize(deserializer)?).map_err(serde::de::Error::custom)
    }
}

/// Labels emitted for one test sample, stored in ascending order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PredictionSet(Vec<Label>);

impl PredictionSet {
    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn full(num_labels: usize) -> Self {
        Self((0..num_labels).map(Label).collect())
    }

    /// Builds a set from arbitrary labels; duplicates are dropped.
    pub fn from_labels(labels: impl IntoIterator<Item = Label>) -> Self {
        let mut v: Vec<Label> = labels.into_iter().collect();
        v.sort_unstable();
        v.dedup();
        Self(v)
    }

    pub fn contains(&self, label: Label) -> bool {
        self.0.binary_search(&label).is_ok()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn labels(&self) -> &[Label] {
        &self.0
    }

    pub fn is_subset(&self, other: &PredictionSet) -> bool {
        self.0.iter().all(|&l| other.contains(l))
    }
}

/// Threshold of a calibrated method: a finite cutoff or the conservative full set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cutoff {
    Finite(f64),
    FullSet,
}

impl Cutoff {
    pub fn is_full_set(self) -> bool {
        matches!(self, Cutoff::FullSet)
    }

    /// `Some(value)` for finite cutoffs.
    pub fn finite(self) -> Option<f64> {
        match self {
            Cutoff::Finite(v) => Some(v),
            Cutoff::FullSet => None,
        }
    }

    /// Whether a nonconformity score passes the cutoff (`score <= cutoff`).
    pub fn admits(self, score: f64) -> bool {
        match self {
            Cutoff::Finite(v) => score <= v,
            Cutoff::FullSet => true,
        }
    }

    /// Labels of `probs` whose nonconformity score passes the cutoff.
    pub fn predict(self, probs: &ProbabilityVector) -> PredictionSet {
        PredictionSet(
            probs
                .as_slice()
                .iter()
                .enumerate()
                .filter(|&(_, &p)| self.admits(1.0 - p))
                .map(|(i, _)| Label(i))
                .collect(),
        )
    }
}
