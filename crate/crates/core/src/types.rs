//! Domain types shared by the learners, debuggers, baselines and evaluation.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{DutiError, Result};
use crate::kernel::KernelConfig;

/// Row sums of a soft-label matrix must match 1 to this tolerance.
pub const SIMPLEX_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Task {
    Regression,
    Classification { classes: usize },
}

impl Task {
    pub fn classes(&self) -> Option<usize> {
        match self {
            Task::Regression => None,
            Task::Classification { classes } => Some(*classes),
        }
    }
}

/// Labels of a training or trusted set.
#[derive(Debug, Clone, PartialEq)]
pub enum Labels {
    Regression(DVector<f64>),
    /// 0-based class indices.
    Classification { classes: usize, labels: Vec<usize> },
}

impl Labels {
    pub fn classification(labels: Vec<usize>, classes: usize) -> Result<Self> {
        if classes < 2 {
            return Err(DutiError::InvalidConfig(format!(
                "classification needs at least 2 classes, got {classes}"
            )));
        }
        if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
            return Err(DutiError::LabelOutOfRange {
                index,
                label,
                classes,
            });
        }
        Ok(Labels::Classification { classes, labels })
    }

    pub fn regression(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(DutiError::InvalidData(format!(
                "non-finite regression label at index {i}"
            )));
        }
        Ok(Labels::Regression(DVector::from_vec(values)))
    }

    pub fn len(&self) -> usize {
        match self {
            Labels::Regression(v) => v.len(),
            Labels::Classification { labels, .. } => labels.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn task(&self) -> Task {
        match self {
            Labels::Regression(_) => Task::Regression,
            Labels::Classification { classes, .. } => Task::Classification { classes: *classes },
        }
    }

    pub fn as_real(&self) -> Option<&DVector<f64>> {
        match self {
            Labels::Regression(v) => Some(v),
            Labels::Classification { .. } => None,
        }
    }

    pub fn as_classes(&self) -> Option<&[usize]> {
        match self {
            Labels::Regression(_) => None,
            Labels::Classification { labels, .. } => Some(labels),
        }
    }

    /// Label `i` as a float (class index for classification).
    pub fn value(&self, i: usize) -> f64 {
        match self {
            Labels::Regression(v) => v[i],
            Labels::Classification { labels, .. } => labels[i] as f64,
        }
    }

    pub(crate) fn same_domain(&self, other: &Labels) -> bool {
        self.task() == other.task() && self.len() == other.len()
    }
}

/// Canonical basis encoding of class labels: row `i` is `e_{labels[i]}`.
pub fn one_hot(labels: &[usize], classes: usize) -> Result<DMatrix<f64>> {
    let mut out = DMatrix::zeros(labels.len(), classes);
    for (i, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(DutiError::LabelOutOfRange {
                index: i,
                label: y,
                classes,
            });
        }
        out[(i, y)] = 1.0;
    }
    Ok(out)
}

fn check_features(features: &DMatrix<f64>, what: &str) -> Result<()> {
    if features.nrows() == 0 || features.ncols() == 0 {
        return Err(DutiError::InvalidData(format!(
            "{what} needs at least one row and one feature column"
        )));
    }
    if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
        let (r, c) = (pos % features.nrows(), pos / features.nrows());
        return Err(DutiError::InvalidData(format!(
            "{what} has a non-finite feature at row {r}, column {c}"
        )));
    }
    Ok(())
}

/// A labeled training set.
///
/// `true_labels` is evaluation-only provenance. Debuggers and baselines
/// never read it; only [`crate::eval`] and [`crate::bench`] do.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: DMatrix<f64>,
    labels: Labels,
    true_labels: Option<Labels>,
}

impl Dataset {
    pub fn new(features: DMatrix<f64>, labels: Labels) -> Result<Self> {
        check_features(&features, "dataset")?;
        if labels.len() != features.nrows() {
            return Err(DutiError::DimensionMismatch(format!(
                "{} feature rows but {} labels",
                features.nrows(),
                labels.len()
            )));
        }
        Ok(Self {
            features,
            labels,
            true_labels: None,
        })
    }

    pub fn with_true_labels(mut self, truth: Labels) -> Result<Self> {
        if !self.labels.same_domain(&truth) {
            return Err(DutiError::DimensionMismatch(
                "true labels must have the same length and domain as labels".into(),
            ));
        }
        self.true_labels = Some(truth);
        Ok(self)
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn labels(&self) -> &Labels {
        &self.labels
    }

    pub fn true_labels(&self) -> Option<&Labels> {
        self.true_labels.as_ref()
    }

    pub fn task(&self) -> Task {
        self.labels.task()
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    /// Subset of rows, in the given order. Truth is carried along.
    pub fn select(&self, rows: &[usize]) -> Result<Self> {
        let features = self.features.select_rows(rows);
        let pick = |l: &Labels| match l {
            Labels::Regression(v) => Labels::Regression(DVector::from_iterator(
                rows.len(),
                rows.iter().map(|&r| v[r]),
            )),
            Labels::Classification { classes, labels } => Labels::Classification {
                classes: *classes,
                labels: rows.iter().map(|&r| labels[r]).collect(),
            },
        };
        let mut out = Dataset::new(features, pick(&self.labels))?;
        out.true_labels = self.true_labels.as_ref().map(pick);
        Ok(out)
    }
}

/// Expert-verified items with per-item confidence weights.
#[derive(Debug, Clone, PartialEq)]
pub struct TrustedSet {
    features: DMatrix<f64>,
    labels: Labels,
    confidences: DVector<f64>,
}

impl TrustedSet {
    /// Default confidence assigned to every trusted item.
    pub const DEFAULT_CONFIDENCE: f64 = 100.0;

    pub fn new(features: DMatrix<f64>, labels: Labels, confidences: DVector<f64>) -> Result<Self> {
        check_features(&features, "trusted set")?;
        let m = features.nrows();
        if labels.len() != m || confidences.len() != m {
            return Err(DutiError::DimensionMismatch(format!(
                "{m} trusted rows but {} labels and {} confidences",
                labels.len(),
                confidences.len()
            )));
        }
        if let Some(i) = confidences.iter().position(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(DutiError::InvalidData(format!(
                "trusted confidence at index {i} must be finite and nonnegative"
            )));
        }
        Ok(Self {
            features,
            labels,
            confidences,
        })
    }

    pub fn with_default_confidence(features: DMatrix<f64>, labels: Labels) -> Result<Self> {
        let m = features.nrows();
        Self::new(
            features,
            labels,
            DVector::from_element(m, Self::DEFAULT_CONFIDENCE),
        )
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn labels(&self) -> &Labels {
        &self.labels
    }

    pub fn confidences(&self) -> &DVector<f64> {
        &self.confidences
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Same items with every confidence replaced by `c`.
    pub fn with_uniform_confidence(&self, c: f64) -> Result<Self> {
        Self::new(
            self.features.clone(),
            self.labels.clone(),
            DVector::from_element(self.len(), c),
        )
    }

    /// Checks that this set can debug `data`: same feature dimension and task.
    pub fn check_compatible(&self, data: &Dataset) -> Result<()> {
        if self.features.ncols() != data.dim() {
            return Err(DutiError::DimensionMismatch(format!(
                "trusted items have {} features, training set has {}",
                self.features.ncols(),
                data.dim()
            )));
        }
        if self.labels.task() != data.task() {
            return Err(DutiError::InvalidData(format!(
                "trusted task {:?} does not match training task {:?}",
                self.labels.task(),
                data.task()
            )));
        }
        Ok(())
    }
}

/// The debugger's decision variable.
#[derive(Debug, Clone, PartialEq)]
pub enum DeltaState {
    /// Additive label shift per training item.
    Regression(DVector<f64>),
    /// Soft relabeling, one probability row per training item.
    Classification(DMatrix<f64>),
}

impl DeltaState {
    pub fn regression(delta: DVector<f64>) -> Result<Self> {
        if let Some(i) = delta.iter().position(|v| !v.is_finite()) {
            return Err(DutiError::InvalidData(format!(
                "non-finite label shift at index {i}"
            )));
        }
        Ok(DeltaState::Regression(delta))
    }

    pub fn classification(delta: DMatrix<f64>) -> Result<Self> {
        check_row_simplex(&delta)?;
        Ok(DeltaState::Classification(delta))
    }

    pub fn len(&self) -> usize {
        match self {
            DeltaState::Regression(d) => d.len(),
            DeltaState::Classification(d) => d.nrows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Verifies that every row is a probability vector within [`SIMPLEX_TOL`].
pub fn check_row_simplex(rows: &DMatrix<f64>) -> Result<()> {
    for (i, row) in rows.row_iter().enumerate() {
        if row.iter().any(|v| !v.is_finite() || *v < -SIMPLEX_TOL) {
            return Err(DutiError::InvalidData(format!(
                "row {i} has a negative or non-finite entry"
            )));
        }
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > SIMPLEX_TOL {
            return Err(DutiError::InvalidData(format!(
                "row {i} sums to {s}, not 1"
            )));
        }
    }
    Ok(())
}

/// Trained learner parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// Dual coefficients, n x 1 for ridge regression and n x k for logistic.
    pub alpha: DMatrix<f64>,
    pub lambda: f64,
    pub kernel: KernelConfig,
    /// Hex digest of the training inputs that produced `alpha`.
    pub train_fingerprint: String,
}

/// Training indices flagged at one round of the driver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlagSet {
    pub iteration: usize,
    pub gamma: f64,
    indices: Vec<usize>,
}

impl FlagSet {
    /// Builds a flag set from arbitrary indices; they are sorted and deduplicated.
    pub fn new(iteration: usize, gamma: f64, mut indices: Vec<usize>, n: usize) -> Result<Self> {
        indices.sort_unstable();
        indices.dedup();
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(DutiError::InvalidData(format!(
                "flag index {bad} out of range for {n} training items"
            )));
        }
        Ok(Self {
            iteration,
            gamma,
            indices,
        })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn contains(&self, i: usize) -> bool {
        self.indices.binary_search(&i).is_ok()
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Outcome of one driver round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoundStatus {
    Converged,
    /// The outer optimizer hit its iteration cap; the best iterate was kept.
    NotConverged,
    /// The round's optimization failed and was skipped.
    Failed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Round {
    pub iteration: usize,
    pub gamma: f64,
    pub delta: DeltaState,
    pub flags: FlagSet,
    pub status: RoundStatus,
}

/// Suggested replacement label for a flagged item.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Fix {
    Class(usize),
    Value(f64),
}

impl Fix {
    pub fn as_f64(&self) -> f64 {
        match *self {
            Fix::Class(c) => c as f64,
            Fix::Value(v) => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedFlag {
    pub index: usize,
    /// 1-based position in the ranking.
    pub rank: usize,
    /// Driver round at which the item was first flagged.
    pub first_iteration: usize,
    pub first_gamma: f64,
    /// |delta_i| for regression, 1 - delta_{i,y_i} for classification, at the first flag.
    pub deviation: f64,
    pub original_label: f64,
    pub fix: Fix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DebugReport {
    pub task: Task,
    pub n: usize,
    /// Largest sparsity weight with a trivial solution; 0 if nothing to debug.
    pub gamma0: f64,
    pub trajectory: Vec<Round>,
    pub ranking: Vec<RankedFlag>,
}

impl DebugReport {
    pub fn empty(task: Task, n: usize, gamma0: f64) -> Self {
        Self {
            task,
            n,
            gamma0,
            trajectory: Vec::new(),
            ranking: Vec::new(),
        }
    }

    pub fn ranked_indices(&self) -> Vec<usize> {
        self.ranking.iter().map(|r| r.index).collect()
    }

    pub fn converged(&self) -> bool {
        self.trajectory
            .iter()
            .all(|r| r.status == RoundStatus::Converged)
    }
}
