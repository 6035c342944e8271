//! Datasets, CSV ingestion, splits and synthetic shift fixtures.

mod csv_io;
mod shift;
mod simulate;
mod split;

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learners::LossKind;

pub use csv_io::{
    load_csv, load_csv_with_schema, load_features_with_schema, read_csv, read_csv_with_schema,
    read_features_with_schema, write_csv, CsvSpec,
};
pub use shift::{construct_shift, ShiftConstructionConfig};
pub use simulate::{segment_intercepts, simulate_local_covshift, SyntheticConfig};
pub use split::{kfold_plan, split_base_tune, Fold, SplitPlan};

/// Column name used when a dataset is written back to CSV.
pub const SEGMENT_COLUMN: &str = "__segment__";

/// Outcome space of a prediction task.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskKind {
    Regression,
    Binary,
    Multiclass { classes: usize },
}

impl TaskKind {
    pub fn multiclass(classes: usize) -> Result<Self> {
        if classes < 3 {
            return Err(Error::invalid(format!(
                "multiclass tasks need at least 3 classes, got {classes}"
            )));
        }
        Ok(TaskKind::Multiclass { classes })
    }

    /// Number of classes, or `None` for regression.
    pub fn n_classes(&self) -> Option<usize> {
        match *self {
            TaskKind::Regression => None,
            TaskKind::Binary => Some(2),
            TaskKind::Multiclass { classes } => Some(classes),
        }
    }

    pub fn is_classification(&self) -> bool {
        !matches!(self, TaskKind::Regression)
    }

    pub fn loss(&self) -> LossKind {
        match *self {
            TaskKind::Regression => LossKind::Squared,
            TaskKind::Binary => LossKind::Logistic,
            TaskKind::Multiclass { classes } => LossKind::Softmax(classes),
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaskKind::Regression => write!(f, "regression"),
            TaskKind::Binary => write!(f, "binary"),
            TaskKind::Multiclass { classes } => write!(f, "multiclass:{classes}"),
        }
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "regression" => Ok(TaskKind::Regression),
            "binary" => Ok(TaskKind::Binary),
            other => match other.strip_prefix("multiclass:") {
                Some(k) => {
                    let k = k
                        .parse::<usize>()
                        .map_err(|_| Error::invalid(format!("bad class count in `{other}`")))?;
                    TaskKind::multiclass(k)
                }
                None => Err(Error::invalid(format!(
                    "unknown task `{other}` (expected regression, binary or multiclass:K)"
                ))),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    /// One-hot encoded; `categories` is sorted lexicographically.
    Categorical { categories: Vec<String> },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureColumn {
    pub name: String,
    pub kind: ColumnKind,
}

impl FeatureColumn {
    /// Names of the encoded matrix columns this source column expands to.
    pub fn encoded_names(&self) -> Vec<String> {
        match &self.kind {
            ColumnKind::Numeric => vec![self.name.clone()],
            ColumnKind::Categorical { categories } => categories
                .iter()
                .map(|c| format!("{}={}", self.name, c))
                .collect(),
        }
    }

    pub fn width(&self) -> usize {
        match &self.kind {
            ColumnKind::Numeric => 1,
            ColumnKind::Categorical { categories } => categories.len(),
        }
    }
}

/// Recovers `(column, categories)` pairs from one-hot encoded feature names,
/// in first-appearance order. Numeric columns are skipped.
pub fn decode_categorical_names(
    names: &[String],
    columns: &[FeatureColumn],
) -> Vec<(String, Vec<String>)> {
    let mut out: Vec<(String, Vec<String>)> = Vec::new();
    for col in columns {
        if let ColumnKind::Categorical { .. } = col.kind {
            let prefix = format!("{}=", col.name);
            let cats = names
                .iter()
                .filter_map(|n| n.strip_prefix(&prefix).map(str::to_string))
                .collect();
            out.push((col.name.clone(), cats));
        }
    }
    out
}

/// Everything needed to encode a CSV consistently with a training file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataSchema {
    pub label_col: String,
    pub segment_col: String,
    pub group_col: Option<String>,
    pub task: TaskKind,
    pub columns: Vec<FeatureColumn>,
    /// Segment names in id order (first-appearance order in the training file).
    pub segment_names: Vec<String>,
    /// Class names in index order; `None` for regression.
    pub class_names: Option<Vec<String>>,
}

impl DataSchema {
    pub fn feature_names(&self) -> Vec<String> {
        self.columns.iter().flat_map(|c| c.encoded_names()).collect()
    }

    pub fn n_features(&self) -> usize {
        self.columns.iter().map(FeatureColumn::width).sum()
    }
}

/// Labeled, segmented training or evaluation data.
#[derive(Clone, Debug)]
pub struct Dataset {
    features: Array2<f64>,
    labels: Array1<f64>,
    segments: Vec<usize>,
    groups: Option<Vec<usize>>,
    schema: DataSchema,
}

impl Dataset {
    /// Builds a dataset from already-encoded parts. The schema's
    /// `segment_names` define the segment vocabulary.
    pub fn new(
        features: Array2<f64>,
        labels: Array1<f64>,
        segments: Vec<usize>,
        groups: Option<Vec<usize>>,
        schema: DataSchema,
    ) -> Result<Self> {
        let n = features.nrows();
        if n == 0 {
            return Err(Error::Empty("dataset has no rows".into()));
        }
        if labels.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: labels.len(),
            });
        }
        if segments.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: segments.len(),
            });
        }
        if let Some(g) = &groups {
            if g.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: g.len(),
                });
            }
        }
        if features.ncols() != schema.n_features() {
            return Err(Error::DimensionMismatch {
                expected: schema.n_features(),
                got: features.ncols(),
            });
        }
        if let Some((i, _)) = features
            .outer_iter()
            .enumerate()
            .find(|(_, r)| r.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::invalid(format!("row {i} has a non-finite feature")));
        }
        if let Some(&s) = segments.iter().find(|&&s| s >= schema.segment_names.len()) {
            return Err(Error::invalid(format!(
                "segment id {s} outside the vocabulary of {}",
                schema.segment_names.len()
            )));
        }
        match schema.task.n_classes() {
            None => {
                if labels.iter().any(|y| !y.is_finite()) {
                    return Err(Error::invalid("non-finite regression label"));
                }
            }
            Some(k) => {
                if let Some(y) = labels
                    .iter()
                    .find(|&&y| y < 0.0 || y >= k as f64 || y.fract() != 0.0)
                {
                    return Err(Error::invalid(format!(
                        "class label {y} is not an index below {k}"
                    )));
                }
            }
        }
        Ok(Dataset {
            features,
            labels,
            segments,
            groups,
            schema,
        })
    }

    /// Dataset with numeric feature columns named `names` and segments named
    /// by their ids.
    pub fn from_parts(
        features: Array2<f64>,
        labels: Array1<f64>,
        segments: Vec<usize>,
        task: TaskKind,
        feature_names: Vec<String>,
    ) -> Result<Self> {
        let n_segments = segments.iter().max().map_or(0, |m| m + 1);
        let schema = DataSchema {
            label_col: "y".into(),
            segment_col: SEGMENT_COLUMN.into(),
            group_col: None,
            task,
            columns: feature_names
                .into_iter()
                .map(|name| FeatureColumn {
                    name,
                    kind: ColumnKind::Numeric,
                })
                .collect(),
            segment_names: (0..n_segments).map(|s| s.to_string()).collect(),
            class_names: task
                .n_classes()
                .map(|k| (0..k).map(|c| c.to_string()).collect()),
        };
        Dataset::new(features, labels, segments, None, schema)
    }

    pub fn with_groups(mut self, groups: Vec<usize>) -> Result<Self> {
        if groups.len() != self.n_rows() {
            return Err(Error::DimensionMismatch {
                expected: self.n_rows(),
                got: groups.len(),
            });
        }
        self.groups = Some(groups);
        Ok(self)
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &Array1<f64> {
        &self.labels
    }

    pub fn segments(&self) -> &[usize] {
        &self.segments
    }

    pub fn groups(&self) -> Option<&[usize]> {
        self.groups.as_deref()
    }

    pub fn schema(&self) -> &DataSchema {
        &self.schema
    }

    pub fn task(&self) -> TaskKind {
        self.schema.task
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.schema.feature_names()
    }

    pub fn segment_names(&self) -> &[String] {
        &self.schema.segment_names
    }

    pub fn n_rows(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    /// Size of the segment vocabulary (segments may be absent from a subset).
    pub fn n_segments(&self) -> usize {
        self.schema.segment_names.len()
    }

    /// Row indices of each segment id, ascending.
    pub fn segment_rows(&self) -> Vec<Vec<usize>> {
        let mut rows = vec![Vec::new(); self.n_segments()];
        for (i, &s) in self.segments.iter().enumerate() {
            rows[s].push(i);
        }
        rows
    }

    /// Subset of rows in the given order, keeping the vocabulary.
    pub fn select(&self, idx: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select(Axis(0), idx),
            labels: self.labels.select(Axis(0), idx),
            segments: idx.iter().map(|&i| self.segments[i]).collect(),
            groups: self
                .groups
                .as_ref()
                .map(|g| idx.iter().map(|&i| g[i]).collect()),
            schema: self.schema.clone(),
        }
    }

    /// The unlabeled view used as test features.
    pub fn to_features(&self) -> SegmentedFeatures {
        SegmentedFeatures {
            x: self.features.clone(),
            segments: self.segments.clone(),
            segment_names: self.schema.segment_names.clone(),
        }
    }

    /// Label column as class indices. Only meaningful for classification.
    pub fn class_labels(&self) -> Vec<usize> {
        self.labels.iter().map(|&y| y as usize).collect()
    }
}

/// Unlabeled rows with segment ids, such as deployment-time test features.
#[derive(Clone, Debug)]
pub struct SegmentedFeatures {
    pub x: Array2<f64>,
    pub segments: Vec<usize>,
    /// Vocabulary; ids past the training vocabulary are segments unseen in training.
    pub segment_names: Vec<String>,
}

impl SegmentedFeatures {
    pub fn n_rows(&self) -> usize {
        self.x.nrows()
    }

    /// Row indices of each segment id in `0..n`, where `n` covers at least
    /// `min_segments` ids.
    pub fn segment_rows(&self, min_segments: usize) -> Vec<Vec<usize>> {
        let n = self
            .segment_names
            .len()
            .max(min_segments)
            .max(self.segments.iter().max().map_or(0, |m| m + 1));
        let mut rows = vec![Vec::new(); n];
        for (i, &s) in self.segments.iter().enumerate() {
            rows[s].push(i);
        }
        rows
    }

    pub fn select(&self, idx: &[usize]) -> SegmentedFeatures {
        SegmentedFeatures {
            x: self.x.select(Axis(0), idx),
            segments: idx.iter().map(|&i| self.segments[i]).collect(),
            segment_names: self.segment_names.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn task_parse_roundtrip() {
        for t in [
            TaskKind::Regression,
            TaskKind::Binary,
            TaskKind::Multiclass { classes: 4 },
        ] {
            assert_eq!(t.to_string().parse::<TaskKind>().unwrap(), t);
        }
        assert!("multiclass:2".parse::<TaskKind>().is_err());
        assert!("ranking".parse::<TaskKind>().is_err());
    }

    #[test]
    fn rejects_bad_class_labels() {
        let r = Dataset::from_parts(
            array![[0.0], [1.0]],
            array![0.0, 2.0],
            vec![0, 0],
            TaskKind::Binary,
            vec!["x".into()],
        );
        assert!(r.is_err());
    }

    #[test]
    fn select_keeps_vocabulary() {
        let d = Dataset::from_parts(
            array![[0.0], [1.0], [2.0]],
            array![0.0, 1.0, 2.0],
            vec![0, 1, 2],
            TaskKind::Regression,
            vec!["x".into()],
        )
        .unwrap();
        let s = d.select(&[2]);
        assert_eq!(s.n_rows(), 1);
        assert_eq!(s.n_segments(), 3);
        assert_eq!(s.segments(), &[2]);
    }
}
