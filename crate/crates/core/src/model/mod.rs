//! Binary stress classification and the evaluation protocols built on it.

mod experiments;
mod folds;
mod forest;
mod knn;
mod metrics;

pub use experiments::{
    crossval_binary, derive_seed, personalize_binary, run_crossval, run_learning_curve,
    run_personalization, CurvePoint, EvalConfig, EvalReport, LearningCurveConfig,
    PersonalizationReport, MIN_PERSONAL_ROWS,
};
pub use folds::stratified_kfold;
pub use forest::{DecisionTree, ForestParams, RandomForest};
pub use knn::KnnModel;
pub use metrics::{macro_f1, spearman, ConfusionMatrix};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{LabeledDataset, LabeledRow};
use crate::ema::StressLevel;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("task {task} leaves class {class} empty")]
    DegenerateTask { task: BinaryTask, class: u8 },
    #[error("class {class} has {count} rows, fewer than {k} folds")]
    ClassTooSmall { class: u8, count: usize, k: usize },
    #[error("training data contains a single class")]
    SingleClass,
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("length mismatch: {0} predictions vs {1} labels")]
    LengthMismatch(usize, usize),
    #[error("subject `{subject}` has {count} rows, need at least {need}")]
    InsufficientSubjectData {
        subject: String,
        count: usize,
        need: usize,
    },
    #[error("{available} rows cannot hold a test set of {test_size} plus {requested} training rows; largest feasible training size is {max_feasible}")]
    InsufficientRows {
        available: usize,
        test_size: usize,
        requested: usize,
        max_feasible: usize,
    },
    #[error("classifier `{0}` is an optional extension that is not built in")]
    Unsupported(String),
}

/// The four binary tasks; levels outside both sets are excluded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BinaryTask {
    T1,
    T2,
    T3,
    T4,
}

impl BinaryTask {
    pub const ALL: [BinaryTask; 4] = [
        BinaryTask::T1,
        BinaryTask::T2,
        BinaryTask::T3,
        BinaryTask::T4,
    ];

    pub fn positive(self) -> &'static [StressLevel] {
        use StressLevel::*;
        match self {
            BinaryTask::T1 => &[ALittleBit],
            BinaryTask::T2 => &[Some],
            BinaryTask::T3 => &[ALot, Extremely],
            BinaryTask::T4 => &[Some, ALot, Extremely],
        }
    }

    pub fn negative(self) -> &'static [StressLevel] {
        use StressLevel::*;
        match self {
            BinaryTask::T4 => &[NotAtAll, ALittleBit],
            _ => &[NotAtAll],
        }
    }

    /// 1, 0, or `None` when the level is excluded from this task.
    pub fn map(self, level: StressLevel) -> Option<u8> {
        if self.positive().contains(&level) {
            Some(1)
        } else if self.negative().contains(&level) {
            Some(0)
        } else {
            None
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            BinaryTask::T1 => "a little bit (1) VS. baseline (0)",
            BinaryTask::T2 => "some (1) VS. baseline (0)",
            BinaryTask::T3 => "a lot or extremely (1) VS. baseline (0)",
            BinaryTask::T4 => "some, a lot or extremely (1) VS. not at all or a little bit (0)",
        }
    }
}

impl fmt::Display for BinaryTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for BinaryTask {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "T1" => Ok(BinaryTask::T1),
            "T2" => Ok(BinaryTask::T2),
            "T3" => Ok(BinaryTask::T3),
            "T4" => Ok(BinaryTask::T4),
            other => Err(ModelError::Invalid(format!("unknown task `{other}`"))),
        }
    }
}

/// Feature rows with 0/1 labels.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BinaryDataset {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
    pub subjects: Vec<String>,
}

impl BinaryDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn push(&mut self, features: Vec<f64>, label: u8, subject: impl Into<String>) {
        self.features.push(features);
        self.labels.push(label);
        self.subjects.push(subject.into());
    }

    /// (negatives, positives)
    pub fn class_counts(&self) -> (usize, usize) {
        let pos = self.labels.iter().filter(|&&y| y == 1).count();
        (self.len() - pos, pos)
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            features: idx.iter().map(|&i| self.features[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            subjects: idx.iter().map(|&i| self.subjects[i].clone()).collect(),
        }
    }

    pub fn extend(&mut self, other: &BinaryDataset) {
        self.features.extend(other.features.iter().cloned());
        self.labels.extend(&other.labels);
        self.subjects.extend(other.subjects.iter().cloned());
    }
}

/// Maps five-level labels onto `task`, dropping excluded levels.
pub fn map_labels(dataset: &LabeledDataset, task: BinaryTask) -> Result<BinaryDataset, ModelError> {
    let mut out = BinaryDataset::default();
    for row in &dataset.rows {
        if let Some(y) = task.map(row.level) {
            out.push(row.features.to_array().to_vec(), y, row.subject_id.clone());
        }
    }
    let (neg, pos) = out.class_counts();
    for (class, count) in [(0u8, neg), (1u8, pos)] {
        if count == 0 {
            return Err(ModelError::DegenerateTask { task, class });
        }
    }
    Ok(out)
}

pub fn rows_of_subject<'a>(
    dataset: &'a LabeledDataset,
    subject: &'a str,
) -> impl Iterator<Item = &'a LabeledRow> + 'a {
    dataset.rows.iter().filter(move |r| r.subject_id == subject)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    Knn,
    RandomForest,
}

impl ClassifierKind {
    pub fn short_name(self) -> &'static str {
        match self {
            ClassifierKind::Knn => "kNN",
            ClassifierKind::RandomForest => "RF",
        }
    }
}

impl FromStr for ClassifierKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "knn" => Ok(ClassifierKind::Knn),
            "rf" | "random_forest" | "random-forest" => Ok(ClassifierKind::RandomForest),
            other @ ("mlp" | "svm" | "xgboost") => Err(ModelError::Unsupported(other.to_string())),
            other => Err(ModelError::Invalid(format!("unknown classifier `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierSpec {
    pub kind: ClassifierKind,
    pub knn_k: usize,
    pub forest: ForestParams,
    pub seed: u64,
}

impl ClassifierSpec {
    pub fn knn(k: usize) -> Self {
        Self {
            kind: ClassifierKind::Knn,
            knn_k: k,
            forest: ForestParams::default(),
            seed: 0,
        }
    }

    pub fn random_forest(seed: u64) -> Self {
        Self {
            kind: ClassifierKind::RandomForest,
            knn_k: 5,
            forest: ForestParams::default(),
            seed,
        }
    }

    pub fn of_kind(kind: ClassifierKind, seed: u64) -> Self {
        match kind {
            ClassifierKind::Knn => Self {
                seed,
                ..Self::knn(5)
            },
            ClassifierKind::RandomForest => Self::random_forest(seed),
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.knn_k == 0 {
            return Err(ModelError::Invalid("k must be positive".into()));
        }
        if self.forest.n_trees == 0
            || self.forest.min_leaf == 0
            || self.forest.max_features == Some(0)
        {
            return Err(ModelError::Invalid(
                "forest hyperparameters must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Knn(KnnModel),
    Forest(RandomForest),
}

impl Model {
    pub fn predict(&self, x: &[f64]) -> u8 {
        match self {
            Model::Knn(m) => m.predict(x),
            Model::Forest(m) => m.predict(x),
        }
    }

    pub fn predict_all(&self, xs: &[Vec<f64>]) -> Vec<u8> {
        xs.iter().map(|x| self.predict(x)).collect()
    }
}

pub fn train(spec: &ClassifierSpec, data: &BinaryDataset) -> Result<Model, ModelError> {
    spec.validate()?;
    if data.is_empty() {
        return Err(ModelError::Invalid("empty training set".into()));
    }
    let (neg, pos) = data.class_counts();
    if neg == 0 || pos == 0 {
        return Err(ModelError::SingleClass);
    }
    let dims = data.features[0].len();
    if data
        .features
        .iter()
        .any(|r| r.len() != dims || r.iter().any(|v| !v.is_finite()))
    {
        return Err(ModelError::Invalid(
            "ragged or non-finite feature rows".into(),
        ));
    }
    Ok(match spec.kind {
        ClassifierKind::Knn => Model::Knn(KnnModel::fit(&data.features, &data.labels, spec.knn_k)),
        ClassifierKind::RandomForest => Model::Forest(RandomForest::fit(
            &data.features,
            &data.labels,
            &spec.forest,
            spec.seed,
        )),
    })
}
