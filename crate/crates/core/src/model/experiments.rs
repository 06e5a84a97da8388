//! Cross-validation, personalization and learning-curve protocols.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    map_labels, stratified_kfold, train, BinaryDataset, BinaryTask, ClassifierKind, ClassifierSpec,
    ConfusionMatrix, ModelError,
};
use crate::dataset::LabeledDataset;

/// Independent child seed for `(base, tag)` (SplitMix64 finalizer).
pub fn derive_seed(base: u64, tag: u64) -> u64 {
    let mut z = base
        ^ tag
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(0x6A09_E667_F3BC_C909);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn mean_std(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
    (m, v.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub k: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { k: 5, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: Option<BinaryTask>,
    pub classifier: ClassifierKind,
    pub k: usize,
    pub seed: u64,
    pub positives: usize,
    pub negatives: usize,
    pub fold_scores: Vec<f64>,
    pub confusions: Vec<ConfusionMatrix>,
    pub mean: f64,
    /// Population standard deviation of the fold scores.
    pub std: f64,
}

impl EvalReport {
    /// `0.76 ± 0.05`
    pub fn score_cell(&self) -> String {
        format!("{:.2} ± {:.2}", self.mean, self.std)
    }

    pub fn table(&self) -> String {
        let (id, desc) = match self.task {
            Some(t) => (t.to_string(), t.description().to_string()),
            None => ("-".into(), "custom".into()),
        };
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<5} {:<66} {:>16} {:>14}",
            "Task",
            "Definition",
            "Samples (1/0)",
            self.classifier.short_name()
        );
        let _ = writeln!(
            s,
            "{:<5} {:<66} {:>16} {:>14}",
            id,
            desc,
            format!("{}/{}", self.positives, self.negatives),
            self.score_cell()
        );
        s
    }

    pub fn to_csv(&self) -> String {
        let task = self.task.map(|t| t.to_string()).unwrap_or_default();
        let model = self.classifier.short_name();
        let mut s = String::from("task,model,k,seed,fold,macro_f1,tp,fp,tn,fn\n");
        for (i, (f1, c)) in self.fold_scores.iter().zip(&self.confusions).enumerate() {
            let _ = writeln!(
                s,
                "{task},{model},{},{},{i},{f1},{},{},{},{}",
                self.k, self.seed, c.tp, c.fp, c.tn, c.fn_
            );
        }
        let _ = writeln!(
            s,
            "{task},{model},{},{},mean,{},,,,",
            self.k, self.seed, self.mean
        );
        let _ = writeln!(
            s,
            "{task},{model},{},{},std,{},,,,",
            self.k, self.seed, self.std
        );
        s
    }
}

/// Stratified K-fold macro-F1 on an already binarized dataset.
pub fn crossval_binary(
    data: &BinaryDataset,
    spec: &ClassifierSpec,
    cfg: &EvalConfig,
) -> Result<EvalReport, ModelError> {
    let folds = stratified_kfold(&data.labels, cfg.k, cfg.seed)?;
    let results = folds
        .par_iter()
        .enumerate()
        .map(|(i, test)| {
            let mut in_test = vec![false; data.len()];
            for &t in test {
                in_test[t] = true;
            }
            let train_idx: Vec<usize> = (0..data.len()).filter(|&j| !in_test[j]).collect();
            let model = train(
                &spec.with_seed(derive_seed(spec.seed, i as u64)),
                &data.subset(&train_idx),
            )?;
            let test_set = data.subset(test);
            let pred = model.predict_all(&test_set.features);
            ConfusionMatrix::from_predictions(&pred, &test_set.labels)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let fold_scores: Vec<f64> = results.iter().map(ConfusionMatrix::macro_f1).collect();
    let (mean, std) = mean_std(&fold_scores);
    let (negatives, positives) = data.class_counts();
    Ok(EvalReport {
        task: None,
        classifier: spec.kind,
        k: cfg.k,
        seed: cfg.seed,
        positives,
        negatives,
        fold_scores,
        confusions: results,
        mean,
        std,
    })
}

pub fn run_crossval(
    dataset: &LabeledDataset,
    task: BinaryTask,
    spec: &ClassifierSpec,
    cfg: &EvalConfig,
) -> Result<EvalReport, ModelError> {
    let data = map_labels(dataset, task)?;
    let mut report = crossval_binary(&data, spec, cfg)?;
    report.task = Some(task);
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonalizationReport {
    pub subject: String,
    pub before: f64,
    pub after: f64,
    pub test_rows: usize,
    pub added_rows: usize,
}

pub const MIN_PERSONAL_ROWS: usize = 20;

/// Held-out subject evaluated on a random half A, first with a model
/// trained on everyone else, then with the other half B added to training.
pub fn personalize_binary(
    data: &BinaryDataset,
    held: &str,
    spec: &ClassifierSpec,
    seed: u64,
) -> Result<PersonalizationReport, ModelError> {
    let mut own: Vec<usize> = (0..data.len())
        .filter(|&i| data.subjects[i] == held)
        .collect();
    if own.len() < MIN_PERSONAL_ROWS {
        return Err(ModelError::InsufficientSubjectData {
            subject: held.to_string(),
            count: own.len(),
            need: MIN_PERSONAL_ROWS,
        });
    }
    let others: Vec<usize> = (0..data.len())
        .filter(|&i| data.subjects[i] != held)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    own.shuffle(&mut rng);
    let (half_a, half_b) = own.split_at(own.len() / 2);

    let test = data.subset(half_a);
    let cohort = data.subset(&others);
    let model_seed = derive_seed(spec.seed, seed);
    let before_model = train(&spec.with_seed(model_seed), &cohort)?;
    let mut augmented = cohort;
    augmented.extend(&data.subset(half_b));
    let after_model = train(&spec.with_seed(model_seed), &augmented)?;

    let score = |m: &super::Model| {
        ConfusionMatrix::from_predictions(&m.predict_all(&test.features), &test.labels)
            .map(|c| c.macro_f1())
    };
    Ok(PersonalizationReport {
        subject: held.to_string(),
        before: score(&before_model)?,
        after: score(&after_model)?,
        test_rows: half_a.len(),
        added_rows: half_b.len(),
    })
}

pub fn run_personalization(
    dataset: &LabeledDataset,
    held: &str,
    task: BinaryTask,
    spec: &ClassifierSpec,
    seed: u64,
) -> Result<PersonalizationReport, ModelError> {
    personalize_binary(&map_labels(dataset, task)?, held, spec, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningCurveConfig {
    pub test_size: usize,
    /// Ascending training-set sizes.
    pub train_sizes: Vec<usize>,
    pub repeats: usize,
    pub seed: u64,
}

impl LearningCurveConfig {
    /// 100 test rows, 100 repeats, training sizes from 100 upward.
    pub fn standard(max_train: usize, step: usize, seed: u64) -> Self {
        Self {
            test_size: 100,
            train_sizes: (100..=max_train).step_by(step.max(1)).collect(),
            repeats: 100,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub train_size: usize,
    pub mean: f64,
    pub std: f64,
}

/// Mean and standard deviation of macro-F1 per training size over repeated
/// random test/train draws from one subject's rows.
pub fn run_learning_curve(
    data: &BinaryDataset,
    cfg: &LearningCurveConfig,
    spec: &ClassifierSpec,
) -> Result<Vec<CurvePoint>, ModelError> {
    if cfg.repeats == 0 || cfg.train_sizes.is_empty() || cfg.test_size == 0 {
        return Err(ModelError::Invalid(
            "learning curve needs repeats, sizes and a test set".into(),
        ));
    }
    if cfg.train_sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(ModelError::Invalid(
            "training sizes must be strictly ascending".into(),
        ));
    }
    let largest = *cfg.train_sizes.last().expect("non-empty");
    if data.len() < cfg.test_size + largest {
        return Err(ModelError::InsufficientRows {
            available: data.len(),
            test_size: cfg.test_size,
            requested: largest,
            max_feasible: data.len().saturating_sub(cfg.test_size),
        });
    }
    let scores = (0..cfg.repeats)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, r as u64));
            let mut idx: Vec<usize> = (0..data.len()).collect();
            idx.shuffle(&mut rng);
            let (test_idx, pool) = idx.split_at(cfg.test_size);
            let test = data.subset(test_idx);
            let model_spec = spec.with_seed(derive_seed(spec.seed, r as u64));
            cfg.train_sizes
                .iter()
                .map(|&s| {
                    let model = train(&model_spec, &data.subset(&pool[..s]))?;
                    ConfusionMatrix::from_predictions(
                        &model.predict_all(&test.features),
                        &test.labels,
                    )
                    .map(|c| c.macro_f1())
                })
                .collect::<Result<Vec<f64>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(cfg
        .train_sizes
        .iter()
        .enumerate()
        .map(|(j, &train_size)| {
            let col: Vec<f64> = scores.iter().map(|row| row[j]).collect();
            let (mean, std) = mean_std(&col);
            CurvePoint {
                train_size,
                mean,
                std,
            }
        })
        .collect())
}
