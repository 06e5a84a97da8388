use serde::{Deserialize, Serialize};

use super::ModelError;

/// Binary confusion counts with class 1 as "positive".
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl ConfusionMatrix {
    pub fn from_predictions(pred: &[u8], truth: &[u8]) -> Result<Self, ModelError> {
        if pred.len() != truth.len() {
            return Err(ModelError::LengthMismatch(pred.len(), truth.len()));
        }
        let mut m = Self::default();
        for (&p, &t) in pred.iter().zip(truth) {
            match (p, t) {
                (1, 1) => m.tp += 1,
                (1, _) => m.fp += 1,
                (_, 1) => m.fn_ += 1,
                _ => m.tn += 1,
            }
        }
        Ok(m)
    }

    /// F1 of `class`; 0 when the class has no predictions or no support.
    pub fn f1(&self, class: u8) -> f64 {
        let (tp, fp, fn_) = if class == 1 {
            (self.tp, self.fp, self.fn_)
        } else {
            (self.tn, self.fn_, self.fp)
        };
        if tp + fp == 0 || tp + fn_ == 0 {
            return 0.0;
        }
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    }

    pub fn macro_f1(&self) -> f64 {
        (self.f1(0) + self.f1(1)) / 2.0
    }
}

/// Unweighted mean of the two per-class F1 scores.
pub fn macro_f1(pred: &[u8], truth: &[u8]) -> Result<f64, ModelError> {
    if pred.is_empty() {
        return Err(ModelError::Invalid("empty prediction set".into()));
    }
    Ok(ConfusionMatrix::from_predictions(pred, truth)?.macro_f1())
}

fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation (average ranks for ties).
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (ranks(x), ranks(y));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx) * (a - mx)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my) * (b - my)).sum();
    cov / (vx * vy).sqrt()
}
