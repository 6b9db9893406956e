//! Confusion matrices and macro-averaged accuracy, precision, recall and F1.

use crate::error::{Error, Result};

/// `counts[i][j]`: records of true class `i` predicted as `j`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
}

/// Accuracy as a percentage, the rest as fractions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricQuad {
    pub acc: f64,
    pub prc: f64,
    pub rec: f64,
    pub f1: f64,
}

/// Precision, recall and F1 of one class.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl ConfusionMatrix {
    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let c = counts.len();
        if counts.iter().any(|r| r.len() != c) {
            return Err(Error::Invalid("confusion matrix must be square".into()));
        }
        Ok(ConfusionMatrix { counts })
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth][predicted]
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    pub fn col_sum(&self, j: usize) -> u64 {
        self.counts.iter().map(|r| r[j]).sum()
    }

    /// Scores of class `i`; an empty denominator scores 0.
    pub fn class_scores(&self, i: usize) -> ClassScores {
        let tp = self.counts[i][i] as f64;
        let ratio = |den: u64| if den == 0 { 0.0 } else { tp / den as f64 };
        let precision = ratio(self.col_sum(i));
        let recall = ratio(self.row_sum(i));
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        ClassScores { precision, recall, f1 }
    }
}

pub fn confusion(y_true: &[usize], y_pred: &[usize], c: usize) -> Result<ConfusionMatrix> {
    if y_true.len() != y_pred.len() {
        return Err(Error::Invalid(format!(
            "{} true labels vs {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    let mut counts = vec![vec![0u64; c]; c];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        if t >= c || p >= c {
            return Err(Error::Invalid(format!("label {} outside [0, {c})", t.max(p))));
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix { counts })
}

/// Accuracy over all records; precision, recall and F1 averaged without
/// weights over the classes that occur in the ground truth.
pub fn metrics(cm: &ConfusionMatrix) -> Result<MetricQuad> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Invalid("confusion matrix is empty".into()));
    }
    let trace: u64 = (0..cm.num_classes()).map(|i| cm.counts[i][i]).sum();
    let present: Vec<usize> = (0..cm.num_classes()).filter(|&i| cm.row_sum(i) > 0).collect();
    let n = present.len() as f64;
    let (mut prc, mut rec, mut f1) = (0.0, 0.0, 0.0);
    for &i in &present {
        let s = cm.class_scores(i);
        prc += s.precision;
        rec += s.recall;
        f1 += s.f1;
    }
    Ok(MetricQuad {
        acc: 100.0 * trace as f64 / total as f64,
        prc: prc / n,
        rec: rec / n,
        f1: f1 / n,
    })
}
