//! Softmax and categorical cross-entropy on logit batches.

use std::ops::Deref;

use super::matrix::Matrix;
use crate::error::{invalid, Result};

/// Probabilities are clamped to this floor before taking a logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// Row-normalised class probabilities, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbBatch(Matrix);

impl ProbBatch {
    /// Wraps a matrix after checking that every row is a distribution.
    pub fn new(m: Matrix) -> Result<Self> {
        for (i, row) in m.iter_rows().enumerate() {
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-6 || row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                return Err(invalid(format!(
                    "row {i} is not a probability distribution (sum {sum})"
                )));
            }
        }
        Ok(Self(m))
    }

    pub(crate) fn new_unchecked(m: Matrix) -> Self {
        Self(m)
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    /// `P(y = labels[i] | x_i)` for every row.
    pub fn at_labels(&self, labels: &[usize]) -> Vec<f64> {
        labels
            .iter()
            .enumerate()
            .map(|(i, &y)| self.0.get(i, y))
            .collect()
    }

    /// Index of the largest entry per row; ties go to the lowest class.
    pub fn argmax(&self) -> Vec<usize> {
        self.0.iter_rows().map(argmax).collect()
    }
}

impl Deref for ProbBatch {
    type Target = Matrix;

    fn deref(&self) -> &Matrix {
        &self.0
    }
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (c, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = c;
        }
    }
    best
}

/// Row-wise softmax with max subtraction.
pub fn softmax(logits: &Matrix) -> ProbBatch {
    let mut out = logits.clone();
    for i in 0..out.rows() {
        softmax_in_place(out.row_mut(i));
    }
    ProbBatch(out)
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

pub(crate) fn check_labels(labels: &[usize], rows: usize, num_classes: usize) -> Result<()> {
    if labels.len() != rows {
        return Err(invalid(format!(
            "{} labels for a batch of {rows}",
            labels.len()
        )));
    }
    if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= num_classes) {
        return Err(invalid(format!(
            "label {y} of sample {i} outside [0, {num_classes})"
        )));
    }
    Ok(())
}

/// Mean negative log-likelihood of `labels` and its gradient with respect
/// to the logits, `(softmax − onehot) / batch`.
pub fn cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    check_labels(labels, logits.rows(), logits.cols())?;
    if labels.is_empty() {
        return Err(invalid("cross entropy of an empty batch"));
    }
    let batch = labels.len() as f64;
    let mut grad = softmax(logits).into_matrix();
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let row = grad.row_mut(i);
        loss -= row[y].max(PROB_FLOOR).ln();
        for (c, g) in row.iter_mut().enumerate() {
            let target = if c == y { 1.0 } else { 0.0 };
            *g = (*g - target) / batch;
        }
    }
    Ok((loss / batch, grad))
}
