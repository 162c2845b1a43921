//! Soft targets mixing the annotation with the student's belief, their
//! sharpening, and the resulting weighted cross-entropy for the teacher.

use crate::error::{invalid, Error, Result};
use crate::nn::ops::{check_labels, softmax, PROB_FLOOR};
use crate::nn::{Matrix, ProbBatch};

/// `β^c = (1 − α)·[c = label] + α·P_S(c)`.
pub fn beta_targets(label: usize, student_probs: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if label >= student_probs.len() {
        return Err(invalid(format!(
            "label {label} outside [0, {})",
            student_probs.len()
        )));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(invalid(format!("alpha {alpha} outside [0, 1]")));
    }
    Ok(student_probs
        .iter()
        .enumerate()
        .map(|(c, &p)| {
            let onehot = if c == label { 1.0 } else { 0.0 };
            (1.0 - alpha) * onehot + alpha * p
        })
        .collect())
}

/// `S(β)^c = (β^c)^(1+α) / Σ_i (β^i)^(1+α)`.
pub fn sharpen(beta: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if beta.iter().any(|&b| !(b >= 0.0 && b.is_finite())) {
        return Err(invalid("sharpen expects non-negative finite weights"));
    }
    let exponent = 1.0 + alpha;
    let powered: Vec<f64> = beta
        .iter()
        .map(|&b| if b == 0.0 { 0.0 } else { b.powf(exponent) })
        .collect();
    let norm: f64 = powered.iter().sum();
    if !(norm > 0.0) {
        return Err(Error::DegenerateTarget);
    }
    Ok(powered.into_iter().map(|p| p / norm).collect())
}

/// Sharpened soft targets for a batch, one α per sample.
pub fn sharpened_targets(
    labels: &[usize],
    student_probs: &ProbBatch,
    alphas: &[f64],
) -> Result<Matrix> {
    check_labels(labels, student_probs.rows(), student_probs.cols())?;
    if alphas.len() != labels.len() {
        return Err(invalid(format!(
            "{} alphas for a batch of {}",
            alphas.len(),
            labels.len()
        )));
    }
    let mut out = Matrix::zeros(labels.len(), student_probs.cols());
    for (i, (&y, &alpha)) in labels.iter().zip(alphas).enumerate() {
        let beta = beta_targets(y, student_probs.row(i), alpha)?;
        out.row_mut(i).copy_from_slice(&sharpen(&beta, alpha)?);
    }
    Ok(out)
}

/// `−(1/|X|) Σ_x Σ_c S(β^c_x)·log P_T(c|x)` and its gradient with respect
/// to the teacher logits, `(P_T − S(β)) / batch`.
pub fn robust_ce(teacher_logits: &Matrix, targets: &Matrix) -> Result<(f64, Matrix)> {
    if teacher_logits.rows() != targets.rows() || teacher_logits.cols() != targets.cols() {
        return Err(invalid(format!(
            "logits {}x{} and targets {}x{} differ in shape",
            teacher_logits.rows(),
            teacher_logits.cols(),
            targets.rows(),
            targets.cols()
        )));
    }
    if targets.rows() == 0 {
        return Err(invalid("robust loss of an empty batch"));
    }
    let batch = targets.rows() as f64;
    let mut grad = softmax(teacher_logits).into_matrix();
    let mut loss = 0.0;
    for i in 0..targets.rows() {
        let t = targets.row(i);
        let row = grad.row_mut(i);
        for (g, &target) in row.iter_mut().zip(t) {
            if target != 0.0 {
                loss -= target * g.max(PROB_FLOOR).ln();
            }
            *g = (*g - target) / batch;
        }
    }
    Ok((loss / batch, grad))
}
