//! Label-masked distillation from teacher to student, the student's mean
//! maximal probability trace, the online tipping-point detector, and the
//! teacher/student agreement probability.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::nn::ops::check_labels;
use crate::nn::{Matrix, ProbBatch};

/// Squared error between teacher and student logits over every class except
/// the annotated one, averaged over the `|C| − 1` remaining classes and the
/// batch. Teacher logits are constants; the returned gradient is with respect
/// to the student logits and is exactly zero at the label coordinate.
pub fn student_loss(
    teacher_logits: &Matrix,
    student_logits: &Matrix,
    labels: &[usize],
) -> Result<(f64, Matrix)> {
    if teacher_logits.rows() != student_logits.rows()
        || teacher_logits.cols() != student_logits.cols()
    {
        return Err(invalid(format!(
            "teacher logits {}x{} and student logits {}x{} differ in shape",
            teacher_logits.rows(),
            teacher_logits.cols(),
            student_logits.rows(),
            student_logits.cols()
        )));
    }
    let classes = student_logits.cols();
    if classes < 2 {
        return Err(invalid("student loss needs at least 2 classes"));
    }
    check_labels(labels, student_logits.rows(), classes)?;
    if labels.is_empty() {
        return Err(invalid("student loss of an empty batch"));
    }

    let per_sample = (classes - 1) as f64;
    let scale = per_sample * labels.len() as f64;
    let mut grad = Matrix::zeros(student_logits.rows(), classes);
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let t = teacher_logits.row(i);
        let s = student_logits.row(i);
        let g = grad.row_mut(i);
        let mut sample = 0.0;
        for c in (0..classes).filter(|&c| c != y) {
            let diff = t[c] - s[c];
            sample += diff * diff;
            g[c] = -2.0 * diff / scale;
        }
        loss += sample / per_sample;
    }
    Ok((loss / labels.len() as f64, grad))
}

/// Running sum of per-sample maximal probabilities over one epoch.
#[derive(Debug, Clone, Default)]
pub struct MaxProbAccumulator {
    sum: f64,
    count: usize,
}

impl MaxProbAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, probs: &ProbBatch) {
        for row in probs.iter_rows() {
            self.sum += row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            self.count += 1;
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Mean over every pushed sample.
    pub fn finish(&self) -> Result<f64> {
        if self.count == 0 {
            return Err(invalid("mean maximal probability of an empty epoch"));
        }
        Ok(self.sum / self.count as f64)
    }
}

/// `(1/|X|) Σ_x max_c P(c|x)` over a single batch.
pub fn mean_max_probability(probs: &ProbBatch) -> Result<f64> {
    let mut acc = MaxProbAccumulator::new();
    acc.push(probs);
    acc.finish()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TippingPoint {
    /// Epoch whose value is the maximum of its centred window.
    pub epoch: usize,
    /// Epoch at which the maximum could be confirmed, `epoch + k`.
    pub detected_at: usize,
}

/// Epoch-indexed trace of the student's mean maximal probability.
///
/// At epoch `i ≥ 2k` the value at `i − k` is compared against the `2k + 1`
/// values centred on it; the first time it is `≥` all of them the tipping
/// point is latched and returned from then on.
#[derive(Debug, Clone)]
pub struct MaxProbTrace {
    k: usize,
    values: Vec<f64>,
    tipping: Option<TippingPoint>,
}

impl MaxProbTrace {
    pub fn new(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(invalid("tipping window half-width k must be >= 1"));
        }
        Ok(Self {
            k,
            values: Vec::new(),
            tipping: None,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn tipping_point(&self) -> Option<TippingPoint> {
        self.tipping
    }

    /// Appends the next epoch's value and runs the detector.
    pub fn push(&mut self, value: f64) -> Result<Option<TippingPoint>> {
        if !(value > 0.0 && value <= 1.0) {
            return Err(invalid(format!(
                "mean maximal probability {value} outside (0, 1]"
            )));
        }
        self.values.push(value);
        if self.tipping.is_none() {
            self.tipping = window_peak(&self.values, self.k);
        }
        Ok(self.tipping)
    }
}

/// Checks the window ending at the last value of `values`.
fn window_peak(values: &[f64], k: usize) -> Option<TippingPoint> {
    let i = values.len().checked_sub(1)?;
    if i < 2 * k {
        return None;
    }
    let center = i - k;
    let peak = values[center];
    values[i - 2 * k..=i]
        .iter()
        .all(|&v| peak >= v)
        .then_some(TippingPoint {
            epoch: center,
            detected_at: i,
        })
}

/// Replays a complete trace through the online detector.
pub fn detect_tipping_point(values: &[f64], k: usize) -> Result<Option<TippingPoint>> {
    let mut trace = MaxProbTrace::new(k)?;
    for &v in values {
        if let Some(tp) = trace.push(v)? {
            return Ok(Some(tp));
        }
    }
    Ok(None)
}

/// Row-wise renormalised product `P_T(c)·P_S(c) / Σ_i P_T(i)·P_S(i)`.
pub fn agreement(teacher: &ProbBatch, student: &ProbBatch) -> Result<ProbBatch> {
    if teacher.rows() != student.rows() || teacher.cols() != student.cols() {
        return Err(invalid("teacher and student probabilities differ in shape"));
    }
    let mut out = Matrix::zeros(teacher.rows(), teacher.cols());
    for i in 0..teacher.rows() {
        let dst = out.row_mut(i);
        let mut norm = 0.0;
        for ((d, &t), &s) in dst.iter_mut().zip(teacher.row(i)).zip(student.row(i)) {
            *d = t * s;
            norm += *d;
        }
        if !(norm >= 1e-300) {
            return Err(Error::DegenerateAgreement { sample: i });
        }
        for d in dst.iter_mut() {
            *d /= norm;
        }
    }
    Ok(ProbBatch::new_unchecked(out))
}
