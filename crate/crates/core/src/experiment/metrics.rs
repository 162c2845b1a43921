//! Classification accuracy and label-noise detection metrics.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::nn::ProbBatch;
use crate::noise::OtsuSplit;

/// Fraction of rows whose argmax (lowest class on ties) equals the label.
pub fn accuracy(probs: &ProbBatch, labels: &[usize]) -> Result<f64> {
    if probs.rows() != labels.len() {
        return Err(invalid(format!(
            "{} prediction rows for {} labels",
            probs.rows(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(invalid("accuracy of an empty batch"));
    }
    let correct = probs
        .argmax()
        .iter()
        .zip(labels)
        .filter(|(p, y)| p == y)
        .count();
    Ok(correct as f64 / labels.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Precision, recall and F1 of a predicted noisy set against the true one.
/// Empty predictions have precision 0, an empty truth has recall 0.
pub fn detection_metrics(predicted: &[usize], truth: &[usize], n: usize) -> DetectionMetrics {
    let predicted: BTreeSet<usize> = predicted.iter().copied().filter(|&i| i < n).collect();
    let truth: BTreeSet<usize> = truth.iter().copied().filter(|&i| i < n).collect();
    let hits = predicted.intersection(&truth).count() as f64;
    let precision = if predicted.is_empty() {
        0.0
    } else {
        hits / predicted.len() as f64
    };
    let recall = if truth.is_empty() {
        0.0
    } else {
        hits / truth.len() as f64
    };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    DetectionMetrics {
        precision,
        recall,
        f1,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdChoice {
    Mu1,
    S,
    Mu2,
}

impl ThresholdChoice {
    pub const ALL: [ThresholdChoice; 3] = [
        ThresholdChoice::Mu1,
        ThresholdChoice::S,
        ThresholdChoice::Mu2,
    ];

    pub fn value(self, split: &OtsuSplit) -> f64 {
        match self {
            ThresholdChoice::Mu1 => split.mu1,
            ThresholdChoice::S => split.s,
            ThresholdChoice::Mu2 => split.mu2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ThresholdChoice::Mu1 => "mu1",
            ThresholdChoice::S => "s",
            ThresholdChoice::Mu2 => "mu2",
        }
    }
}

impl fmt::Display for ThresholdChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ThresholdChoice {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mu1" => Ok(ThresholdChoice::Mu1),
            "s" => Ok(ThresholdChoice::S),
            "mu2" => Ok(ThresholdChoice::Mu2),
            other => Err(invalid(format!(
                "unknown threshold {other:?}, expected mu1, s or mu2"
            ))),
        }
    }
}

/// Indices whose agreement value lies strictly below the chosen threshold.
pub fn classify_noisy(values: &[f64], split: &OtsuSplit, choice: ThresholdChoice) -> Vec<usize> {
    let threshold = choice.value(split);
    values
        .iter()
        .enumerate()
        .filter(|(_, &v)| v < threshold)
        .map(|(i, _)| i)
        .collect()
}

/// Indices flagged in a boolean mask.
pub fn mask_indices(mask: &[bool]) -> Vec<usize> {
    mask.iter()
        .enumerate()
        .filter(|(_, &m)| m)
        .map(|(i, _)| i)
        .collect()
}
