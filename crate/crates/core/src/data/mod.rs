//! Datasets: synthetic blobs, label corruption, CIFAR-10 binary batches and
//! plain-text label files.

mod cifar;
mod corruption;
mod labels;
mod synthetic;

pub use cifar::{load_cifar10_binary, write_cifar10_binary, CIFAR_IMAGE_BYTES, CIFAR_RECORD_BYTES};
pub use corruption::{inject_noise, NoiseKind, NoiseSpec};
pub use labels::{attach_noisy_labels, load_label_file, write_label_file};
pub use synthetic::{gen_blobs, gen_blobs_split, BlobSpec};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::nn::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Test,
}

/// Features with annotated (possibly corrupted) labels and, when known,
/// the true labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Matrix,
    noisy_labels: Vec<usize>,
    clean_labels: Option<Vec<usize>>,
    num_classes: usize,
    split: SplitTag,
}

impl Dataset {
    pub fn new(
        features: Matrix,
        noisy_labels: Vec<usize>,
        clean_labels: Option<Vec<usize>>,
        num_classes: usize,
        split: SplitTag,
    ) -> Result<Self> {
        if num_classes < 2 {
            return Err(invalid("a dataset needs at least 2 classes"));
        }
        if features.rows() != noisy_labels.len() {
            return Err(invalid(format!(
                "{} feature rows but {} labels",
                features.rows(),
                noisy_labels.len()
            )));
        }
        if let Some(clean) = &clean_labels {
            if clean.len() != noisy_labels.len() {
                return Err(invalid(format!(
                    "{} clean labels but {} noisy labels",
                    clean.len(),
                    noisy_labels.len()
                )));
            }
        }
        let out_of_range = noisy_labels
            .iter()
            .chain(clean_labels.iter().flatten())
            .find(|&&y| y >= num_classes);
        if let Some(y) = out_of_range {
            return Err(invalid(format!("label {y} outside [0, {num_classes})")));
        }
        Ok(Self {
            features,
            noisy_labels,
            clean_labels,
            num_classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.noisy_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.noisy_labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn noisy_labels(&self) -> &[usize] {
        &self.noisy_labels
    }

    pub fn clean_labels(&self) -> Option<&[usize]> {
        self.clean_labels.as_deref()
    }

    /// Clean labels when known, the annotations otherwise.
    pub fn reference_labels(&self) -> &[usize] {
        self.clean_labels().unwrap_or(&self.noisy_labels)
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn split(&self) -> SplitTag {
        self.split
    }

    /// `ȳ ≠ y` per sample, when clean labels are known.
    pub fn noise_mask(&self) -> Option<Vec<bool>> {
        self.clean_labels.as_ref().map(|clean| {
            clean
                .iter()
                .zip(&self.noisy_labels)
                .map(|(y, noisy)| y != noisy)
                .collect()
        })
    }

    /// Replaces the annotations, keeping the current ones as clean labels
    /// if none were recorded.
    pub fn with_noisy_labels(mut self, noisy: Vec<usize>) -> Result<Self> {
        let clean = self
            .clean_labels
            .take()
            .unwrap_or_else(|| self.noisy_labels.clone());
        Dataset::new(
            self.features,
            noisy,
            Some(clean),
            self.num_classes,
            self.split,
        )
    }

    /// Subset of rows in the given order.
    pub fn select(&self, indices: &[usize], split: SplitTag) -> Dataset {
        let pick = |labels: &[usize]| indices.iter().map(|&i| labels[i]).collect::<Vec<_>>();
        Dataset {
            features: self.features.select_rows(indices),
            noisy_labels: pick(&self.noisy_labels),
            clean_labels: self.clean_labels.as_deref().map(pick),
            num_classes: self.num_classes,
            split,
        }
    }
}
