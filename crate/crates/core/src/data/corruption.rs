use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum NoiseKind {
    /// Exactly `round(rate·n)` labels flipped uniformly to another class.
    Symmetric { rate: f64 },
    /// Every label resampled from its row of a row-stochastic matrix.
    Confusion { matrix: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub seed: u64,
}

impl NoiseKind {
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        match self {
            NoiseKind::Symmetric { rate } => {
                if !(0.0..1.0).contains(rate) {
                    return Err(invalid(format!("noise rate {rate} outside [0, 1)")));
                }
            }
            NoiseKind::Confusion { matrix } => {
                if matrix.len() != num_classes || matrix.iter().any(|r| r.len() != num_classes) {
                    return Err(invalid(format!(
                        "confusion matrix must be {num_classes}x{num_classes}"
                    )));
                }
                for (i, row) in matrix.iter().enumerate() {
                    let sum: f64 = row.iter().sum();
                    if row.iter().any(|&p| !(p >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
                        return Err(invalid(format!(
                            "confusion row {i} is not a distribution (sum {sum})"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Corrupts `labels`, returning the new labels and the mask of changed
/// entries.
pub fn inject_noise(
    labels: &[usize],
    num_classes: usize,
    spec: &NoiseSpec,
) -> Result<(Vec<usize>, Vec<bool>)> {
    if num_classes < 2 {
        return Err(invalid("noise injection needs at least 2 classes"));
    }
    if let Some(y) = labels.iter().find(|&&y| y >= num_classes) {
        return Err(invalid(format!("label {y} outside [0, {num_classes})")));
    }
    spec.kind.validate(num_classes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut noisy = labels.to_vec();
    match &spec.kind {
        NoiseKind::Symmetric { rate } => {
            let n = labels.len();
            let count = (rate * n as f64).round() as usize;
            if count > n {
                return Err(invalid(format!("cannot flip {count} of {n} labels")));
            }
            let mut chosen = index::sample(&mut rng, n, count).into_vec();
            chosen.sort_unstable();
            for i in chosen {
                let r = rng.gen_range(0..num_classes - 1);
                noisy[i] = if r >= labels[i] { r + 1 } else { r };
            }
        }
        NoiseKind::Confusion { matrix } => {
            for (slot, &y) in noisy.iter_mut().zip(labels) {
                let u: f64 = rng.gen();
                let row = &matrix[y];
                let mut acc = 0.0;
                // falls back to the last class with positive mass on rounding
                let mut pick = row.iter().rposition(|&p| p > 0.0).unwrap_or(y);
                for (c, &p) in row.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        pick = c;
                        break;
                    }
                }
                *slot = pick;
            }
        }
    }
    let mask = noisy.iter().zip(labels).map(|(a, b)| a != b).collect();
    Ok((noisy, mask))
}
