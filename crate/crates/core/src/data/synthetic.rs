use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Dataset, SplitTag};
use crate::error::{invalid, Result};
use crate::nn::Matrix;

/// Gaussian blobs around uniformly drawn class centres.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobSpec {
    pub num_classes: usize,
    pub train_per_class: usize,
    #[serde(default)]
    pub test_per_class: usize,
    pub dim: usize,
    pub center_spread: f64,
    pub cluster_std: f64,
}

impl BlobSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 || self.train_per_class == 0 || self.dim == 0 {
            return Err(invalid(
                "blobs need >= 2 classes, >= 1 sample per class and dim >= 1",
            ));
        }
        if !(self.center_spread > 0.0 && self.center_spread.is_finite()) {
            return Err(invalid("center_spread must be > 0"));
        }
        if !(self.cluster_std >= 0.0 && self.cluster_std.is_finite()) {
            return Err(invalid("cluster_std must be >= 0"));
        }
        Ok(())
    }
}

fn draw_centers(rng: &mut ChaCha8Rng, classes: usize, dim: usize, spread: f64) -> Vec<Vec<f64>> {
    (0..classes)
        .map(|_| (0..dim).map(|_| rng.gen_range(-spread..=spread)).collect())
        .collect()
}

fn draw_samples(
    rng: &mut ChaCha8Rng,
    centers: &[Vec<f64>],
    per_class: usize,
    std: f64,
    split: SplitTag,
) -> Result<Dataset> {
    let dim = centers[0].len();
    let n = centers.len() * per_class;
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for (class, center) in centers.iter().enumerate() {
        for _ in 0..per_class {
            for &c in center {
                let z: f64 = rng.sample(StandardNormal);
                data.push(c + std * z);
            }
            labels.push(class);
        }
    }
    let features = Matrix::from_vec(n, dim, data)?;
    Dataset::new(features, labels.clone(), Some(labels), centers.len(), split)
}

/// `num_classes × samples_per_class` points, ordered class by class.
pub fn gen_blobs(
    num_classes: usize,
    samples_per_class: usize,
    dim: usize,
    center_spread: f64,
    cluster_std: f64,
    seed: u64,
) -> Result<Dataset> {
    let spec = BlobSpec {
        num_classes,
        train_per_class: samples_per_class,
        test_per_class: 0,
        dim,
        center_spread,
        cluster_std,
    };
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers = draw_centers(&mut rng, num_classes, dim, center_spread);
    draw_samples(
        &mut rng,
        &centers,
        samples_per_class,
        cluster_std,
        SplitTag::Train,
    )
}

/// Train and test sets sharing one set of class centres. The test set is
/// `None` when `test_per_class` is zero.
pub fn gen_blobs_split(spec: &BlobSpec, seed: u64) -> Result<(Dataset, Option<Dataset>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers = draw_centers(&mut rng, spec.num_classes, spec.dim, spec.center_spread);
    let train = draw_samples(
        &mut rng,
        &centers,
        spec.train_per_class,
        spec.cluster_std,
        SplitTag::Train,
    )?;
    let test = if spec.test_per_class > 0 {
        Some(draw_samples(
            &mut rng,
            &centers,
            spec.test_per_class,
            spec.cluster_std,
            SplitTag::Test,
        )?)
    } else {
        None
    };
    Ok((train, test))
}
