//! CIFAR-10 binary batches: records of one label byte followed by a 32×32
//! image stored as red, green and blue planes, each row-major.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::{Dataset, SplitTag};
use crate::error::{invalid, io_err, Error, Result};
use crate::nn::Matrix;

pub const CIFAR_IMAGE_BYTES: usize = 3 * 32 * 32;
pub const CIFAR_RECORD_BYTES: usize = CIFAR_IMAGE_BYTES + 1;
const CIFAR_CLASSES: usize = 10;

/// Concatenates the records of every file, scaling pixels to `[0, 1]`.
/// File labels become both the annotations and the clean labels.
pub fn load_cifar10_binary<P: AsRef<Path>>(paths: &[P], split: SplitTag) -> Result<Dataset> {
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for path in paths {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(io_err(path))?;
        parse_records(path, &bytes, &mut pixels, &mut labels)?;
    }
    let features = Matrix::from_vec(labels.len(), CIFAR_IMAGE_BYTES, pixels)?;
    Dataset::new(features, labels.clone(), Some(labels), CIFAR_CLASSES, split)
}

fn parse_records(
    path: &Path,
    bytes: &[u8],
    pixels: &mut Vec<f64>,
    labels: &mut Vec<usize>,
) -> Result<()> {
    if bytes.len() % CIFAR_RECORD_BYTES != 0 {
        return Err(Error::MalformedFile {
            path: path.to_path_buf(),
            reason: format!(
                "length {} is not a multiple of {CIFAR_RECORD_BYTES}",
                bytes.len()
            ),
        });
    }
    for (record, chunk) in bytes.chunks_exact(CIFAR_RECORD_BYTES).enumerate() {
        let label = usize::from(chunk[0]);
        if label >= CIFAR_CLASSES {
            return Err(Error::MalformedRecord {
                path: PathBuf::from(path),
                record,
                reason: format!("label byte {label} > 9"),
            });
        }
        labels.push(label);
        pixels.extend(chunk[1..].iter().map(|&b| f64::from(b) / 255.0));
    }
    Ok(())
}

/// Writes `dataset` in the same layout; features are quantised back to
/// bytes with `round(v·255)` and the annotations are written as labels.
pub fn write_cifar10_binary(path: &Path, dataset: &Dataset) -> Result<()> {
    if dataset.dim() != CIFAR_IMAGE_BYTES && !dataset.is_empty() {
        return Err(invalid(format!(
            "dataset has {} features, CIFAR records hold {CIFAR_IMAGE_BYTES}",
            dataset.dim()
        )));
    }
    if dataset.num_classes() > CIFAR_CLASSES {
        return Err(invalid("CIFAR-10 records hold at most 10 classes"));
    }
    let mut out = Vec::with_capacity(dataset.len() * CIFAR_RECORD_BYTES);
    for (i, &label) in dataset.noisy_labels().iter().enumerate() {
        out.push(label as u8);
        out.extend(
            dataset
                .features()
                .row(i)
                .iter()
                .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
        );
    }
    let mut file = fs::File::create(path).map_err(io_err(path))?;
    file.write_all(&out).map_err(io_err(path))
}
