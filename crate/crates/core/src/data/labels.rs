//! Plain-text label files: one base-10 class index per line, no header.

use std::fs;
use std::path::Path;

use super::Dataset;
use crate::error::{io_err, Error, Result};

pub fn load_label_file(path: &Path, expected_len: usize, num_classes: usize) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let lines: Vec<&str> = text.lines().collect();
    if lines.len() != expected_len {
        return Err(Error::LengthMismatch {
            path: path.to_path_buf(),
            expected: expected_len,
            found: lines.len(),
        });
    }
    lines
        .iter()
        .enumerate()
        .map(|(i, line)| {
            let malformed = |reason: String| Error::MalformedLabel {
                path: path.to_path_buf(),
                line: i + 1,
                reason,
            };
            // `lines` already strips "\n" and "\r\n"
            let value: usize = line
                .trim()
                .parse()
                .map_err(|e| malformed(format!("{line:?}: {e}")))?;
            if value >= num_classes {
                return Err(malformed(format!("{value} outside [0, {num_classes})")));
            }
            Ok(value)
        })
        .collect()
}

/// Loads a label file as the annotations of `dataset`; its current labels
/// are kept as the clean ones.
pub fn attach_noisy_labels(dataset: Dataset, path: &Path) -> Result<Dataset> {
    let labels = load_label_file(path, dataset.len(), dataset.num_classes())?;
    dataset.with_noisy_labels(labels)
}

pub fn write_label_file(path: &Path, labels: &[usize]) -> Result<()> {
    let mut text = String::with_capacity(labels.len() * 2);
    for y in labels {
        text.push_str(&y.to_string());
        text.push('\n');
    }
    fs::write(path, text).map_err(io_err(path))
}
