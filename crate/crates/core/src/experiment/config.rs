//! JSON run configuration.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{
    attach_noisy_labels, gen_blobs_split, inject_noise, load_cifar10_binary, BlobSpec, Dataset,
    NoiseKind, NoiseSpec, SplitTag,
};
use crate::error::{io_err, Error, Result};
use crate::nn::Topology;
use crate::noise::{AlphaSchedule, DEFAULT_STEP};
use crate::robust::{Method, SplitRefresh, TrainConfig};

/// Independent random streams derived from the run seed.
#[derive(Debug, Clone, Copy)]
pub enum SeedStream {
    Data = 1,
    Noise = 2,
    Teacher = 3,
    Student = 4,
    Shuffle = 5,
}

/// splitmix64 of `seed` offset by the stream id.
pub fn derive_seed(seed: u64, stream: SeedStream) -> u64 {
    let mut z = seed.wrapping_add((stream as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase", deny_unknown_fields)]
pub enum DataSource {
    Synthetic {
        #[serde(default = "default_blobs")]
        blobs: BlobSpec,
        #[serde(default)]
        noise: Option<NoiseKind>,
    },
    Cifar {
        train_files: Vec<PathBuf>,
        #[serde(default)]
        test_files: Vec<PathBuf>,
        /// Noisy annotations for the training files, one per line.
        #[serde(default)]
        label_file: Option<PathBuf>,
    },
}

fn default_blobs() -> BlobSpec {
    BlobSpec {
        num_classes: 10,
        train_per_class: 500,
        test_per_class: 100,
        dim: 32,
        center_spread: 1.0,
        cluster_std: 1.0,
    }
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic {
            blobs: default_blobs(),
            noise: Some(NoiseKind::Symmetric { rate: 0.4 }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub hidden_dims: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_drop_epoch: usize,
    pub lr_after_drop: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub k: usize,
    pub otsu_step: f64,
    pub alphas: AlphaSchedule,
    pub split_refresh: SplitRefresh,
    pub method: Method,
    pub data: DataSource,
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        Self {
            hidden_dims: vec![256],
            epochs: train.epochs,
            batch_size: train.batch_size,
            lr: train.lr,
            lr_drop_epoch: train.lr_drop_epoch,
            lr_after_drop: train.lr_after_drop,
            momentum: train.momentum,
            weight_decay: train.weight_decay,
            k: train.k,
            otsu_step: DEFAULT_STEP,
            alphas: train.alphas,
            split_refresh: train.split_refresh,
            method: train.method,
            data: DataSource::default(),
            seed: 0,
            output_dir: PathBuf::from("runs/default"),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        let as_config = |e: Error| match e {
            Error::InvalidInput(msg) => Error::Config(msg),
            other => other,
        };
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.hidden_dims.contains(&0) {
            return Err(Error::Config("hidden_dims must be positive".into()));
        }
        self.train_config().validate().map_err(as_config)?;
        match &self.data {
            DataSource::Synthetic { blobs, noise } => {
                blobs.validate().map_err(as_config)?;
                if let Some(kind) = noise {
                    kind.validate(blobs.num_classes).map_err(as_config)?;
                }
            }
            DataSource::Cifar { train_files, .. } => {
                if train_files.is_empty() {
                    return Err(Error::Config("cifar source needs train_files".into()));
                }
            }
        }
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            lr_drop_epoch: self.lr_drop_epoch,
            lr_after_drop: self.lr_after_drop,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            k: self.k,
            otsu_step: self.otsu_step,
            alphas: self.alphas,
            split_refresh: self.split_refresh,
            method: self.method,
            shuffle_seed: derive_seed(self.seed, SeedStream::Shuffle),
        }
    }

    pub fn topology(&self, train: &Dataset) -> Result<Topology> {
        Topology::new(train.dim(), self.hidden_dims.clone(), train.num_classes())
    }

    /// Training set (with corrupted annotations where configured) and the
    /// optional test set.
    pub fn build_datasets(&self) -> Result<(Dataset, Option<Dataset>)> {
        match &self.data {
            DataSource::Synthetic { blobs, noise } => {
                let (train, test) =
                    gen_blobs_split(blobs, derive_seed(self.seed, SeedStream::Data))?;
                let train = match noise {
                    Some(kind) => {
                        let spec = NoiseSpec {
                            kind: kind.clone(),
                            seed: derive_seed(self.seed, SeedStream::Noise),
                        };
                        let (noisy, _) =
                            inject_noise(train.noisy_labels(), train.num_classes(), &spec)?;
                        train.with_noisy_labels(noisy)?
                    }
                    None => train,
                };
                Ok((train, test))
            }
            DataSource::Cifar {
                train_files,
                test_files,
                label_file,
            } => {
                let mut train = load_cifar10_binary(train_files, SplitTag::Train)?;
                if let Some(path) = label_file {
                    train = attach_noisy_labels(train, path)?;
                }
                let test = if test_files.is_empty() {
                    None
                } else {
                    Some(load_cifar10_binary(test_files, SplitTag::Test)?)
                };
                Ok((train, test))
            }
        }
    }
}
