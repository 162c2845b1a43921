//! Blind knowledge distillation for learning with noisy labels.
//!
//! A teacher network is trained on the (possibly corrupted) labels while a
//! student of the same topology imitates only the teacher logits of the
//! classes *other* than the annotated one. The student's mean maximal
//! probability peaks when the teacher starts memorising noise; at that
//! point the agreement of both networks is split with Otsu's method into
//! four trust buckets, and the teacher continues on a per-sample weighted
//! soft-target loss.
//!
//! Module map:
//!
//! - [`nn`]: dense ReLU network, softmax, cross-entropy, SGD with momentum
//! - [`distillation`]: masked student loss, max-probability trace, tipping
//!   point detector, agreement probability
//! - [`noise`]: Otsu split of agreement values and bucket assignment
//! - [`robust`]: soft targets, sharpening, weighted cross-entropy and the
//!   two-stage training loop
//! - [`data`]: synthetic blobs, label noise, CIFAR-10 binary and label files
//! - [`experiment`]: configuration, metrics and run artefacts

pub mod data;
pub mod distillation;
pub mod error;
pub mod experiment;
pub mod nn;
pub mod noise;
pub mod robust;

pub use error::{Error, Result};
