//! Dense classifier shared by the teacher and the student.

pub mod matrix;
pub mod network;
pub mod ops;

pub use matrix::Matrix;
pub use network::{
    backward, forward, init_params, predict_logits, sgd_step, Activation, Dense, ForwardCache,
    Gradients, ModelParams, SgdConfig, Topology,
};
pub use ops::{cross_entropy, softmax, ProbBatch, PROB_FLOOR};
