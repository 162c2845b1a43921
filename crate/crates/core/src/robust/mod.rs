//! Second-stage objective and the training loop that switches to it.

mod loss;
pub mod trainer;

pub use loss::{beta_targets, robust_ce, sharpen, sharpened_targets};
pub use trainer::{
    detection_table, evaluate, train_two_stage, AgreementSnapshot, DetectionEntry, EpochLog, Head,
    HeadProbs, HeadScores, Method, SplitRefresh, Stage, TrainConfig, TrainOutcome, Trainer,
};
