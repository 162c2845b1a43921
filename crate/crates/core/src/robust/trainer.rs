//! The two-stage teacher/student training loop.
//!
//! Stage 1: the teacher minimises cross-entropy on the annotations while the
//! student regresses the teacher's logits outside the annotated class. The
//! student's mean maximal probability is traced per epoch; when the tipping
//! point is confirmed, the agreement of both networks on the training set is
//! split with Otsu's method into four buckets.
//!
//! Stage 2: the teacher minimises the sharpened soft-target loss with the
//! per-sample α of its bucket; the student keeps its masked loss.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{robust_ce, sharpened_targets};
use crate::data::Dataset;
use crate::distillation::{
    agreement, student_loss, MaxProbAccumulator, MaxProbTrace, TippingPoint,
};
use crate::error::{invalid, Result};
use crate::experiment::metrics::{
    accuracy, classify_noisy, detection_metrics, mask_indices, DetectionMetrics, ThresholdChoice,
};
use crate::nn::{
    backward, cross_entropy, forward, predict_logits, sgd_step, softmax, ModelParams, ProbBatch,
    SgdConfig,
};
use crate::noise::{assign_buckets, otsu_split, AlphaSchedule, BucketAssignment, OtsuSplit};

/// Rows per forward pass when evaluating a whole dataset.
const EVAL_CHUNK: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SplitRefresh {
    /// Recompute the split from fresh agreement values every stage-2 epoch.
    #[default]
    PerEpoch,
    /// Keep the bucket assignment made at the tipping point.
    Frozen,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Full two-stage method.
    #[default]
    Bkd,
    /// Teacher trained with plain cross-entropy throughout; the student and
    /// the detector still run so that their traces are logged.
    Ce,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
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
    pub shuffle_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 128,
            lr: 0.02,
            lr_drop_epoch: 50,
            lr_after_drop: 0.002,
            momentum: 0.9,
            weight_decay: 0.0005,
            k: 5,
            otsu_step: crate::noise::DEFAULT_STEP,
            alphas: AlphaSchedule::default(),
            split_refresh: SplitRefresh::PerEpoch,
            method: Method::Bkd,
            shuffle_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(invalid("batch_size must be >= 1"));
        }
        if self.k == 0 {
            return Err(invalid("k must be >= 1"));
        }
        if !(self.otsu_step > 0.0 && self.otsu_step < 0.5) {
            return Err(invalid("otsu step must lie in (0, 0.5)"));
        }
        self.alphas.validate()?;
        for lr in [self.lr, self.lr_after_drop] {
            self.sgd(lr).validate()?;
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        if epoch < self.lr_drop_epoch {
            self.lr
        } else {
            self.lr_after_drop
        }
    }

    fn sgd(&self, lr: f64) -> SgdConfig {
        SgdConfig {
            lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    Teacher,
    Student,
    Agreement,
}

impl Head {
    pub const ALL: [Head; 3] = [Head::Teacher, Head::Student, Head::Agreement];

    pub fn short(self) -> &'static str {
        match self {
            Head::Teacher => "pt",
            Head::Student => "ps",
            Head::Agreement => "pa",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadScores {
    pub teacher: f64,
    pub student: f64,
    pub agreement: f64,
}

impl HeadScores {
    pub fn get(&self, head: Head) -> f64 {
        match head {
            Head::Teacher => self.teacher,
            Head::Student => self.student,
            Head::Agreement => self.agreement,
        }
    }
}

/// Teacher, student and agreement probabilities over a whole dataset.
#[derive(Debug, Clone)]
pub struct HeadProbs {
    pub teacher: ProbBatch,
    pub student: ProbBatch,
    pub agreement: ProbBatch,
}

impl HeadProbs {
    pub fn get(&self, head: Head) -> &ProbBatch {
        match head {
            Head::Teacher => &self.teacher,
            Head::Student => &self.student,
            Head::Agreement => &self.agreement,
        }
    }

    pub fn accuracy(&self, labels: &[usize]) -> Result<HeadScores> {
        Ok(HeadScores {
            teacher: accuracy(&self.teacher, labels)?,
            student: accuracy(&self.student, labels)?,
            agreement: accuracy(&self.agreement, labels)?,
        })
    }
}

pub fn evaluate(teacher: &ModelParams, student: &ModelParams, data: &Dataset) -> Result<HeadProbs> {
    let mut parts = Vec::new();
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(EVAL_CHUNK) {
        let x = data.features().select_rows(chunk);
        let pt = softmax(&predict_logits(teacher, &x)?);
        let ps = softmax(&predict_logits(student, &x)?);
        let pa = agreement(&pt, &ps)?;
        parts.push((pt, ps, pa));
    }
    let classes = teacher.num_classes();
    let stack = |pick: fn(&(ProbBatch, ProbBatch, ProbBatch)) -> &ProbBatch| {
        let mut data = Vec::with_capacity(indices.len() * classes);
        for p in &parts {
            data.extend_from_slice(pick(p).as_slice());
        }
        crate::nn::Matrix::from_vec(indices.len(), classes, data).map(ProbBatch::new_unchecked)
    };
    Ok(HeadProbs {
        teacher: stack(|p| &p.0)?,
        student: stack(|p| &p.1)?,
        agreement: stack(|p| &p.2)?,
    })
}

/// Noise detection quality for one probability head and threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionEntry {
    pub head: Head,
    pub threshold: ThresholdChoice,
    pub split: Option<OtsuSplit>,
    pub metrics: Option<DetectionMetrics>,
}

/// All nine (head, threshold) detection results; `split`/`metrics` are
/// `None` where Otsu degenerates for that head.
pub fn detection_table(
    probs: &HeadProbs,
    noisy_labels: &[usize],
    noise_mask: &[bool],
    step: f64,
) -> Vec<DetectionEntry> {
    let truth = mask_indices(noise_mask);
    let mut out = Vec::with_capacity(9);
    for head in Head::ALL {
        let values = probs.get(head).at_labels(noisy_labels);
        let split = otsu_split(&values, step).ok();
        for threshold in ThresholdChoice::ALL {
            let metrics = split.map(|sp| {
                let predicted = classify_noisy(&values, &sp, threshold);
                detection_metrics(&predicted, &truth, values.len())
            });
            out.push(DetectionEntry {
                head,
                threshold,
                split,
                metrics,
            });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    #[serde(rename = "1")]
    Warmup,
    #[serde(rename = "2")]
    Robust,
}

impl Stage {
    pub fn number(self) -> u8 {
        match self {
            Stage::Warmup => 1,
            Stage::Robust => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub stage: Stage,
    pub lr: f64,
    pub p_max: f64,
    pub teacher_loss: f64,
    pub student_loss: f64,
    /// Set on the epoch at which the tipping point was confirmed.
    pub tipping_detected: bool,
    /// Otsu split of the training-set agreement at the end of the epoch.
    pub split: Option<OtsuSplit>,
    /// Bucket sizes used for the teacher loss during this epoch.
    pub bucket_sizes: Option<[usize; 4]>,
    pub train_accuracy: HeadScores,
    pub test_accuracy: Option<HeadScores>,
    pub detection: Vec<DetectionEntry>,
}

impl EpochLog {
    pub fn detection(&self, head: Head, threshold: ThresholdChoice) -> Option<DetectionMetrics> {
        self.detection
            .iter()
            .find(|d| d.head == head && d.threshold == threshold)
            .and_then(|d| d.metrics)
    }
}

/// Training-set agreement snapshot at a point of interest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgreementSnapshot {
    pub epoch: usize,
    /// `P_A(ȳ|x)` for every training sample.
    pub agreement_at_label: Vec<f64>,
    pub split: Option<OtsuSplit>,
    pub buckets: Option<Vec<u8>>,
    pub detection: Vec<DetectionEntry>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub teacher: ModelParams,
    pub student: ModelParams,
    pub epochs: Vec<EpochLog>,
    pub tipping: Option<TippingPoint>,
    pub at_tipping: Option<AgreementSnapshot>,
    pub last: Option<AgreementSnapshot>,
}

/// Epoch-by-epoch driver owning both networks.
#[derive(Debug, Clone)]
pub struct Trainer<'a> {
    cfg: TrainConfig,
    train: &'a Dataset,
    test: Option<&'a Dataset>,
    teacher: ModelParams,
    student: ModelParams,
    trace: MaxProbTrace,
    rng: ChaCha8Rng,
    epoch: usize,
    assignment: Option<BucketAssignment>,
    active_split: Option<OtsuSplit>,
    awaiting_split: bool,
    at_tipping: Option<AgreementSnapshot>,
    last: Option<AgreementSnapshot>,
}

impl<'a> Trainer<'a> {
    pub fn new(
        cfg: TrainConfig,
        train: &'a Dataset,
        test: Option<&'a Dataset>,
        teacher: ModelParams,
        student: ModelParams,
    ) -> Result<Self> {
        cfg.validate()?;
        if train.is_empty() {
            return Err(invalid("training set is empty"));
        }
        for (name, params) in [("teacher", &teacher), ("student", &student)] {
            let t = params.topology();
            if t.input_dim != train.dim() || t.num_classes != train.num_classes() {
                return Err(invalid(format!(
                    "{name} topology {}->{} does not match data {}->{}",
                    t.input_dim,
                    t.num_classes,
                    train.dim(),
                    train.num_classes()
                )));
            }
        }
        if teacher.topology() != student.topology() {
            return Err(invalid("teacher and student must share one topology"));
        }
        if let Some(test) = test {
            if test.dim() != train.dim() || test.num_classes() != train.num_classes() {
                return Err(invalid("test set does not match the training set shape"));
            }
        }
        Ok(Self {
            trace: MaxProbTrace::new(cfg.k)?,
            rng: ChaCha8Rng::seed_from_u64(cfg.shuffle_seed),
            cfg,
            train,
            test,
            teacher,
            student,
            epoch: 0,
            assignment: None,
            active_split: None,
            awaiting_split: false,
            at_tipping: None,
            last: None,
        })
    }

    pub fn teacher(&self) -> &ModelParams {
        &self.teacher
    }

    pub fn student(&self) -> &ModelParams {
        &self.student
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn trace(&self) -> &MaxProbTrace {
        &self.trace
    }

    pub fn assignment(&self) -> Option<&BucketAssignment> {
        self.assignment.as_ref()
    }

    /// Enters stage 2 with a given per-sample assignment.
    pub fn set_assignment(&mut self, assignment: BucketAssignment) -> Result<()> {
        if assignment.alphas.len() != self.train.len() {
            return Err(invalid("assignment does not cover the training set"));
        }
        self.assignment = Some(assignment);
        Ok(())
    }

    pub fn stage(&self) -> Stage {
        if self.assignment.is_some() {
            Stage::Robust
        } else {
            Stage::Warmup
        }
    }

    pub fn run_epoch(&mut self) -> Result<EpochLog> {
        let epoch = self.epoch;
        let stage = self.stage();
        let lr = self.cfg.lr_at(epoch);
        let sgd = self.cfg.sgd(lr);
        let labels = self.train.noisy_labels();

        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut self.rng);

        let mut max_prob = MaxProbAccumulator::new();
        let (mut teacher_loss, mut student_loss_sum) = (0.0, 0.0);
        for batch in order.chunks(self.cfg.batch_size) {
            let x = self.train.features().select_rows(batch);
            let y: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();

            let (t_logits, t_cache) = forward(&self.teacher, &x)?;
            let (s_logits, s_cache) = forward(&self.student, &x)?;
            let s_probs = softmax(&s_logits);
            max_prob.push(&s_probs);

            let (t_loss, t_grad) = match &self.assignment {
                None => cross_entropy(&t_logits, &y)?,
                Some(assignment) => {
                    let alphas: Vec<f64> = batch.iter().map(|&i| assignment.alphas[i]).collect();
                    let targets = sharpened_targets(&y, &s_probs, &alphas)?;
                    robust_ce(&t_logits, &targets)?
                }
            };
            let (s_loss, s_grad) = student_loss(&t_logits, &s_logits, &y)?;

            let t_grads = backward(&self.teacher, &t_cache, &t_grad)?;
            let s_grads = backward(&self.student, &s_cache, &s_grad)?;
            sgd_step(&mut self.teacher, &t_grads, sgd)?;
            sgd_step(&mut self.student, &s_grads, sgd)?;

            let weight = batch.len() as f64;
            teacher_loss += t_loss * weight;
            student_loss_sum += s_loss * weight;
        }
        let n = self.train.len() as f64;
        let p_max = max_prob.finish()?;

        let was_detected = self.trace.tipping_point().is_some();
        let tipping = self.trace.push(p_max)?;
        let newly_detected = !was_detected && tipping.is_some();

        let probs = evaluate(&self.teacher, &self.student, self.train)?;
        let pa_at_label = probs.agreement.at_labels(labels);
        let split = otsu_split(&pa_at_label, self.cfg.otsu_step).ok();
        let detection = match self.train.noise_mask() {
            Some(mask) => detection_table(&probs, labels, &mask, self.cfg.otsu_step),
            None => Vec::new(),
        };
        let bucket_sizes = self.assignment.as_ref().map(BucketAssignment::sizes);

        if self.cfg.method == Method::Bkd {
            if newly_detected {
                self.awaiting_split = true;
            }
            if self.awaiting_split {
                // a degenerate split defers stage 2 to the next epoch
                if let Some(sp) = split {
                    self.assignment = Some(assign_buckets(&pa_at_label, &sp, &self.cfg.alphas));
                    self.active_split = Some(sp);
                    self.awaiting_split = false;
                }
            } else if stage == Stage::Robust && self.cfg.split_refresh == SplitRefresh::PerEpoch {
                if let Some(sp) = split {
                    self.active_split = Some(sp);
                }
                if let Some(sp) = self.active_split {
                    self.assignment = Some(assign_buckets(&pa_at_label, &sp, &self.cfg.alphas));
                }
            }
        }

        let snapshot = AgreementSnapshot {
            epoch,
            split,
            buckets: split.map(|sp| assign_buckets(&pa_at_label, &sp, &self.cfg.alphas).buckets),
            agreement_at_label: pa_at_label,
            detection: detection.clone(),
        };
        if newly_detected {
            self.at_tipping = Some(snapshot.clone());
        }
        self.last = Some(snapshot);

        let train_accuracy = probs.accuracy(self.train.reference_labels())?;
        let test_accuracy = match self.test {
            Some(test) if !test.is_empty() => Some(
                evaluate(&self.teacher, &self.student, test)?.accuracy(test.reference_labels())?,
            ),
            _ => None,
        };

        self.epoch += 1;
        Ok(EpochLog {
            epoch,
            stage,
            lr,
            p_max,
            teacher_loss: teacher_loss / n,
            student_loss: student_loss_sum / n,
            tipping_detected: newly_detected,
            split,
            bucket_sizes,
            train_accuracy,
            test_accuracy,
            detection,
        })
    }

    pub fn finish(self, epochs: Vec<EpochLog>) -> TrainOutcome {
        TrainOutcome {
            tipping: self.trace.tipping_point(),
            teacher: self.teacher,
            student: self.student,
            epochs,
            at_tipping: self.at_tipping,
            last: self.last,
        }
    }
}

/// Runs every configured epoch, handing each log to `on_epoch` as soon as
/// it is complete.
pub fn train_two_stage<F>(
    cfg: &TrainConfig,
    train: &Dataset,
    test: Option<&Dataset>,
    teacher: ModelParams,
    student: ModelParams,
    mut on_epoch: F,
) -> Result<TrainOutcome>
where
    F: FnMut(&EpochLog) -> Result<()>,
{
    let mut trainer = Trainer::new(cfg.clone(), train, test, teacher, student)?;
    let mut logs = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let log = trainer.run_epoch()?;
        on_epoch(&log)?;
        logs.push(log);
    }
    Ok(trainer.finish(logs))
}
