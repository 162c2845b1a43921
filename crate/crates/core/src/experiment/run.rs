//! End-to-end runs and the operations on finished run directories.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::artifacts::*;
use super::config::{derive_seed, RunConfig, SeedStream};
use super::metrics::{
    classify_noisy, detection_metrics, mask_indices, DetectionMetrics, ThresholdChoice,
};
use crate::data::Dataset;
use crate::distillation::TippingPoint;
use crate::error::{io_err, Error, Result};
use crate::nn::{init_params, ModelParams};
use crate::noise::{assign_buckets, otsu_split, OtsuSplit};
use crate::robust::{
    evaluate, train_two_stage, AgreementSnapshot, DetectionEntry, Head, HeadScores, TrainConfig,
    TrainOutcome,
};

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    Failed,
}

/// Agreement split and noise detection at one point of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotSummary {
    pub epoch: usize,
    pub split: Option<OtsuSplit>,
    /// Detection with the agreement head and the `mu1` threshold.
    pub noise_detection: Option<DetectionMetrics>,
    pub detection: Vec<DetectionEntry>,
}

impl From<&AgreementSnapshot> for SnapshotSummary {
    fn from(s: &AgreementSnapshot) -> Self {
        let noise_detection = s
            .detection
            .iter()
            .find(|d| d.head == Head::Agreement && d.threshold == ThresholdChoice::Mu1)
            .and_then(|d| d.metrics);
        Self {
            epoch: s.epoch,
            split: s.split,
            noise_detection,
            detection: s.detection.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub format_version: u32,
    pub status: RunStatus,
    pub error: Option<String>,
    pub epochs_completed: usize,
    pub tipping: Option<TippingPoint>,
    pub no_tipping_point: bool,
    pub p_max_trace: Vec<f64>,
    pub at_tipping: Option<SnapshotSummary>,
    pub last: Option<SnapshotSummary>,
    pub final_train_accuracy: Option<HeadScores>,
    pub final_test_accuracy: Option<HeadScores>,
    pub config: RunConfig,
}

impl RunReport {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|e| Error::MalformedFile {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }

    fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("report serialises");
        text.push('\n');
        fs::write(path, text).map_err(io_err(path))
    }
}

/// Datasets and freshly initialised networks for a configuration.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub train: Dataset,
    pub test: Option<Dataset>,
    pub teacher: ModelParams,
    pub student: ModelParams,
    pub train_config: TrainConfig,
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    cfg.validate()?;
    let (train, test) = cfg.build_datasets()?;
    let topology = cfg.topology(&train)?;
    Ok(Prepared {
        teacher: init_params(&topology, derive_seed(cfg.seed, SeedStream::Teacher))?,
        student: init_params(&topology, derive_seed(cfg.seed, SeedStream::Student))?,
        train,
        test,
        train_config: cfg.train_config(),
    })
}

/// Trains in memory without touching the filesystem.
pub fn train_in_memory(cfg: &RunConfig) -> Result<(Prepared, TrainOutcome)> {
    let prepared = prepare(cfg)?;
    let outcome = train_two_stage(
        &prepared.train_config,
        &prepared.train,
        prepared.test.as_ref(),
        prepared.teacher.clone(),
        prepared.student.clone(),
        |_| Ok(()),
    )?;
    Ok((prepared, outcome))
}

/// Builds the data, trains, and writes `epochs.csv`, `report.json`, the
/// agreement dumps, the noise mask (when known) and both weight dumps into
/// the configured output directory.
pub fn run_experiment(cfg: &RunConfig) -> Result<RunReport> {
    cfg.validate()?;
    let dir = cfg.output_dir.clone();
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let mut report = RunReport {
        format_version: REPORT_VERSION,
        status: RunStatus::Failed,
        error: None,
        epochs_completed: 0,
        tipping: None,
        no_tipping_point: true,
        p_max_trace: Vec::new(),
        at_tipping: None,
        last: None,
        final_train_accuracy: None,
        final_test_accuracy: None,
        config: cfg.clone(),
    };

    let mut csv = EpochCsvWriter::create(&dir.join(EPOCHS_FILE))?;
    let mut trace = Vec::new();
    let result = prepare(cfg).and_then(|p| {
        let outcome = train_two_stage(
            &p.train_config,
            &p.train,
            p.test.as_ref(),
            p.teacher.clone(),
            p.student.clone(),
            |log| {
                trace.push(log.p_max);
                csv.write(log)
            },
        )?;
        Ok((p, outcome))
    });
    report.epochs_completed = trace.len();
    report.p_max_trace = trace;

    let (prepared, outcome) = match result {
        Ok(ok) => ok,
        Err(err) => {
            report.error = Some(err.to_string());
            report.write(&dir.join(REPORT_FILE))?;
            return Err(err);
        }
    };

    report.status = RunStatus::Ok;
    report.tipping = outcome.tipping;
    report.no_tipping_point = outcome.tipping.is_none();
    report.at_tipping = outcome.at_tipping.as_ref().map(SnapshotSummary::from);
    report.last = outcome.last.as_ref().map(SnapshotSummary::from);
    if let Some(last) = outcome.epochs.last() {
        report.final_train_accuracy = Some(last.train_accuracy);
        report.final_test_accuracy = last.test_accuracy;
    }

    if let Some(last) = &outcome.last {
        write_pa_dump(
            &dir.join(PA_DUMP_FILE),
            &last.agreement_at_label,
            last.buckets.as_deref(),
        )?;
    }
    if let Some(tip) = &outcome.at_tipping {
        write_pa_dump(
            &dir.join(PA_DUMP_TIPPING_FILE),
            &tip.agreement_at_label,
            tip.buckets.as_deref(),
        )?;
    }
    if let Some(mask) = prepared.train.noise_mask() {
        write_noise_mask(&dir.join(NOISE_MASK_FILE), &mask)?;
    }
    write_params(&dir.join(TEACHER_FILE), &outcome.teacher)?;
    write_params(&dir.join(STUDENT_FILE), &outcome.student)?;
    report.write(&dir.join(REPORT_FILE))?;
    Ok(report)
}

/// Which agreement dump of a run to read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DumpPoint {
    Final,
    Tipping,
}

impl DumpPoint {
    fn file(self) -> &'static str {
        match self {
            DumpPoint::Final => PA_DUMP_FILE,
            DumpPoint::Tipping => PA_DUMP_TIPPING_FILE,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Verdicts {
    pub split: OtsuSplit,
    pub threshold: ThresholdChoice,
    pub values: Vec<f64>,
    pub noisy: Vec<bool>,
    pub buckets: Vec<u8>,
    /// Present when the run stored a noise mask.
    pub metrics: Option<DetectionMetrics>,
}

impl Verdicts {
    pub fn to_csv(&self) -> String {
        let mut text = String::from("sample_id,pa_at_label,bucket,verdict\n");
        for (i, ((v, noisy), b)) in self
            .values
            .iter()
            .zip(&self.noisy)
            .zip(&self.buckets)
            .enumerate()
        {
            let verdict = if *noisy { "noisy" } else { "clean" };
            text.push_str(&format!("{i},{v},{b},{verdict}\n"));
        }
        text
    }
}

/// Re-splits a stored agreement dump and flags samples below the chosen
/// threshold as noisy.
pub fn detect_noise(run_dir: &Path, threshold: ThresholdChoice, at: DumpPoint) -> Result<Verdicts> {
    let report = RunReport::load(&run_dir.join(REPORT_FILE))?;
    let dump_path = run_dir.join(at.file());
    let rows = read_pa_dump(&dump_path)?;
    let values: Vec<f64> = rows.iter().map(|r| r.pa_at_label).collect();
    let split = otsu_split(&values, report.config.otsu_step)?;
    let predicted = classify_noisy(&values, &split, threshold);
    let mut noisy = vec![false; values.len()];
    for &i in &predicted {
        noisy[i] = true;
    }
    let mask_path = run_dir.join(NOISE_MASK_FILE);
    let metrics = if mask_path.exists() {
        let mask = read_noise_mask(&mask_path)?;
        if mask.len() != values.len() {
            return Err(Error::LengthMismatch {
                path: mask_path,
                expected: values.len(),
                found: mask.len(),
            });
        }
        Some(detection_metrics(
            &predicted,
            &mask_indices(&mask),
            values.len(),
        ))
    } else {
        None
    };
    Ok(Verdicts {
        buckets: assign_buckets(&values, &split, &report.config.alphas).buckets,
        split,
        threshold,
        values,
        noisy,
        metrics,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub train_accuracy: HeadScores,
    pub test_accuracy: Option<HeadScores>,
}

/// Reloads the stored weights of a run and scores all three heads.
pub fn eval_run(run_dir: &Path) -> Result<EvalReport> {
    let report = RunReport::load(&run_dir.join(REPORT_FILE))?;
    let teacher = read_params(&run_dir.join(TEACHER_FILE))?;
    let student = read_params(&run_dir.join(STUDENT_FILE))?;
    let (train, test) = report.config.build_datasets()?;
    let train_accuracy =
        evaluate(&teacher, &student, &train)?.accuracy(train.reference_labels())?;
    let test_accuracy = match &test {
        Some(test) if !test.is_empty() => {
            Some(evaluate(&teacher, &student, test)?.accuracy(test.reference_labels())?)
        }
        _ => None,
    };
    Ok(EvalReport {
        train_accuracy,
        test_accuracy,
    })
}

pub fn report_path(run_dir: &Path) -> PathBuf {
    run_dir.join(REPORT_FILE)
}
