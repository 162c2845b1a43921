use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use bkd_core::data::write_label_file;
use bkd_core::experiment::{
    detect_noise, eval_run, run_experiment, DumpPoint, RunConfig, ThresholdChoice,
};
use bkd_core::Error;
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Parser)]
#[command(
    name = "bkd",
    version,
    about = "Teacher-student training under label noise"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train teacher and student and write the run directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the output directory in the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Flag noisy labels from a run's stored agreement values.
    DetectNoise {
        #[arg(long)]
        run_dir: PathBuf,
        #[arg(long, value_enum, default_value_t = Threshold::Mu1)]
        threshold: Threshold,
        #[arg(long, value_enum, default_value_t = At::Final)]
        at: At,
        /// Verdict CSV path; defaults to `<run-dir>/verdicts_<threshold>.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the configured dataset as text files.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-score the stored weights of a run.
    Eval {
        #[arg(long)]
        run_dir: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Threshold {
    Mu1,
    S,
    Mu2,
}

impl From<Threshold> for ThresholdChoice {
    fn from(t: Threshold) -> Self {
        match t {
            Threshold::Mu1 => ThresholdChoice::Mu1,
            Threshold::S => ThresholdChoice::S,
            Threshold::Mu2 => ThresholdChoice::Mu2,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum At {
    Final,
    Tipping,
}

#[derive(Serialize)]
struct ErrorLine<'a> {
    error: &'a str,
    message: String,
}

fn load_config(path: &PathBuf, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn train(config: PathBuf, seed: Option<u64>, out: Option<PathBuf>) -> Result<()> {
    let mut cfg = load_config(&config, seed)?;
    if let Some(out) = out {
        cfg.output_dir = out;
    }
    let report = run_experiment(&cfg)?;
    #[derive(Serialize)]
    struct Summary<'a> {
        output_dir: &'a PathBuf,
        epochs_completed: usize,
        tipping: Option<bkd_core::distillation::TippingPoint>,
        noise_detection_at_tipping: Option<bkd_core::experiment::DetectionMetrics>,
        final_test_accuracy: Option<bkd_core::robust::HeadScores>,
    }
    let summary = Summary {
        output_dir: &cfg.output_dir,
        epochs_completed: report.epochs_completed,
        tipping: report.tipping,
        noise_detection_at_tipping: report.at_tipping.as_ref().and_then(|s| s.noise_detection),
        final_test_accuracy: report.final_test_accuracy,
    };
    println!("{}", serde_json::to_string(&summary)?);
    Ok(())
}

fn detect(run_dir: PathBuf, threshold: Threshold, at: At, out: Option<PathBuf>) -> Result<()> {
    let choice = ThresholdChoice::from(threshold);
    let point = match at {
        At::Final => DumpPoint::Final,
        At::Tipping => DumpPoint::Tipping,
    };
    let verdicts = detect_noise(&run_dir, choice, point)?;
    let out = out.unwrap_or_else(|| run_dir.join(format!("verdicts_{choice}.csv")));
    fs::write(&out, verdicts.to_csv()).with_context(|| format!("writing {}", out.display()))?;

    #[derive(Serialize)]
    struct Summary<'a> {
        verdicts: &'a PathBuf,
        threshold: &'static str,
        threshold_value: f64,
        flagged: usize,
        samples: usize,
        #[serde(skip_serializing_if = "Option::is_none")]
        metrics: Option<bkd_core::experiment::DetectionMetrics>,
    }
    let summary = Summary {
        verdicts: &out,
        threshold: choice.as_str(),
        threshold_value: choice.value(&verdicts.split),
        flagged: verdicts.noisy.iter().filter(|&&n| n).count(),
        samples: verdicts.values.len(),
        metrics: verdicts.metrics,
    };
    println!("{}", serde_json::to_string(&summary)?);
    Ok(())
}

fn gen_data(config: PathBuf, seed: Option<u64>, out: PathBuf) -> Result<()> {
    let cfg = load_config(&config, seed)?;
    let (train, test) = cfg.build_datasets()?;
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    for (name, data) in [("train", Some(&train)), ("test", test.as_ref())] {
        let Some(data) = data else { continue };
        let mut csv = String::new();
        for row in data.features().iter_rows() {
            let fields: Vec<String> = row.iter().map(f64::to_string).collect();
            csv.push_str(&fields.join(","));
            csv.push('\n');
        }
        let path = out.join(format!("{name}_features.csv"));
        fs::write(&path, csv).with_context(|| format!("writing {}", path.display()))?;
        write_label_file(&out.join(format!("{name}_labels.txt")), data.noisy_labels())?;
        if let Some(clean) = data.clean_labels() {
            write_label_file(&out.join(format!("{name}_clean_labels.txt")), clean)?;
        }
    }
    println!(
        "{}",
        serde_json::json!({
            "out": out,
            "train_samples": train.len(),
            "test_samples": test.as_ref().map_or(0, |t| t.len()),
        })
    );
    Ok(())
}

fn eval(run_dir: PathBuf) -> Result<()> {
    let report = eval_run(&run_dir)?;
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train { config, seed, out } => train(config, seed, out),
        Command::DetectNoise {
            run_dir,
            threshold,
            at,
            out,
        } => detect(run_dir, threshold, at, out),
        Command::GenData { config, seed, out } => gen_data(config, seed, out),
        Command::Eval { run_dir } => eval(run_dir),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let kind = match err.downcast_ref::<Error>() {
                Some(Error::Config(_)) => "config",
                Some(Error::Io { .. }) => "io",
                Some(Error::TrainingFault(_)) => "training_fault",
                Some(_) => "input",
                None => "internal",
            };
            let line = ErrorLine {
                error: kind,
                message: format!("{err:#}"),
            };
            eprintln!(
                "{}",
                serde_json::to_string(&line).expect("error line serialises")
            );
            if kind == "config" {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
