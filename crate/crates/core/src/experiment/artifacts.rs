//! Files written into a run directory: the per-epoch CSV, agreement dumps,
//! noise masks and binary weight dumps.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{invalid, io_err, Error, Result};
use crate::experiment::metrics::ThresholdChoice;
use crate::nn::{Activation, Dense, ModelParams, Topology};
use crate::robust::{EpochLog, Head};

pub const EPOCHS_FILE: &str = "epochs.csv";
pub const REPORT_FILE: &str = "report.json";
pub const PA_DUMP_FILE: &str = "pa_dump.csv";
pub const PA_DUMP_TIPPING_FILE: &str = "pa_dump_tipping.csv";
pub const NOISE_MASK_FILE: &str = "noise_mask.txt";
pub const TEACHER_FILE: &str = "teacher.bin";
pub const STUDENT_FILE: &str = "student.bin";

pub const EPOCHS_CSV_VERSION: &str = "# bkd-epochs v1";

/// Column names of `epochs.csv`, in order.
pub fn epoch_columns() -> Vec<String> {
    let mut cols: Vec<String> = [
        "epoch",
        "stage",
        "lr",
        "p_max",
        "teacher_loss",
        "student_loss",
        "tipping_detected",
        "s",
        "mu1",
        "mu2",
        "bucket1",
        "bucket2",
        "bucket3",
        "bucket4",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for prefix in ["train_acc", "test_acc"] {
        for head in Head::ALL {
            cols.push(format!("{prefix}_{}", head.short()));
        }
    }
    for head in Head::ALL {
        for t in ThresholdChoice::ALL {
            for m in ["pr", "re", "f1"] {
                cols.push(format!("det_{}_{}_{m}", head.short(), t.as_str()));
            }
        }
    }
    cols
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn epoch_row(log: &EpochLog) -> String {
    let mut fields = vec![
        log.epoch.to_string(),
        log.stage.number().to_string(),
        log.lr.to_string(),
        log.p_max.to_string(),
        log.teacher_loss.to_string(),
        log.student_loss.to_string(),
        u8::from(log.tipping_detected).to_string(),
        opt(log.split.map(|s| s.s)),
        opt(log.split.map(|s| s.mu1)),
        opt(log.split.map(|s| s.mu2)),
    ];
    for b in 0..4 {
        fields.push(opt(log.bucket_sizes.map(|sizes| sizes[b])));
    }
    for head in Head::ALL {
        fields.push(log.train_accuracy.get(head).to_string());
    }
    for head in Head::ALL {
        fields.push(opt(log.test_accuracy.map(|a| a.get(head))));
    }
    for head in Head::ALL {
        for t in ThresholdChoice::ALL {
            let m = log.detection(head, t);
            fields.push(opt(m.map(|m| m.precision)));
            fields.push(opt(m.map(|m| m.recall)));
            fields.push(opt(m.map(|m| m.f1)));
        }
    }
    fields.join(",")
}

/// Streams epoch rows to disk, flushing after each so that a failed run
/// keeps every completed epoch.
pub struct EpochCsvWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl EpochCsvWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(io_err(path))?;
        let mut writer = Self {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        };
        writer.line(EPOCHS_CSV_VERSION)?;
        writer.line(&epoch_columns().join(","))?;
        Ok(writer)
    }

    fn line(&mut self, text: &str) -> Result<()> {
        writeln!(self.out, "{text}")
            .and_then(|_| self.out.flush())
            .map_err(io_err(&self.path))
    }

    pub fn write(&mut self, log: &EpochLog) -> Result<()> {
        self.line(&epoch_row(log))
    }
}

/// `sample_id,pa_at_label,bucket`; the bucket is empty when no split exists.
pub fn write_pa_dump(path: &Path, values: &[f64], buckets: Option<&[u8]>) -> Result<()> {
    let mut text = String::from("sample_id,pa_at_label,bucket\n");
    for (i, v) in values.iter().enumerate() {
        let bucket = buckets.map(|b| b[i].to_string()).unwrap_or_default();
        text.push_str(&format!("{i},{v},{bucket}\n"));
    }
    fs::write(path, text).map_err(io_err(path))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PaDumpRow {
    pub sample_id: usize,
    pub pa_at_label: f64,
    pub bucket: Option<u8>,
}

pub fn read_pa_dump(path: &Path) -> Result<Vec<PaDumpRow>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let malformed = |reason: String| Error::MalformedFile {
        path: path.to_path_buf(),
        reason,
    };
    let mut lines = text.lines();
    match lines.next() {
        Some("sample_id,pa_at_label,bucket") => {}
        other => return Err(malformed(format!("unexpected header {other:?}"))),
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != 3 {
                return Err(malformed(format!(
                    "row {} has {} fields",
                    i + 1,
                    parts.len()
                )));
            }
            let bad = |what: &str| malformed(format!("row {}: bad {what}", i + 1));
            Ok(PaDumpRow {
                sample_id: parts[0].parse().map_err(|_| bad("sample_id"))?,
                pa_at_label: parts[1].parse().map_err(|_| bad("pa_at_label"))?,
                bucket: match parts[2] {
                    "" => None,
                    b => Some(b.parse().map_err(|_| bad("bucket"))?),
                },
            })
        })
        .collect()
}

pub fn write_noise_mask(path: &Path, mask: &[bool]) -> Result<()> {
    let text: String = mask
        .iter()
        .map(|&m| if m { "1\n" } else { "0\n" })
        .collect();
    fs::write(path, text).map_err(io_err(path))
}

pub fn read_noise_mask(path: &Path) -> Result<Vec<bool>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .enumerate()
        .map(|(i, line)| match line.trim() {
            "0" => Ok(false),
            "1" => Ok(true),
            other => Err(Error::MalformedLabel {
                path: path.to_path_buf(),
                line: i + 1,
                reason: format!("expected 0 or 1, got {other:?}"),
            }),
        })
        .collect()
}

const WEIGHTS_MAGIC: &[u8; 4] = b"BKDW";
const WEIGHTS_VERSION: u32 = 1;

/// Little-endian dump: magic, version, seed, topology header, then every
/// layer's weights and biases followed by the momentum buffers, as `f64`.
pub fn write_params(path: &Path, params: &ModelParams) -> Result<()> {
    let t = params.topology();
    let mut out = Vec::new();
    out.extend_from_slice(WEIGHTS_MAGIC);
    out.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
    out.extend_from_slice(&params.seed().to_le_bytes());
    let dim = |v: usize| {
        u32::try_from(v)
            .expect("dimension fits in u32")
            .to_le_bytes()
    };
    out.extend_from_slice(&dim(t.input_dim));
    out.extend_from_slice(&dim(t.hidden_dims.len()));
    for &h in &t.hidden_dims {
        out.extend_from_slice(&dim(h));
    }
    out.extend_from_slice(&dim(t.num_classes));
    for set in [params.layers(), params.momentum()] {
        for layer in set {
            for v in layer.weights.iter().chain(&layer.biases) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    fs::write(path, out).map_err(io_err(path))
}

struct Cursor<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::MalformedFile {
                path: self.path.to_path_buf(),
                reason: "truncated weight dump".into(),
            });
        }
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let b = self.take(n * 8)?;
        Ok(b.chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

pub fn read_params(path: &Path) -> Result<ModelParams> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let malformed = |reason: &str| Error::MalformedFile {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    let mut cur = Cursor {
        path,
        bytes: &bytes,
        pos: 0,
    };
    if cur.take(4)? != WEIGHTS_MAGIC {
        return Err(malformed("bad magic"));
    }
    if cur.u32()? != WEIGHTS_VERSION as usize {
        return Err(malformed("unsupported weight dump version"));
    }
    let seed = cur.u64()?;
    let input_dim = cur.u32()?;
    let n_hidden = cur.u32()?;
    if n_hidden > 1024 {
        return Err(malformed("implausible hidden layer count"));
    }
    let hidden_dims = (0..n_hidden)
        .map(|_| cur.u32())
        .collect::<Result<Vec<_>>>()?;
    let num_classes = cur.u32()?;
    let topology = Topology {
        input_dim,
        hidden_dims,
        num_classes,
        activation: Activation::Relu,
    };
    topology
        .validate()
        .map_err(|_| malformed("invalid topology header"))?;
    let read_set = |cur: &mut Cursor| -> Result<Vec<Dense>> {
        topology
            .layer_shapes()
            .into_iter()
            .map(|(i, o)| {
                Ok(Dense {
                    in_dim: i,
                    out_dim: o,
                    weights: cur.f64s(i * o)?,
                    biases: cur.f64s(o)?,
                })
            })
            .collect()
    };
    let layers = read_set(&mut cur)?;
    let momentum = read_set(&mut cur)?;
    if cur.pos != bytes.len() {
        return Err(malformed("trailing bytes after weight dump"));
    }
    ModelParams::from_parts(topology.clone(), seed, layers, momentum)
        .map_err(|e| invalid(e.to_string()))
}
