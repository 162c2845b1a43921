//! Otsu split of per-sample agreement values `P_A(ȳ|x)` and the four-bucket
//! α assignment derived from it.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Added to the within-class variance so that perfectly separated clusters
/// keep a finite objective.
pub const OTSU_EPS: f64 = 1e-12;

/// Grid points whose objective is within this relative distance of the best
/// one count as tied.
pub const TIE_RTOL: f64 = 1e-9;

pub const DEFAULT_STEP: f64 = 0.001;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub n: usize,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OtsuSplit {
    pub s: f64,
    pub mu1: f64,
    pub mu2: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub n1: usize,
    pub n2: usize,
    pub q: f64,
}

fn stats(values: &[f64]) -> ClassStats {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    ClassStats {
        n,
        mean,
        std: var.sqrt(),
    }
}

fn objective(low: ClassStats, high: ClassStats, mean: f64) -> f64 {
    let (n1, n2) = (low.n as f64, high.n as f64);
    let between = n1 * (low.mean - mean).powi(2) + n2 * (high.mean - mean).powi(2);
    let within = n1 * low.std.powi(2) + n2 * high.std.powi(2);
    between / (within + OTSU_EPS)
}

/// Between-class over within-class variance for the split `{v ≤ s}`,
/// `{v > s}`.
pub fn otsu_objective(values: &[f64], s: f64) -> Result<f64> {
    let (low, high): (Vec<f64>, Vec<f64>) = values.iter().partition(|&&v| v <= s);
    if low.is_empty() || high.is_empty() {
        return Err(Error::RejectedThreshold { threshold: s });
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    Ok(objective(stats(&low), stats(&high), mean))
}

/// Exhaustive search of the threshold grid `{step, 2·step, …}` below 1.
///
/// Grid points that leave a class empty are skipped. Among the grid points
/// tied for the best objective, the longest contiguous run wins (the lowest
/// one if several are equally long) and its midpoint, rounded half up to the
/// grid, is returned.
pub fn otsu_split(values: &[f64], step: f64) -> Result<OtsuSplit> {
    if !(step > 0.0 && step < 0.5) {
        return Err(invalid(format!(
            "otsu step must lie in (0, 0.5), got {step}"
        )));
    }
    if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(invalid(format!("otsu input {v} outside [0, 1]")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (lo, hi) = match (sorted.first(), sorted.last()) {
        (Some(&lo), Some(&hi)) if lo < hi => (lo, hi),
        _ => {
            return Err(Error::DegenerateDistribution(format!(
                "need at least 2 distinct values, got {} values",
                values.len()
            )))
        }
    };
    let mean = sorted.iter().sum::<f64>() / sorted.len() as f64;

    let grid = grid_len(step);
    // Q per grid index, None where one class would be empty. Consecutive grid
    // points with the same cut share one evaluation.
    let mut q_at = vec![None; grid + 1];
    let mut cached: Option<(usize, f64)> = None;
    for (j, slot) in q_at.iter_mut().enumerate().skip(1) {
        let s = j as f64 * step;
        let cut = sorted.partition_point(|&v| v <= s);
        if cut == 0 || cut == sorted.len() {
            continue;
        }
        let q = match cached {
            Some((c, q)) if c == cut => q,
            _ => {
                let q = objective(stats(&sorted[..cut]), stats(&sorted[cut..]), mean);
                cached = Some((cut, q));
                q
            }
        };
        *slot = Some(q);
    }

    let best = q_at
        .iter()
        .flatten()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if !best.is_finite() {
        return Err(Error::DegenerateDistribution(format!(
            "no grid threshold with step {step} separates [{lo}, {hi}]"
        )));
    }
    let tied = |q: Option<f64>| q.is_some_and(|q| q >= best - TIE_RTOL * best.abs());

    let mut run: Option<(usize, usize)> = None;
    let mut j = 1;
    while j <= grid {
        if !tied(q_at[j]) {
            j += 1;
            continue;
        }
        let start = j;
        while j < grid && tied(q_at[j + 1]) {
            j += 1;
        }
        if run.map_or(true, |(a, b)| j - start > b - a) {
            run = Some((start, j));
        }
        j += 1;
    }
    let (a, b) = run.expect("best objective is attained on the grid");
    let chosen = (a + b + 1) / 2;
    let s = chosen as f64 * step;
    let cut = sorted.partition_point(|&v| v <= s);
    let low = stats(&sorted[..cut]);
    let high = stats(&sorted[cut..]);
    Ok(OtsuSplit {
        s,
        mu1: low.mean,
        mu2: high.mean,
        sigma1: low.std,
        sigma2: high.std,
        n1: low.n,
        n2: high.n,
        q: q_at[chosen].expect("chosen grid point is admissible"),
    })
}

/// Largest `j` with `j·step < 1`.
pub fn grid_len(step: f64) -> usize {
    let mut j = (1.0 / step).floor() as usize;
    while j > 0 && j as f64 * step >= 1.0 {
        j -= 1;
    }
    j
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlphaSchedule {
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    pub alpha4: f64,
}

impl Default for AlphaSchedule {
    fn default() -> Self {
        Self {
            alpha1: 0.3,
            alpha2: 0.45,
            alpha3: 0.55,
            alpha4: 0.7,
        }
    }
}

impl AlphaSchedule {
    pub fn new(alpha1: f64, alpha2: f64, alpha3: f64, alpha4: f64) -> Result<Self> {
        let schedule = Self {
            alpha1,
            alpha2,
            alpha3,
            alpha4,
        };
        schedule.validate()?;
        Ok(schedule)
    }

    pub fn validate(&self) -> Result<()> {
        let a = self.as_array();
        if a.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(invalid(format!("alpha values {a:?} must lie in [0, 1]")));
        }
        if !(a[0] < a[1] && a[1] < a[2] && a[2] < a[3]) {
            return Err(invalid(format!(
                "alpha values {a:?} must be strictly increasing"
            )));
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.alpha1, self.alpha2, self.alpha3, self.alpha4]
    }

    /// α for a bucket in `1..=4`.
    pub fn alpha(&self, bucket: u8) -> f64 {
        self.as_array()[usize::from(bucket) - 1]
    }
}

/// Bucket `1` (most trusted) to `4` for a single agreement value.
pub fn bucket_of(value: f64, split: &OtsuSplit) -> u8 {
    if value >= split.mu2 {
        1
    } else if value >= split.s {
        2
    } else if value >= split.mu1 {
        3
    } else {
        4
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BucketAssignment {
    pub buckets: Vec<u8>,
    pub alphas: Vec<f64>,
}

impl BucketAssignment {
    /// Number of samples in buckets 1 to 4.
    pub fn sizes(&self) -> [usize; 4] {
        let mut sizes = [0; 4];
        for &b in &self.buckets {
            sizes[usize::from(b) - 1] += 1;
        }
        sizes
    }
}

pub fn assign_buckets(
    agreement_at_label: &[f64],
    split: &OtsuSplit,
    schedule: &AlphaSchedule,
) -> BucketAssignment {
    let buckets: Vec<u8> = agreement_at_label
        .iter()
        .map(|&v| bucket_of(v, split))
        .collect();
    let alphas = buckets.iter().map(|&b| schedule.alpha(b)).collect();
    BucketAssignment { buckets, alphas }
}
