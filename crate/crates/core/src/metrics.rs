//! Accuracy and proximity-detection metrics for distance estimates.

use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::measurements::DistanceEstimateMatrix;
use crate::scalar::Real;

/// Per-pair errors over the upper triangle with their summaries.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorStats {
    /// `|d_hat - d|` in meters, one per pair in `(i < j)` row-major order.
    pub absolute: Vec<f64>,
    /// `100 * |d_hat - d| / d`.
    pub percent: Vec<f64>,
    pub mean_abs: f64,
    pub max_abs: f64,
    pub mean_pct: f64,
    pub max_pct: f64,
}

fn check_dims<T: Real>(truth: &DistanceEstimateMatrix<T>, estimate: &DistanceEstimateMatrix<T>) -> Result<()> {
    if truth.n() != estimate.n() {
        return Err(Error::DimensionMismatch {
            expected: truth.n(),
            got: estimate.n(),
        });
    }
    Ok(())
}

pub fn error_stats<T: Real>(truth: &DistanceEstimateMatrix<T>, estimate: &DistanceEstimateMatrix<T>) -> Result<ErrorStats> {
    check_dims(truth, estimate)?;
    for (i, j, d) in truth.pairs() {
        if !(d > T::zero()) {
            return Err(Error::InvalidMeasurement {
                i,
                j,
                reason: "true distance must be positive for percent error".into(),
            });
        }
    }
    error_stats_from_pairs(truth.pairs().map(|(i, j, d)| (d.f64(), estimate.get(i, j).f64())))
}

/// Same summary over explicit `(true, estimated)` distance pairs.
pub fn error_stats_from_pairs(pairs: impl IntoIterator<Item = (f64, f64)>) -> Result<ErrorStats> {
    let mut absolute = Vec::new();
    let mut percent = Vec::new();
    for (d, est) in pairs {
        if !(d > 0.0) {
            return Err(Error::NonPositiveDistance(d));
        }
        let e = (est - d).abs();
        absolute.push(e);
        percent.push(100.0 * e / d);
    }
    if absolute.is_empty() {
        return Err(Error::InvalidArgument("error statistics need at least one pair".into()));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let max = |v: &[f64]| v.iter().copied().fold(0.0, f64::max);
    Ok(ErrorStats {
        mean_abs: mean(&absolute),
        max_abs: max(&absolute),
        mean_pct: mean(&percent),
        max_pct: max(&percent),
        absolute,
        percent,
    })
}

/// Counts for the "within threshold" classification of pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Confusion {
    pub tp: usize,
    pub fn_: usize,
    pub fp: usize,
    pub tn: usize,
}

impl Confusion {
    /// `None` when there are no true positives to detect.
    pub fn tpr(&self) -> Option<f64> {
        let p = self.tp + self.fn_;
        (p > 0).then(|| self.tp as f64 / p as f64)
    }

    /// `None` when there are no true negatives.
    pub fn fpr(&self) -> Option<f64> {
        let n = self.fp + self.tn;
        (n > 0).then(|| self.fp as f64 / n as f64)
    }
}

/// Classifies every pair as close when its distance is at most `threshold_m`.
pub fn proximity_confusion<T: Real>(
    truth: &DistanceEstimateMatrix<T>,
    estimate: &DistanceEstimateMatrix<T>,
    threshold_m: T,
) -> Result<Confusion> {
    check_dims(truth, estimate)?;
    if !(threshold_m > T::zero()) || !threshold_m.is_finite() {
        return Err(Error::InvalidArgument("proximity threshold must be positive".into()));
    }
    let mut c = Confusion::default();
    for (i, j, d) in truth.pairs() {
        match (d <= threshold_m, estimate.get(i, j) <= threshold_m) {
            (true, true) => c.tp += 1,
            (true, false) => c.fn_ += 1,
            (false, true) => c.fp += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

/// Gaussian kernel density estimate evaluated on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub enum ErrorDensity {
    Grid { x: Vec<f64>, pdf: Vec<f64>, cdf: Vec<f64>, bandwidth: f64 },
    /// Every sample had the same value.
    PointMass(f64),
}

pub const DENSITY_GRID_POINTS: usize = 512;

fn normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + libm::erf(z / std::f64::consts::SQRT_2))
}

/// KDE with Scott's-rule bandwidth unless one is given.
///
/// The grid spans `[min(0, min sample), 1.1 * max sample]`. The CDF starts
/// at the kernel mass left of the grid and accumulates the PDF by the
/// trapezoid rule.
pub fn error_density(samples: &[f64], bandwidth: Option<f64>) -> Result<ErrorDensity> {
    if samples.len() < 2 {
        return Err(Error::InvalidArgument("density estimation needs at least two samples".into()));
    }
    if samples.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("error sample"));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let sd = (samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    if sd == 0.0 {
        return Ok(ErrorDensity::PointMass(samples[0]));
    }
    let h = match bandwidth {
        Some(b) if b > 0.0 && b.is_finite() => b,
        Some(_) => return Err(Error::InvalidArgument("bandwidth must be positive".into())),
        None => sd * n.powf(-0.2),
    };
    let lo = samples.iter().copied().fold(0.0, f64::min);
    let hi_sample = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let hi = if hi_sample > 0.0 { hi_sample * 1.1 } else { lo + 1.0 };
    let step = (hi - lo) / (DENSITY_GRID_POINTS - 1) as f64;
    let norm = 1.0 / (n * h * (2.0 * std::f64::consts::PI).sqrt());
    let x: Vec<f64> = (0..DENSITY_GRID_POINTS).map(|k| lo + step * k as f64).collect();
    let pdf: Vec<f64> = x
        .iter()
        .map(|&g| norm * samples.iter().map(|s| (-0.5 * ((g - s) / h).powi(2)).exp()).sum::<f64>())
        .collect();
    let mut cdf = Vec::with_capacity(x.len());
    let mut acc = samples.iter().map(|s| normal_cdf((lo - s) / h)).sum::<f64>() / n;
    cdf.push(acc);
    for k in 1..x.len() {
        acc += 0.5 * (pdf[k - 1] + pdf[k]) * step;
        cdf.push(acc);
    }
    Ok(ErrorDensity::Grid { x, pdf, cdf, bandwidth: h })
}

/// Accumulated wall-clock time over repeated calls.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Stopwatch {
    total: Duration,
    calls: usize,
}

impl Stopwatch {
    pub fn time<R>(&mut self, f: impl FnOnce() -> R) -> R {
        let start = Instant::now();
        let out = f();
        self.add(start.elapsed());
        out
    }

    pub fn add(&mut self, d: Duration) {
        self.total += d;
        self.calls += 1;
    }

    pub fn total_seconds(&self) -> f64 {
        self.total.as_secs_f64()
    }

    pub fn calls(&self) -> usize {
        self.calls
    }
}

/// Summary of one estimator on one scenario (or aggregated over repeats).
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorMetrics {
    pub estimator: String,
    pub mean_abs: f64,
    pub max_abs: f64,
    pub mean_pct: f64,
    pub max_pct: f64,
    pub tpr: Option<f64>,
    pub fpr: Option<f64>,
    pub runtime_s: f64,
    /// Per-pair absolute errors.
    pub samples: Vec<f64>,
    /// Per-pair percent errors, aligned with `samples`.
    pub percent_samples: Vec<f64>,
}

impl EstimatorMetrics {
    pub fn evaluate<T: Real>(
        estimator: &str,
        truth: &DistanceEstimateMatrix<T>,
        estimate: &DistanceEstimateMatrix<T>,
        threshold_m: T,
        runtime_s: f64,
    ) -> Result<Self> {
        let stats = error_stats(truth, estimate)?;
        let conf = proximity_confusion(truth, estimate, threshold_m)?;
        Ok(Self {
            estimator: estimator.to_string(),
            mean_abs: stats.mean_abs,
            max_abs: stats.max_abs,
            mean_pct: stats.mean_pct,
            max_pct: stats.max_pct,
            tpr: conf.tpr(),
            fpr: conf.fpr(),
            runtime_s,
            samples: stats.absolute,
            percent_samples: stats.percent,
        })
    }

    /// Mean of means, max of maxes, mean of the defined rates.
    pub fn aggregate(estimator: &str, runs: &[EstimatorMetrics]) -> Option<Self> {
        if runs.is_empty() {
            return None;
        }
        let k = runs.len() as f64;
        let mean_rate = |f: fn(&EstimatorMetrics) -> Option<f64>| {
            let v: Vec<f64> = runs.iter().filter_map(f).collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        };
        Some(Self {
            estimator: estimator.to_string(),
            mean_abs: runs.iter().map(|r| r.mean_abs).sum::<f64>() / k,
            max_abs: runs.iter().map(|r| r.max_abs).fold(0.0, f64::max),
            mean_pct: runs.iter().map(|r| r.mean_pct).sum::<f64>() / k,
            max_pct: runs.iter().map(|r| r.max_pct).fold(0.0, f64::max),
            tpr: mean_rate(|r| r.tpr),
            fpr: mean_rate(|r| r.fpr),
            runtime_s: runs.iter().map(|r| r.runtime_s).sum(),
            samples: runs.iter().flat_map(|r| r.samples.iter().copied()).collect(),
            percent_samples: runs.iter().flat_map(|r| r.percent_samples.iter().copied()).collect(),
        })
    }
}

/// Rows for every estimator of one experiment, in registry order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsReport {
    pub rows: Vec<EstimatorMetrics>,
    /// Estimators that failed on every repeat, with the last error.
    pub failures: Vec<(String, String)>,
}

impl MetricsReport {
    pub fn row(&self, estimator: &str) -> Option<&EstimatorMetrics> {
        self.rows.iter().find(|r| r.estimator == estimator)
    }
}
