//! Multi-label evaluation metrics and cross-validation aggregation.

use std::fmt;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_shapes(z: ArrayView2<i8>, y: ArrayView2<i8>) -> Result<()> {
    if z.dim() != y.dim() {
        return Err(Error::Argument(format!(
            "prediction shape {:?} does not match label shape {:?}",
            z.dim(),
            y.dim()
        )));
    }
    Ok(())
}

/// Micro-averaged F1 with +1 as the positive class, pooled over every
/// (instance, label) cell. Defined as 1.0 when there are no positives at
/// all (TP = FP = FN = 0).
pub fn micro_f1(z: ArrayView2<i8>, y: ArrayView2<i8>) -> Result<f64> {
    check_shapes(z, y)?;
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    for (&p, &t) in z.iter().zip(y.iter()) {
        match (p, t) {
            (1, 1) => tp += 1,
            (1, -1) => fp += 1,
            (-1, 1) => fn_ += 1,
            _ => {}
        }
    }
    if 2 * tp + fp + fn_ == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * tp as f64 / (2 * tp + fp + fn_) as f64)
}

/// Macro-averaged F1 (per-label F1, then averaged). Not used by the main
/// reports; provided for completeness behind the same contract.
pub fn macro_f1(z: ArrayView2<i8>, y: ArrayView2<i8>) -> Result<f64> {
    check_shapes(z, y)?;
    let l = z.ncols();
    let mut total = 0.0;
    for j in 0..l {
        let zc = z.column(j);
        let yc = y.column(j);
        let mut tp = 0usize;
        let mut fp = 0usize;
        let mut fn_ = 0usize;
        for (&p, &t) in zc.iter().zip(yc.iter()) {
            match (p, t) {
                (1, 1) => tp += 1,
                (1, -1) => fp += 1,
                (-1, 1) => fn_ += 1,
                _ => {}
            }
        }
        total += if 2 * tp + fp + fn_ == 0 {
            1.0
        } else {
            2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
        };
    }
    Ok(total / l as f64)
}

/// Fraction of disagreeing cells.
pub fn hamming_loss(z: ArrayView2<i8>, y: ArrayView2<i8>) -> Result<f64> {
    check_shapes(z, y)?;
    let total = z.len();
    if total == 0 {
        return Err(Error::Argument("empty matrices".into()));
    }
    let wrong = z.iter().zip(y.iter()).filter(|(a, b)| a != b).count();
    Ok(wrong as f64 / total as f64)
}

/// Fraction of instances whose whole label vector is exactly right.
pub fn subset_accuracy(z: ArrayView2<i8>, y: ArrayView2<i8>) -> Result<f64> {
    check_shapes(z, y)?;
    let n = z.nrows();
    if n == 0 {
        return Err(Error::Argument("empty matrices".into()));
    }
    let exact = (0..n).filter(|&i| z.row(i) == y.row(i)).count();
    Ok(exact as f64 / n as f64)
}

/// Metric values for one cross-validation fold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub micro_f1: f64,
    pub hamming_loss: f64,
    pub subset_accuracy: f64,
    pub cost_average: f64,
}

/// Mean and population standard deviation over folds, displayed as
/// `mean±std` with three decimals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub std: f64,
}

impl fmt::Display for MetricSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.3}\u{b1}{:.3}", self.mean, self.std)
    }
}

fn summarize(values: &[f64]) -> MetricSummary {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    MetricSummary {
        mean,
        std: var.sqrt(),
    }
}

/// Cross-validated metric report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub micro_f1: MetricSummary,
    pub hamming_loss: MetricSummary,
    pub subset_accuracy: MetricSummary,
    pub cost_average: MetricSummary,
    pub folds: usize,
}

/// Aggregate per-fold metrics into mean and population std.
pub fn cv_aggregate(per_fold: &[FoldMetrics]) -> Result<MetricReport> {
    if per_fold.len() < 2 {
        return Err(Error::Argument(format!(
            "need at least 2 folds to aggregate, got {}",
            per_fold.len()
        )));
    }
    let collect = |f: fn(&FoldMetrics) -> f64| -> Vec<f64> { per_fold.iter().map(f).collect() };
    Ok(MetricReport {
        micro_f1: summarize(&collect(|m| m.micro_f1)),
        hamming_loss: summarize(&collect(|m| m.hamming_loss)),
        subset_accuracy: summarize(&collect(|m| m.subset_accuracy)),
        cost_average: summarize(&collect(|m| m.cost_average)),
        folds: per_fold.len(),
    })
}
