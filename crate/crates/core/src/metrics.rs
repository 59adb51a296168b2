//! Evaluation metrics: accuracy, Expected Calibration Error with
//! reliability-diagram bins, and precision/recall of clean detection.

use crate::error::{Error, Result};

/// One reliability-diagram bin.
#[derive(Debug, Clone, PartialEq)]
pub struct BinStat {
    pub lo: f64,
    pub hi: f64,
    pub mean_conf: f64,
    pub accuracy: f64,
    pub count: usize,
}

/// Binned calibration summary. ECE is the count-weighted mean absolute gap
/// between per-bin confidence and accuracy; empty bins contribute zero.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationReport {
    pub bins: Vec<BinStat>,
    pub ece: f64,
}

pub const DEFAULT_ECE_BINS: usize = 15;

/// Expected Calibration Error over equal-width bins on [0, 1].
pub fn ece(
    confidences: &[f64],
    predictions: &[usize],
    truths: &[usize],
    n_bins: usize,
) -> Result<CalibrationReport> {
    let n = confidences.len();
    if n == 0 {
        return Err(Error::Degenerate("ECE of an empty sample".into()));
    }
    if predictions.len() != n || truths.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{n} confidences vs {} predictions vs {} truths",
            predictions.len(),
            truths.len()
        )));
    }
    if n_bins == 0 {
        return Err(Error::Domain("need at least one bin".into()));
    }
    if confidences.iter().any(|c| !(0.0..=1.0).contains(c)) {
        return Err(Error::Domain("confidences must lie in [0, 1]".into()));
    }

    let mut conf_sum = vec![0.0f64; n_bins];
    let mut correct = vec![0usize; n_bins];
    let mut count = vec![0usize; n_bins];
    for i in 0..n {
        let b = ((confidences[i] * n_bins as f64) as usize).min(n_bins - 1);
        conf_sum[b] += confidences[i];
        count[b] += 1;
        if predictions[i] == truths[i] {
            correct[b] += 1;
        }
    }

    let mut bins = Vec::with_capacity(n_bins);
    let mut total = 0.0;
    for b in 0..n_bins {
        let lo = b as f64 / n_bins as f64;
        let hi = (b + 1) as f64 / n_bins as f64;
        let (mean_conf, accuracy) = if count[b] > 0 {
            (conf_sum[b] / count[b] as f64, correct[b] as f64 / count[b] as f64)
        } else {
            (0.0, 0.0)
        };
        if count[b] > 0 {
            total += (count[b] as f64 / n as f64) * (accuracy - mean_conf).abs();
        }
        bins.push(BinStat { lo, hi, mean_conf, accuracy, count: count[b] });
    }
    Ok(CalibrationReport { bins, ece: total })
}

/// Fraction of predictions equal to the truth.
pub fn accuracy(predictions: &[usize], truths: &[usize]) -> f64 {
    debug_assert_eq!(predictions.len(), truths.len());
    if predictions.is_empty() {
        return 0.0;
    }
    predictions
        .iter()
        .zip(truths)
        .filter(|(p, t)| p == t)
        .count() as f64
        / predictions.len() as f64
}

/// Precision/recall/F1 of clean detection. Precision is absent when nothing
/// was assigned clean; recall is absent when nothing is truly clean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartitionQuality {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

pub fn partition_quality(assigned_clean: &[bool], corrupted: &[bool]) -> PartitionQuality {
    debug_assert_eq!(assigned_clean.len(), corrupted.len());
    let mut tp = 0usize;
    let mut assigned = 0usize;
    let mut truly_clean = 0usize;
    for (a, c) in assigned_clean.iter().zip(corrupted) {
        if *a {
            assigned += 1;
            if !*c {
                tp += 1;
            }
        }
        if !*c {
            truly_clean += 1;
        }
    }
    let precision = (assigned > 0).then(|| tp as f64 / assigned as f64);
    let recall = (truly_clean > 0).then(|| tp as f64 / truly_clean as f64);
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        _ => None,
    };
    PartitionQuality { precision, recall, f1 }
}
