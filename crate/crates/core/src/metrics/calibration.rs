//! Expected calibration error and mean confidence.

use ndarray::{Array2, ArrayView1};

use super::{MetricsError, Result};

/// Default number of equal-width confidence bins.
pub const DEFAULT_BINS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub accuracy: f64,
    pub confidence: f64,
}

/// Per-bin statistics over the intervals `((m-1)/M, m/M]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationBins {
    pub bins: Vec<CalibrationBin>,
}

impl CalibrationBins {
    pub fn total(&self) -> usize {
        self.bins.iter().map(|b| b.count).sum()
    }
}

/// Index of the bin `((m-1)/M, m/M]` holding `p`, with the boundaries
/// computed as `m / M` so edges land in the lower bin.
fn bin_index(p: f64, n_bins: usize) -> usize {
    let m = n_bins as f64;
    let mut idx = ((p * m).ceil() as isize - 1).clamp(0, n_bins as isize - 1) as usize;
    while idx > 0 && p <= idx as f64 / m {
        idx -= 1;
    }
    while idx + 1 < n_bins && p > (idx + 1) as f64 / m {
        idx += 1;
    }
    idx
}

pub(crate) fn row_argmax(row: ArrayView1<f64>) -> (usize, f64) {
    let mut best = (0, row[0]);
    for (k, &v) in row.iter().enumerate().skip(1) {
        if v > best.1 {
            best = (k, v);
        }
    }
    best
}

/// Expected calibration error of max-probability predictions against
/// `true_labels`, with `n_bins` equal-width bins.
pub fn ece(probs: &Array2<f64>, true_labels: &[usize], n_bins: usize) -> Result<(f64, CalibrationBins)> {
    if n_bins < 1 {
        return Err(MetricsError::Validation("ECE needs at least one bin".into()));
    }
    if probs.nrows() != true_labels.len() {
        return Err(MetricsError::Shape(format!(
            "{} probability rows vs {} labels",
            probs.nrows(),
            true_labels.len()
        )));
    }
    let mut count = vec![0usize; n_bins];
    let mut correct = vec![0usize; n_bins];
    let mut conf_sum = vec![0.0; n_bins];
    for (row, &label) in probs.rows().into_iter().zip(true_labels) {
        let (pred, conf) = row_argmax(row);
        let b = bin_index(conf, n_bins);
        count[b] += 1;
        conf_sum[b] += conf;
        if pred == label {
            correct[b] += 1;
        }
    }
    let n = probs.nrows();
    let mut value = 0.0;
    let bins = (0..n_bins)
        .map(|b| {
            let (accuracy, confidence) = if count[b] > 0 {
                (correct[b] as f64 / count[b] as f64, conf_sum[b] / count[b] as f64)
            } else {
                (0.0, 0.0)
            };
            if count[b] > 0 {
                value += count[b] as f64 / n as f64 * (accuracy - confidence).abs();
            }
            CalibrationBin {
                lower: b as f64 / n_bins as f64,
                upper: (b + 1) as f64 / n_bins as f64,
                count: count[b],
                accuracy,
                confidence,
            }
        })
        .collect();
    Ok((value, CalibrationBins { bins }))
}

/// Mean over rows of the maximum predicted probability.
pub fn mean_confidence(probs: &Array2<f64>) -> f64 {
    if probs.nrows() == 0 {
        return 0.0;
    }
    probs.rows().into_iter().map(|r| row_argmax(r).1).sum::<f64>() / probs.nrows() as f64
}
