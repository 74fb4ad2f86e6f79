//! Evaluation metrics: classification scores, calibration, hypnodensity
//! similarity (ACS), per-subject aggregation and a paired significance test.

mod calibration;
mod classification;
mod stats;

pub use calibration::{ece, mean_confidence, CalibrationBin, CalibrationBins, DEFAULT_BINS};
pub use classification::{
    classification_scores, confusion, confusion_from_indices, macro_f1, ClassificationScores, ConfusionMatrix,
};
pub use stats::{paired_test, EXACT_MAX_N};

pub(crate) use calibration::row_argmax;

use ndarray::{Array2, ArrayView1};
use thiserror::Error;

use crate::records::NUM_CLASSES;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("invalid metric input: {0}")]
    Validation(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("internal error: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, MetricsError>;

fn cosine(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Option<f64> {
    let dot = a.dot(&b);
    let na = a.dot(&a).sqrt();
    let nb = b.dot(&b).sqrt();
    (na > 0.0 && nb > 0.0).then(|| dot / (na * nb))
}

/// Averaged cosine similarity between two hypnodensity matrices, one value
/// per epoch averaged over the night.
pub fn acs(soft_consensus: &Array2<f64>, probs: &Array2<f64>) -> Result<f64> {
    if soft_consensus.dim() != probs.dim() {
        return Err(MetricsError::Shape(format!(
            "soft-consensus {:?} vs probabilities {:?}",
            soft_consensus.dim(),
            probs.dim()
        )));
    }
    if probs.nrows() == 0 {
        return Err(MetricsError::Validation("ACS over zero epochs".into()));
    }
    let mut sum = 0.0;
    for (t, (a, b)) in soft_consensus.rows().into_iter().zip(probs.rows()).enumerate() {
        sum += cosine(a, b).ok_or_else(|| MetricsError::Internal(format!("zero-norm row at epoch {t}")))?;
    }
    Ok(sum / probs.nrows() as f64)
}

/// All metrics for one subject.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectMetrics {
    pub subject_id: String,
    pub accuracy: f64,
    pub per_class_f1: [f64; NUM_CLASSES],
    pub macro_f1: f64,
    pub weighted_f1: f64,
    pub kappa: f64,
    pub ece: f64,
    pub conf: f64,
    pub acs: f64,
}

/// Scores a subject's predicted probabilities against its consensus labels
/// and soft-consensus matrix.
pub fn evaluate_subject(
    subject_id: &str,
    consensus_labels: &[usize],
    soft_consensus: &Array2<f64>,
    probs: &Array2<f64>,
    n_bins: usize,
) -> Result<SubjectMetrics> {
    let pred: Vec<usize> = probs.rows().into_iter().map(|r| row_argmax(r).0).collect();
    let cm = confusion_from_indices(consensus_labels, &pred)?;
    let scores = classification_scores(&cm)?;
    let (ece_value, _) = ece(probs, consensus_labels, n_bins)?;
    Ok(SubjectMetrics {
        subject_id: subject_id.to_string(),
        accuracy: scores.accuracy,
        per_class_f1: scores.per_class_f1,
        macro_f1: scores.macro_f1,
        weighted_f1: scores.weighted_f1,
        kappa: scores.kappa,
        ece: ece_value,
        conf: mean_confidence(probs),
        acs: acs(soft_consensus, probs)?,
    })
}

/// Metric columns in report order.
pub const METRIC_NAMES: [&str; 13] = [
    "acc", "mf1", "kappa", "f1", "f1_w", "f1_n1", "f1_n2", "f1_n3", "f1_r", "ece", "conf", "acs", "acs_std",
];

impl SubjectMetrics {
    /// The twelve per-subject values in [`METRIC_NAMES`] order (without `acs_std`).
    pub fn values(&self) -> [f64; 12] {
        let f = &self.per_class_f1;
        [
            self.accuracy,
            self.macro_f1,
            self.kappa,
            self.weighted_f1,
            f[0],
            f[1],
            f[2],
            f[3],
            f[4],
            self.ece,
            self.conf,
            self.acs,
        ]
    }
}

/// Mean and population standard deviation of every metric across subjects.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub per_subject: Vec<SubjectMetrics>,
    pub mean: [f64; 12],
    pub std: [f64; 12],
}

impl MetricsReport {
    pub fn acs_mean(&self) -> f64 {
        self.mean[11]
    }

    pub fn acs_std(&self) -> f64 {
        self.std[11]
    }

    pub fn ece_mean(&self) -> f64 {
        self.mean[9]
    }

    pub fn macro_f1_mean(&self) -> f64 {
        self.mean[1]
    }
}

pub fn aggregate(per_subject: Vec<SubjectMetrics>) -> Result<MetricsReport> {
    if per_subject.is_empty() {
        return Err(MetricsError::Validation("aggregate over zero subjects".into()));
    }
    let n = per_subject.len() as f64;
    let mut mean = [0.0; 12];
    for s in &per_subject {
        for (m, v) in mean.iter_mut().zip(s.values()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut std = [0.0; 12];
    for s in &per_subject {
        for ((sd, v), m) in std.iter_mut().zip(s.values()).zip(mean) {
            *sd += (v - m) * (v - m);
        }
    }
    std.iter_mut().for_each(|sd| *sd = (*sd / n).sqrt());
    Ok(MetricsReport { per_subject, mean, std })
}
