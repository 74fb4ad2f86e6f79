//! Confusion matrix, F1 variants, accuracy and Cohen's kappa.

use crate::records::{SleepStage, NUM_CLASSES};

use super::{MetricsError, Result};

/// K×K counts, rows = true consensus label, columns = predicted label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionMatrix {
    pub counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn support(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    pub fn predicted(&self, class: usize) -> u64 {
        self.counts.iter().map(|row| row[class]).sum()
    }

    pub fn scaled(&self, factor: u64) -> Self {
        let mut out = *self;
        out.counts.iter_mut().flatten().for_each(|c| *c *= factor);
        out
    }
}

pub fn confusion(true_labels: &[SleepStage], pred_labels: &[SleepStage]) -> Result<ConfusionMatrix> {
    let to_idx = |s: &SleepStage| {
        s.class_index()
            .ok_or_else(|| MetricsError::Validation("NC label in confusion input".into()))
    };
    let t: Vec<usize> = true_labels.iter().map(to_idx).collect::<Result<_>>()?;
    let p: Vec<usize> = pred_labels.iter().map(to_idx).collect::<Result<_>>()?;
    confusion_from_indices(&t, &p)
}

pub fn confusion_from_indices(true_labels: &[usize], pred_labels: &[usize]) -> Result<ConfusionMatrix> {
    if true_labels.len() != pred_labels.len() {
        return Err(MetricsError::Shape(format!(
            "{} true labels vs {} predictions",
            true_labels.len(),
            pred_labels.len()
        )));
    }
    let mut cm = ConfusionMatrix::default();
    for (&t, &p) in true_labels.iter().zip(pred_labels) {
        if t >= NUM_CLASSES || p >= NUM_CLASSES {
            return Err(MetricsError::Validation(format!("class index out of range: {t}/{p}")));
        }
        cm.counts[t][p] += 1;
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassificationScores {
    pub accuracy: f64,
    pub per_class_f1: [f64; NUM_CLASSES],
    pub macro_f1: f64,
    pub weighted_f1: f64,
    pub kappa: f64,
}

/// Standard scores from a confusion matrix. A class absent from both truth
/// and prediction has F1 = 0 and still counts in the macro average.
pub fn classification_scores(cm: &ConfusionMatrix) -> Result<ClassificationScores> {
    let n = cm.total();
    if n == 0 {
        return Err(MetricsError::Validation("empty confusion matrix".into()));
    }
    let nf = n as f64;
    let diag: u64 = (0..NUM_CLASSES).map(|k| cm.counts[k][k]).sum();
    let accuracy = diag as f64 / nf;

    let mut per_class_f1 = [0.0; NUM_CLASSES];
    for (k, f1) in per_class_f1.iter_mut().enumerate() {
        let tp = cm.counts[k][k];
        let denom = cm.support(k) + cm.predicted(k);
        if denom > 0 {
            *f1 = 2.0 * tp as f64 / denom as f64;
        }
    }
    let macro_f1 = per_class_f1.iter().sum::<f64>() / NUM_CLASSES as f64;
    let weighted_f1 = (0..NUM_CLASSES)
        .map(|k| cm.support(k) as f64 * per_class_f1[k])
        .sum::<f64>()
        / nf;

    let expected = (0..NUM_CLASSES)
        .map(|k| cm.support(k) as f64 * cm.predicted(k) as f64)
        .sum::<f64>()
        / (nf * nf);
    // both raters used a single identical class: agreement is perfect
    let kappa = if expected >= 1.0 {
        if diag == n {
            1.0
        } else {
            0.0
        }
    } else {
        (accuracy - expected) / (1.0 - expected)
    };

    Ok(ClassificationScores {
        accuracy,
        per_class_f1,
        macro_f1,
        weighted_f1,
        kappa,
    })
}

/// Macro-F1 of a label/prediction pair; used as the validation score.
pub fn macro_f1(true_labels: &[usize], pred_labels: &[usize]) -> Result<f64> {
    let cm = confusion_from_indices(true_labels, pred_labels)?;
    Ok(classification_scores(&cm)?.macro_f1)
}
